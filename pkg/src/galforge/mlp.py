"""Small fully-connected nets shared by the classifier and the noise predictor."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def init_mlp(sizes: list[int], rng: np.random.Generator, zero_last: bool = False) -> dict[str, ad.Tensor]:
    """Glorot-uniform weights, zero biases. Parameter names are W0, b0, W1, ..."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if zero_last and i == len(sizes) - 2:
            w = np.zeros_like(w)
        params[f"W{i}"] = ad.Tensor(w)
        params[f"b{i}"] = ad.Tensor(np.zeros(fan_out))
    return params


def set_trainable(params: dict[str, ad.Tensor], flag: bool) -> None:
    for p in params.values():
        p.requires_grad = flag


def n_layers(params: dict[str, ad.Tensor]) -> int:
    return sum(1 for k in params if k.startswith("W"))


def forward(params, x, activation=ad.tanh, masks=None, rate: float = 0.0):
    """Returns (output, penultimate activations).

    ``masks`` is an optional list with one 0/1 array per hidden layer; when
    given, inverted dropout is applied after each hidden activation.
    """
    h = x
    depth = n_layers(params)
    for i in range(depth - 1):
        h = activation(ad.add(ad.matmul(h, params[f"W{i}"]), params[f"b{i}"]))
        if masks is not None:
            h = ad.dropout_mask_apply(h, masks[i], rate)
    last = depth - 1
    out = ad.add(ad.matmul(h, params[f"W{last}"]), params[f"b{last}"])
    return out, h


def to_arrays(params: dict[str, ad.Tensor], prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.data for k, v in params.items()}


def from_arrays(arrays: dict[str, np.ndarray], prefix: str = "") -> dict[str, ad.Tensor]:
    out = {}
    for k, v in arrays.items():
        if k.startswith(prefix):
            out[k[len(prefix):]] = ad.Tensor(v)
    # keep W0, b0, W1, ... order
    return dict(sorted(out.items(), key=lambda kv: (int(kv[0][1:]), kv[0][0] != "W")))
