"""MLP classifier f_theta: retrain-from-scratch training, predictive distributions, MC dropout."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint, mlp


@dataclass(frozen=True)
class ClassifierConfig:
    arch: str = "mlp-64x64"
    epochs: int = 200
    epochs_multiplier: int = 1
    batch: int = 64
    lr: float = 1e-3
    dropout: float = 0.1


@dataclass
class ClassifierModel:
    arch: str
    params: dict[str, ad.Tensor]
    n_classes: int
    dropout_rate: float = 0.1
    loss_start: float = float("nan")
    loss_end: float = float("nan")

    @property
    def hidden(self) -> list[int]:
        return parse_arch(self.arch)

    @property
    def input_dim(self) -> int:
        return self.params["W0"].shape[0]


def parse_arch(arch: str) -> list[int]:
    m = re.fullmatch(r"mlp-(\d+(?:x\d+)*)", arch)
    if not m:
        raise ValueError(f"unknown architecture {arch!r} (expected e.g. 'mlp-64x64')")
    return [int(w) for w in m.group(1).split("x")]


def init_classifier(arch: str, input_dim: int, n_classes: int, seed, dropout: float = 0.1) -> ClassifierModel:
    sizes = [input_dim, *parse_arch(arch), n_classes]
    params = mlp.init_mlp(sizes, np.random.default_rng([*np.atleast_1d(seed).tolist(), 0]))
    return ClassifierModel(arch, params, n_classes, dropout)


def dropout_masks(model: ClassifierModel, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    keep = 1.0 - model.dropout_rate
    return [(rng.random((n, w)) < keep).astype(np.float64) for w in model.hidden]


def logits(model: ClassifierModel, x, masks=None) -> ad.Tensor:
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(np.atleast_2d(x))
    out, _ = mlp.forward(model.params, x, masks=masks, rate=model.dropout_rate)
    return out


def _full_loss(model, xs, ys) -> float:
    return float(ad.cross_entropy(logits(model, xs), ys).item())


def train(model_spec: str | ClassifierConfig, xs: np.ndarray, ys: np.ndarray, n_classes: int, seed,
          config: ClassifierConfig | None = None) -> ClassifierModel:
    """Fresh seeded init, then Adam on cross-entropy over ``config.epochs * multiplier`` passes."""
    config = config or (model_spec if isinstance(model_spec, ClassifierConfig) else ClassifierConfig())
    arch = model_spec.arch if isinstance(model_spec, ClassifierConfig) else model_spec
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if len(xs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if ys.min() < 0 or ys.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    seed = np.atleast_1d(seed).tolist()
    model = init_classifier(arch, xs.shape[1], n_classes, seed, config.dropout)
    order_rng = np.random.default_rng([*seed, 1])
    mask_rng = np.random.default_rng([*seed, 2])
    model.loss_start = _full_loss(model, xs, ys)

    opt = ad.Adam(lr=config.lr)
    mlp.set_trainable(model.params, True)
    n = len(xs)
    use_dropout = model.dropout_rate > 0
    for epoch in range(config.epochs * config.epochs_multiplier):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            masks = dropout_masks(model, len(idx), mask_rng) if use_dropout else None
            with ad.Tape() as tape:
                loss = ad.cross_entropy(logits(model, xs[idx], masks), ys[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"classifier loss became non-finite at epoch {epoch}")
            grads = ad.backward(tape, loss)
            opt.step(model.params, {k: grads[p.id] for k, p in model.params.items()})
    mlp.set_trainable(model.params, False)
    model.loss_end = _full_loss(model, xs, ys)
    return model


def predict_proba(model: ClassifierModel, xs) -> np.ndarray:
    return ad.softmax(logits(model, xs)).data


def predict(model: ClassifierModel, xs) -> np.ndarray:
    return np.argmax(predict_proba(model, xs), axis=1)


def accuracy(model: ClassifierModel, xs, ys) -> float:
    return float(np.mean(predict(model, xs) == np.asarray(ys)))


def mc_masks(model: ClassifierModel, n: int, passes: int, seed) -> list[list[np.ndarray]]:
    if model.dropout_rate <= 0:
        raise ValueError("MC acquisition requires dropout")
    if passes < 2:
        raise ValueError("MC acquisition needs at least 2 passes")
    seed = np.atleast_1d(seed).tolist()
    return [dropout_masks(model, n, np.random.default_rng([*seed, p])) for p in range(passes)]


def mc_predict(model: ClassifierModel, xs, passes: int, seed) -> np.ndarray:
    """(passes, n, C) distributions with per-pass seeded dropout masks."""
    xs = np.atleast_2d(xs)
    masks = mc_masks(model, len(xs), passes, seed)
    return np.stack([ad.softmax(logits(model, xs, m)).data for m in masks])


def features(model: ClassifierModel, xs) -> np.ndarray:
    _, h = mlp.forward(model.params, ad.Tensor(np.atleast_2d(xs)))
    return h.data


def save_classifier(model: ClassifierModel, path) -> None:
    arrays = mlp.to_arrays(model.params, "net.")
    arrays["meta.hidden"] = np.array(model.hidden, dtype=np.float64)
    arrays["meta.n_classes"] = np.array(float(model.n_classes))
    arrays["meta.dropout"] = np.array(model.dropout_rate)
    checkpoint.save(path, arrays)


def load_classifier(path) -> ClassifierModel:
    arrays = checkpoint.load(path)
    arch = "mlp-" + "x".join(str(int(w)) for w in arrays["meta.hidden"])
    return ClassifierModel(arch, mlp.from_arrays(arrays, "net."), int(arrays["meta.n_classes"]),
                           float(arrays["meta.dropout"]))
