"""Dense f64 tensors with tape-based reverse-mode differentiation.

Ops record onto the innermost active :class:`Tape` whenever one of their
inputs requires a gradient.  Outside a tape they are plain numpy calls, which
is what the untaped denoising steps of the sampler rely on.

Broadcasting is limited to adding/subtracting a rank-1 bias across the rows
of a rank-2 tensor.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # sugar over the primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Op:
    name: str
    inputs: list[Tensor]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    forward: Callable[..., np.ndarray]


@dataclass
class Tape:
    """Ordered record of primitive ops; use as a context manager."""

    ops: list[Op] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.ops)

    def replay(self) -> bool:
        """Re-run every recorded forward on its recorded inputs; True if all bit-identical."""
        for op in self.ops:
            again = op.forward(*[t.data for t in op.inputs])
            if again.shape != op.output.data.shape or not np.array_equal(again, op.output.data):
                return False
        return True


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _record(name, inputs, forward, vjp_factory) -> Tensor:
    arrays = [t.data for t in inputs]
    value = forward(*arrays)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = needs
    out.id = next(_ids)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.ops.append(Op(name, list(inputs), out, vjp_factory(arrays, value), forward))
    return out


def _shape_error(op: str, *tensors: Tensor) -> ValueError:
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ValueError(f"{op}: incompatible shapes {shapes}")


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)

    def vjp(arrays, _):
        x, y = arrays
        return lambda g: (g @ y.T, x.T @ g)

    return _record("matmul", [a, b], np.matmul, vjp)


def _check_binary(op: str, a: Tensor, b: Tensor) -> bool:
    """Returns True when b is a row-broadcast bias."""
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    raise _shape_error(op, a, b)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    bias = _check_binary("add", a, b)

    def vjp(arrays, _):
        if bias:
            return lambda g: (g, g.sum(axis=0))
        return lambda g: (g, g)

    return _record("add", [a, b], np.add, vjp)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    bias = _check_binary("sub", a, b)

    def vjp(arrays, _):
        if bias:
            return lambda g: (g, -g.sum(axis=0))
        return lambda g: (g, -g)

    return _record("sub", [a, b], np.subtract, vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)

    def vjp(arrays, _):
        x, y = arrays
        return lambda g: (g * y, g * x)

    return _record("mul", [a, b], np.multiply, vjp)


def scale(x, factor: float, shift: float = 0.0) -> Tensor:
    """factor * x + shift with constant factor and shift."""
    x = _wrap(x)
    factor, shift = float(factor), float(shift)

    def fwd(v):
        return v * factor + shift

    return _record("scale", [x], fwd, lambda arrays, _: (lambda g: (g * factor,)))


def relu(x) -> Tensor:
    x = _wrap(x)

    def vjp(arrays, _):
        (v,) = arrays
        return lambda g: (g * (v > 0),)

    return _record("relu", [x], lambda v: np.maximum(v, 0.0), vjp)


def tanh(x) -> Tensor:
    x = _wrap(x)

    def vjp(_, out):
        return lambda g: (g * (1.0 - out * out),)

    return _record("tanh", [x], np.tanh, vjp)


def sqrt(x) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0."""
    x = _wrap(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt of negative value")

    def vjp(_, out):
        safe = np.where(out > 0, out, 1.0)
        return lambda g: (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return _record("sqrt", [x], np.sqrt, vjp)


def log(x) -> Tensor:
    x = _wrap(x)
    if np.any(~(x.data > 0)):
        raise ValueError(f"log of non-positive value (min={np.min(x.data)!r})")

    def vjp(arrays, _):
        (v,) = arrays
        return lambda g: (g / v,)

    return _record("log", [x], np.log, vjp)


def _softmax(v):
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = _wrap(x)

    def vjp(_, p):
        return lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record("softmax", [x], _softmax, vjp)


def _log_softmax(v):
    z = v - v.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax(x) -> Tensor:
    x = _wrap(x)

    def vjp(_, lp):
        p = np.exp(lp)
        return lambda g: (g - p * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", [x], _log_softmax, vjp)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = _wrap(x)

    def fwd(v):
        return np.asarray(v.sum(axis=axis), dtype=np.float64)

    def vjp(arrays, _):
        shape = arrays[0].shape
        if axis is None:
            return lambda g: (np.broadcast_to(g, shape).copy(),)
        return lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", [x], fwd, vjp)


def mean(x, axis: int | None = None) -> Tensor:
    x = _wrap(x)
    n = x.data.size if axis is None else x.shape[axis]

    def fwd(v):
        return np.asarray(v.mean(axis=axis), dtype=np.float64)

    def vjp(arrays, _):
        shape = arrays[0].shape
        if axis is None:
            return lambda g: (np.broadcast_to(g / n, shape).copy(),)
        return lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return _record("mean", [x], fwd, vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise _shape_error("concat", *tensors)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fwd(*vs):
        return np.concatenate(vs, axis=ax)

    def vjp(arrays, _):
        return lambda g: tuple(np.split(g, cuts, axis=ax))

    return _record("concat", tensors, fwd, vjp)


def slice(x, index) -> Tensor:  # noqa: A001
    """x[index]; index may be basic slices or integer arrays (gather)."""
    x = _wrap(x)

    def fwd(v):
        return np.array(v[index], dtype=np.float64)

    def vjp(arrays, _):
        shape = arrays[0].shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return back

    return _record("slice", [x], fwd, vjp)


def dropout_mask_apply(x, mask: np.ndarray, rate: float) -> Tensor:
    """Inverted dropout with a caller-supplied 0/1 mask."""
    x = _wrap(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ValueError(f"dropout mask shape {mask.shape} != input shape {x.shape}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = mask / (1.0 - rate)

    return _record("dropout", [x], lambda v: v * keep, lambda a, _: (lambda g: (g * keep,)))


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of (n, C) logits against integer labels."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    rows = np.arange(n)

    def fwd(v):
        return np.asarray(-_log_softmax(v)[rows, labels].mean())

    def vjp(arrays, _):
        p = _softmax(arrays[0])
        p[rows, labels] -= 1.0
        return lambda g: (g * p / n,)

    return _record("cross_entropy", [logits], fwd, vjp)


# ---------------------------------------------------------------- backward


def backward(tape: Tape, output: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep over ``tape`` from a 0-dim ``output``.

    Returns a map from tensor id to gradient for every tensor reachable on
    the tape (leaves included).
    """
    if output.ndim != 0:
        raise ValueError(f"backward needs a 0-dim output, got shape {output.shape}")
    produced = {op.output.id for op in tape.ops}
    if output.id not in produced:
        raise ValueError("output tensor was not recorded on this tape")

    grads: dict[int, np.ndarray] = {output.id: np.ones(())}
    for op in reversed(tape.ops):
        g = grads.get(op.output.id)
        if g is None:
            continue
        for t, gi in zip(op.inputs, op.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.id in grads:
                grads[t.id] = grads[t.id] + gi
            else:
                grads[t.id] = gi
    return grads


def grad(tape: Tape, output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``output`` w.r.t. each tensor in ``wrt`` (zeros if unreached)."""
    g = backward(tape, output)
    return [g.get(t.id, np.zeros(t.shape)) for t in wrt]


# ---------------------------------------------------------------- optimizers


def _check_grads(grads: dict[str, np.ndarray], params: dict[str, Tensor]) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        _check_grads(grads, params)
        for name, g in grads.items():
            if self.momentum:
                v = self.velocity.get(name)
                v = g if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            params[name].data = params[name].data - self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        _check_grads(grads, params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            params[name].data = params[name].data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], rule) -> None:
    """Apply one update of ``rule`` (an :class:`SGD` or :class:`Adam`)."""
    rule.step(params, grads)


def sign(v: np.ndarray) -> np.ndarray:
    """Coordinate-wise sign with sgn(0) = 0."""
    return np.sign(v)
