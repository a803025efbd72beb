"""Conditional DDPM over low-dimensional points.

The noise predictor is an MLP over ``[x_t, sinusoidal(t), s]``.  Sampling is
ancestral with either the posterior variance
sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)  ("posterior", default) or
sigma_t^2 = beta_t ("beta"); the final step (t=1 -> 0) returns the
posterior mean without added noise, so it is a deterministic function of
(x_1, s) and can be put on a tape on its own.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint, mlp
from .embedding import Condition, EmbeddingTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # beta_1..beta_T at positions 0..T-1
    alpha_bar: np.ndarray  # alpha_bar_0..alpha_bar_T, alpha_bar_0 == 1

    @property
    def T(self) -> int:
        return len(self.betas)

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(betas, alpha_bar)

    @classmethod
    def linear(cls, T: int = 50, beta_start: float | None = None, beta_end: float | None = None) -> "NoiseSchedule":
        """DDPM's 1e-4..0.02 range rescaled by 1000/T (capped below 1)."""
        if T < 1:
            raise ValueError("T must be >= 1")
        k = 1000.0 / T
        lo = 1e-4 * k if beta_start is None else beta_start
        hi = 0.02 * k if beta_end is None else beta_end
        return cls.from_betas(np.minimum(np.linspace(lo, hi, T), 0.999))

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])


def time_features(t: int, n_features: int = 8) -> np.ndarray:
    half = n_features // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def forward_diffuse(schedule: NoiseSchedule, x0, t: int, noise) -> np.ndarray:
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(noise)


@dataclass(frozen=True)
class GeneratorConfig:
    T: int = 50
    beta_start: float | None = None
    beta_end: float | None = None
    hidden: tuple[int, ...] = (128, 128, 128)
    time_features: int = 8
    epochs: int = 60
    batch: int = 128
    lr: float = 2e-3
    cond_jitter: float = 0.1
    variance: str = "posterior"
    holdout_frac: float = 0.05
    seed: int = 0


VARIANCES = ("posterior", "beta")


class CallCounter:
    def __init__(self):
        self.calls = 0


@dataclass
class GeneratorModel:
    params: dict[str, ad.Tensor]
    schedule: NoiseSchedule
    table: EmbeddingTable
    data_dim: int
    time_dim: int = 8
    heldout_mse: float = float("nan")
    variance: str = "posterior"
    counter: CallCounter = field(default_factory=CallCounter, repr=False, compare=False)

    @property
    def cond_dim(self) -> int:
        return self.table.dim

    @property
    def T(self) -> int:
        return self.schedule.T


def init_generator(data_dim: int, table: EmbeddingTable, schedule: NoiseSchedule, hidden=(128, 128, 128),
                   time_dim: int = 8, seed: int = 0, variance: str = "posterior") -> GeneratorModel:
    if variance not in VARIANCES:
        raise ValueError(f"unknown sampler variance {variance!r}")
    sizes = [data_dim + time_dim + table.dim, *hidden, data_dim]
    params = mlp.init_mlp(sizes, np.random.default_rng(seed), zero_last=True)
    return GeneratorModel(params, schedule, table, data_dim, time_dim, variance=variance)


def _cond_rows(s: ad.Tensor, n: int) -> ad.Tensor:
    if s.shape[0] == n:
        return s
    if s.shape[0] == 1:
        return ad.matmul(ad.Tensor(np.ones((n, 1))), s)
    raise ValueError(f"condition rows {s.shape[0]} do not match batch {n}")


def predict_noise(model: GeneratorModel, x_t: ad.Tensor, t, s: ad.Tensor) -> ad.Tensor:
    """eps_theta(x_t, t, s); ``t`` is an int or an (n,) array of steps."""
    n = x_t.shape[0]
    if np.ndim(t) == 0:
        temb = np.broadcast_to(time_features(int(t), model.time_dim), (n, model.time_dim))
    else:
        temb = np.stack([time_features(int(ti), model.time_dim) for ti in t])
    inp = ad.concat([x_t, ad.Tensor(temb), _cond_rows(s, n)], axis=1)
    out, _ = mlp.forward(model.params, inp)
    return out


def denoise_step(model: GeneratorModel, x_t: ad.Tensor, t: int, s: ad.Tensor, z: np.ndarray | None) -> ad.Tensor:
    beta = model.schedule.beta(t)
    ab = model.schedule.alpha_bar[t]
    eps = predict_noise(model, x_t, t, s)
    mean = ad.scale(ad.sub(x_t, ad.scale(eps, beta / math.sqrt(1.0 - ab))), 1.0 / math.sqrt(1.0 - beta))
    if z is None:
        return mean
    var = beta
    if model.variance == "posterior":
        var = beta * (1.0 - model.schedule.alpha_bar[t - 1]) / (1.0 - ab)
    return ad.add(mean, ad.Tensor(math.sqrt(var) * z))


def draw_noise(model: GeneratorModel, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample streams: sample j uses default_rng([seed, j]) -> x_T then z_T..z_2."""
    d, T = model.data_dim, model.T
    xT = np.empty((n, d))
    zs = np.empty((T + 1, n, d))
    seed = list(np.atleast_1d(seed).tolist())
    for j in range(n):
        rng = np.random.default_rng([*seed, j])
        xT[j] = rng.standard_normal(d)
        for t in range(T, 1, -1):
            zs[t, j] = rng.standard_normal(d)
    return xT, zs


@dataclass
class SampleResult:
    x0: np.ndarray
    tape: ad.Tape | None = None
    cond: ad.Tensor | None = None  # the taped condition leaf
    out: ad.Tensor | None = None  # taped x0


def _as_rows(cond, n: int) -> np.ndarray:
    v = cond.vector if isinstance(cond, Condition) else np.asarray(cond, dtype=np.float64)
    v = np.atleast_2d(v)
    if v.shape[0] not in (1, n):
        raise ValueError(f"{v.shape[0]} condition rows for {n} samples")
    return v


def sample(model: GeneratorModel, cond, seed, n: int = 1, taped_steps: int = 0) -> SampleResult:
    """Run T ancestral steps; the last ``taped_steps`` are recorded w.r.t. the condition."""
    model.counter.calls += 1
    T = model.T
    rows = _as_rows(cond, n)
    xT, zs = draw_noise(model, n, seed)
    plain = ad.Tensor(rows)
    x = ad.Tensor(xT)
    first_taped = taped_steps  # steps t <= first_taped are taped
    tape = cond_t = None
    for t in range(T, 0, -1):
        if t == first_taped:
            tape = ad.Tape()
            cond_t = ad.Tensor(rows, requires_grad=True)
        s = cond_t if tape is not None else plain
        z = zs[t] if t > 1 else None
        if tape is not None:
            with tape:
                x = denoise_step(model, x, t, s, z)
        else:
            x = denoise_step(model, x, t, s, z)
        if not np.all(np.isfinite(x.data)):
            raise FloatingPointError(f"non-finite values while denoising at step t={t}")
    return SampleResult(x.data, tape, cond_t, x if tape is not None else None)


def reverse_sample(model: GeneratorModel, cond, seed, differentiable_last: bool = False, n: int = 1) -> SampleResult:
    return sample(model, cond, seed, n=n, taped_steps=1 if differentiable_last else 0)


def generate(model: GeneratorModel, cond, n: int, seed) -> np.ndarray:
    """n samples under one condition (or one condition row per sample)."""
    if n == 0:
        return np.zeros((0, model.data_dim))
    return sample(model, cond, seed, n=n).x0


# ---------------------------------------------------------------- pre-training


def denoising_mse(model: GeneratorModel, x0, conds, t, noise) -> float:
    x_t = np.stack([forward_diffuse(model.schedule, a, int(b), c) for a, b, c in zip(x0, t, noise)])
    pred = predict_noise(model, ad.Tensor(x_t), t, ad.Tensor(conds))
    return float(np.mean((pred.data - noise) ** 2))


def _holdout(model, xs, ys, rng):
    n = len(xs)
    t = rng.integers(1, model.T + 1, size=n)
    noise = rng.standard_normal(xs.shape)
    conds = model.table.class_embeddings[ys]
    return t, noise, conds


def pretrain_generator(xs: np.ndarray, ys: np.ndarray, table: EmbeddingTable, config: GeneratorConfig) -> GeneratorModel:
    """Noise-prediction regression on (x, y) with random templates and condition jitter."""
    schedule = NoiseSchedule.linear(config.T, config.beta_start, config.beta_end)
    model = init_generator(xs.shape[1], table, schedule, config.hidden, config.time_features, config.seed,
                           config.variance)
    rng = np.random.default_rng([config.seed, 7])
    n_hold = max(1, int(round(len(xs) * config.holdout_frac)))
    hx, hy = xs[-n_hold:], ys[-n_hold:]
    tx, ty = xs[:-n_hold], ys[:-n_hold]
    h_t, h_noise, h_cond = _holdout(model, hx, hy, np.random.default_rng([config.seed, 8]))

    opt = ad.Adam(lr=config.lr)
    mlp.set_trainable(model.params, True)
    n = len(tx)
    ab = schedule.alpha_bar
    for epoch in range(config.epochs):
        opt.lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            x0, y = tx[idx], ty[idx]
            m = len(idx)
            t = rng.integers(1, config.T + 1, size=m)
            noise = rng.standard_normal(x0.shape)
            tau = rng.integers(0, table.n_templates, size=m)
            cond = table.class_embeddings[y] + table.template_offsets[tau]
            cond = cond + config.cond_jitter * rng.standard_normal(cond.shape)
            x_t = np.sqrt(ab[t])[:, None] * x0 + np.sqrt(1.0 - ab[t])[:, None] * noise
            with ad.Tape() as tape:
                pred = predict_noise(model, ad.Tensor(x_t), t, ad.Tensor(cond))
                diff = ad.sub(pred, ad.Tensor(noise))
                loss = ad.mean(ad.mul(diff, diff))
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"generator pre-training diverged at epoch {epoch}; config={asdict(config)}")
            grads = ad.backward(tape, loss)
            opt.step(model.params, {k: grads[p.id] for k, p in model.params.items()})
        if (epoch + 1) % 10 == 0 or epoch == config.epochs - 1:
            log.info("generator epoch %d held-out mse %.4f", epoch + 1, denoising_mse(model, hx, h_cond, h_t, h_noise))
    mlp.set_trainable(model.params, False)
    model.heldout_mse = denoising_mse(model, hx, h_cond, h_t, h_noise)
    return model


def heldout_mse_untrained(xs, ys, table: EmbeddingTable, config: GeneratorConfig) -> float:
    schedule = NoiseSchedule.linear(config.T, config.beta_start, config.beta_end)
    model = init_generator(xs.shape[1], table, schedule, config.hidden, config.time_features, config.seed)
    n_hold = max(1, int(round(len(xs) * config.holdout_frac)))
    hx, hy = xs[-n_hold:], ys[-n_hold:]
    h_t, h_noise, h_cond = _holdout(model, hx, hy, np.random.default_rng([config.seed, 8]))
    return denoising_mse(model, hx, h_cond, h_t, h_noise)


# ---------------------------------------------------------------- checkpoint


def to_arrays(model: GeneratorModel) -> dict[str, np.ndarray]:
    arrays = mlp.to_arrays(model.params, "net.")
    arrays["class_embeddings"] = model.table.class_embeddings
    arrays["template_offsets"] = model.table.template_offsets
    arrays["betas"] = model.schedule.betas
    arrays["alpha_bar"] = model.schedule.alpha_bar
    arrays["meta.data_dim"] = np.array(float(model.data_dim))
    arrays["meta.time_dim"] = np.array(float(model.time_dim))
    arrays["meta.heldout_mse"] = np.array(model.heldout_mse)
    arrays["meta.variance"] = np.array(float(VARIANCES.index(model.variance)))
    return arrays


def from_arrays(arrays: dict[str, np.ndarray]) -> GeneratorModel:
    params = mlp.from_arrays(arrays, "net.")
    table = EmbeddingTable(arrays["class_embeddings"].copy(), arrays["template_offsets"].copy())
    schedule = NoiseSchedule(arrays["betas"].copy(), arrays["alpha_bar"].copy())
    return GeneratorModel(params, schedule, table, int(arrays["meta.data_dim"]), int(arrays["meta.time_dim"]),
                          float(arrays["meta.heldout_mse"]), VARIANCES[int(arrays["meta.variance"])])


def save_generator(model: GeneratorModel, path) -> None:
    checkpoint.save(path, to_arrays(model))


def load_generator(path) -> GeneratorModel:
    return from_arrays(checkpoint.load(path))
