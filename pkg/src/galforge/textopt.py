"""Sign-gradient ascent of an acquisition over the generator's condition.

The gradient of the expected acquisition w.r.t. the condition is estimated by
differentiating only through the last denoising step (x_1 -> x_0), scaled by
T and averaged over k seeded samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import acquisition as acq
from . import autodiff as ad
from . import classifier as clf
from .embedding import Condition, project_to_ball
from .generator import GeneratorModel, sample


@dataclass(frozen=True)
class OptimizerConfig:
    eps: float = 0.5
    alpha_ratio: float = 0.2
    steps: int = 10
    k: int = 6
    sigma: str = "entropy"
    passes: int = 10
    prop1_factor: bool = True
    alpha: float | None = None  # overrides eps * alpha_ratio

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.steps < 1 or self.k < 1:
            raise ValueError("steps and k must be >= 1")
        if self.sigma not in acq.SCORE_KINDS + ("random",):
            raise ValueError(f"{self.sigma!r} cannot drive condition optimization")

    @property
    def step_size(self) -> float:
        return self.eps * self.alpha_ratio if self.alpha is None else self.alpha


def _seed_list(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed).tolist()]


def estimate_grad(cond, gen: GeneratorModel, model: clf.ClassifierModel, sigma, k: int, seed,
                  prop1_factor: bool = True, taped_steps: int = 1, passes: int = 10) -> np.ndarray:
    """Mean over k samples of d sigma(f(x_0)) / d s, through the last ``taped_steps`` steps.

    With the default single taped step the result is multiplied by T; pass
    ``taped_steps=gen.T`` (and ``prop1_factor=False``) for the exact gradient.
    """
    fn = sigma if isinstance(sigma, acq.AcquisitionFn) else acq.AcquisitionFn(sigma, passes=passes)
    vector = cond.vector if isinstance(cond, Condition) else np.asarray(cond, dtype=np.float64)
    seed = _seed_list(seed)
    res = sample(gen, vector, seed, n=k, taped_steps=taped_steps)
    with res.tape:
        if fn.is_mc:
            masks = clf.mc_masks(model, k, fn.passes, [*seed, fn.seed, 1])
            scores = acq.score_tensor(fn, [clf.logits(model, res.out, m) for m in masks])
        else:
            scores = acq.score_tensor(fn, clf.logits(model, res.out))
        total = ad.sum(scores)
    (g,) = ad.grad(res.tape, total, [res.cond])
    g = g.reshape(-1) / k
    if prop1_factor:
        g = g * gen.T
    return g


def text_opt(s_star: Condition, cfg: OptimizerConfig, gen: GeneratorModel, model: clf.ClassifierModel,
             seed) -> Condition:
    """n projected sign-ascent steps from the anchor; returns the final condition."""
    if cfg.eps == 0 or cfg.sigma == "random":
        return s_star
    seed = _seed_list(seed)
    alpha = cfg.step_size
    anchor = s_star.anchor
    s = s_star.vector.copy()
    for i in range(cfg.steps):
        g = estimate_grad(s, gen, model, cfg.sigma, cfg.k, [*seed, i], cfg.prop1_factor, passes=cfg.passes)
        s = project_to_ball(s + alpha * ad.sign(g), anchor, cfg.eps)
    return s_star.with_vector(s)


def epsilon_schedule(cycle: int, n_cycles: int, eps_max: float = 0.5) -> float:
    """Linear ramp from 0 at the first cycle to eps_max at the last."""
    if not 1 <= cycle <= n_cycles:
        raise ValueError(f"cycle {cycle} outside [1, {n_cycles}]")
    return eps_max * (cycle - 1) / max(n_cycles - 1, 1)
