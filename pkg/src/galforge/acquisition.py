"""Acquisition functions, oriented so that higher always means more informative.

Two routes compute the score-based kinds:

* :func:`score` works on probability arrays (exact 0*log 0 = 0 handling) and
  drives pool selection;
* :func:`score_tensor` builds the same quantities from logits with autodiff
  ops, so gradients can flow back into generated samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from . import autodiff as ad
from . import classifier as clf

KINDS = ("random", "entropy", "margin", "least_confidence", "var_ratio", "mean_std", "bald", "kmeans", "coreset")
SINGLE_KINDS = ("entropy", "margin", "least_confidence")
MC_KINDS = ("var_ratio", "mean_std", "bald")
SCORE_KINDS = SINGLE_KINDS + MC_KINDS


@dataclass(frozen=True)
class AcquisitionFn:
    kind: str
    passes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}; expected one of {KINDS}")

    @property
    def is_mc(self) -> bool:
        return self.kind in MC_KINDS

    @property
    def is_score(self) -> bool:
        return self.kind in SCORE_KINDS


def _as_fn(fn) -> AcquisitionFn:
    return fn if isinstance(fn, AcquisitionFn) else AcquisitionFn(fn)


def _entropy(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(axis=-1)


def score(fn, p) -> np.ndarray | float:
    """Score one distribution (C,), a batch (n, C), or an MC stack (passes, n, C)."""
    fn = _as_fn(fn)
    p = np.asarray(p, dtype=np.float64)
    kind = fn.kind
    if kind in MC_KINDS:
        if p.ndim < 2 or (p.ndim == 2 and p.shape[0] < 2):
            raise ValueError(f"{kind} needs an MC stack of distributions, got shape {p.shape}")
        if p.ndim == 2:  # (passes, C) for a single point
            return float(score(fn, p[:, None, :])[0])
        pbar = p.mean(axis=0)
        if kind == "var_ratio":
            return 1.0 - pbar.max(axis=-1)
        if kind == "mean_std":
            return p.std(axis=0).mean(axis=-1)
        return _entropy(pbar) - _entropy(p).mean(axis=0)
    if kind not in SINGLE_KINDS:
        raise ValueError(f"{kind} is not a score-based acquisition")
    if p.ndim == 1:
        return float(score(fn, p[None, :])[0])
    if kind == "entropy":
        return _entropy(p)
    top = np.sort(p, axis=-1)
    if kind == "margin":
        return -(top[:, -1] - top[:, -2])
    return 1.0 - top[:, -1]


def _top2(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-p, axis=1, kind="stable")
    return order[:, 0], order[:, 1]


def _entropy_t(logit: ad.Tensor) -> ad.Tensor:
    lp = ad.log_softmax(logit)
    return ad.scale(ad.sum(ad.mul(ad.softmax(logit), lp), axis=1), -1.0)


def _entropy_p(p: ad.Tensor) -> ad.Tensor:
    return ad.scale(ad.sum(ad.mul(p, ad.log(p)), axis=1), -1.0)


def score_tensor(fn, logit_passes) -> ad.Tensor:
    """Per-row scores (n,) from logits.

    ``logit_passes`` is one (n, C) logit tensor for single-pass kinds or a list
    of per-pass logit tensors for MC kinds.
    """
    fn = _as_fn(fn)
    kind = fn.kind
    if kind in SINGLE_KINDS:
        logit = logit_passes[0] if isinstance(logit_passes, (list, tuple)) else logit_passes
        n = logit.shape[0]
        rows = np.arange(n)
        if kind == "entropy":
            return _entropy_t(logit)
        p = ad.softmax(logit)
        first, second = _top2(p.data)
        top1 = ad.slice(p, (rows, first))
        if kind == "least_confidence":
            return ad.scale(top1, -1.0, 1.0)
        return ad.scale(ad.sub(top1, ad.slice(p, (rows, second))), -1.0)
    if kind not in MC_KINDS:
        raise ValueError(f"{kind} has no differentiable score")
    if not isinstance(logit_passes, (list, tuple)) or len(logit_passes) < 2:
        raise ValueError(f"{kind} needs a list of at least 2 MC passes")
    probs = [ad.softmax(z) for z in logit_passes]
    m = len(probs)
    total = probs[0]
    for q in probs[1:]:
        total = ad.add(total, q)
    pbar = ad.scale(total, 1.0 / m)
    if kind == "var_ratio":
        n = pbar.shape[0]
        top, _ = _top2(pbar.data)
        return ad.scale(ad.slice(pbar, (np.arange(n), top)), -1.0, 1.0)
    if kind == "mean_std":
        sq = None
        for q in probs:
            d = ad.sub(q, pbar)
            sq = ad.mul(d, d) if sq is None else ad.add(sq, ad.mul(d, d))
        return ad.mean(ad.sqrt(ad.scale(sq, 1.0 / m)), axis=1)
    ent = _entropy_t(logit_passes[0])
    for z in logit_passes[1:]:
        ent = ad.add(ent, _entropy_t(z))
    return ad.sub(_entropy_p(pbar), ad.scale(ent, 1.0 / m))


def model_scores(fn, model: clf.ClassifierModel, xs, seed=None) -> np.ndarray:
    fn = _as_fn(fn)
    if fn.is_mc:
        mc_seed = fn.seed if seed is None else [fn.seed, *np.atleast_1d(seed).tolist()]
        return score(fn, clf.mc_predict(model, xs, fn.passes, mc_seed))
    return score(fn, clf.predict_proba(model, xs))


# ---------------------------------------------------------------- selection


def top_indices(scores: np.ndarray, B: int) -> np.ndarray:
    """Indices of the B largest scores; ties go to the smaller index."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return order[:B]


def kmeans_pp(feats: np.ndarray, k: int, rng: np.random.Generator, iters: int = 50) -> np.ndarray:
    n = len(feats)
    centers = [feats[rng.integers(n)]]
    d2 = np.sum((feats - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        j = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(feats[j])
        d2 = np.minimum(d2, np.sum((feats - feats[j]) ** 2, axis=1))
    c = np.array(centers)
    for _ in range(iters):
        assign = np.argmin(((feats[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        new = np.array([feats[assign == i].mean(axis=0) if np.any(assign == i) else c[i] for i in range(k)])
        if np.array_equal(new, c):
            break
        c = new
    return c


def _kmeans_select(feats: np.ndarray, B: int, rng) -> np.ndarray:
    centers = kmeans_pp(feats, B, rng)
    dist = ((centers[:, None, :] - feats[None]) ** 2).sum(-1)  # (B, n)
    chosen: list[int] = []
    taken = set()
    for row in dist:
        for j in np.argsort(row, kind="stable"):
            if int(j) not in taken:
                taken.add(int(j))
                chosen.append(int(j))
                break
    return np.array(chosen, dtype=np.int64)


def k_center_greedy(feats: np.ndarray, centers: np.ndarray, B: int, rng=None) -> np.ndarray:
    """Farthest-first traversal from ``centers``; with no centers the first pick is seeded."""
    n = len(feats)
    chosen: list[int] = []
    if len(centers):
        mins = np.min(((feats[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    else:
        j = int(rng.integers(n)) if rng is not None else 0
        chosen.append(j)
        mins = ((feats - feats[j]) ** 2).sum(-1)
    while len(chosen) < B:
        masked = mins.copy()
        masked[chosen] = -np.inf
        j = int(np.argmax(masked))
        chosen.append(j)
        mins = np.minimum(mins, ((feats - feats[j]) ** 2).sum(-1))
    return np.array(chosen, dtype=np.int64)


def select_top(fn, pool_xs, model: clf.ClassifierModel | None, B: int, seed=0, labeled_xs=None) -> np.ndarray:
    """Pick B pool indices by the given acquisition."""
    fn = _as_fn(fn)
    pool_xs = np.atleast_2d(pool_xs)
    n = len(pool_xs)
    if B > n:
        raise ValueError(f"budget {B} exceeds pool size {n}")
    if B == n:
        return np.arange(n)
    if B == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(np.atleast_1d(seed).tolist())
    if fn.kind == "random":
        return np.sort(rng.choice(n, size=B, replace=False))
    if fn.kind == "kmeans":
        return _kmeans_select(clf.features(model, pool_xs), B, rng)
    if fn.kind == "coreset":
        feats = clf.features(model, pool_xs)
        centers = clf.features(model, labeled_xs) if labeled_xs is not None and len(labeled_xs) else np.zeros((0, feats.shape[1]))
        return k_center_greedy(feats, centers, B, rng)
    return top_indices(model_scores(fn, model, pool_xs, seed), B)
