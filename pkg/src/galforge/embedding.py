"""Condition space: class embeddings, template offsets and the epsilon-ball projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmbeddingTable:
    class_embeddings: np.ndarray  # (C, d_s)
    template_offsets: np.ndarray  # (K, d_s)

    def __post_init__(self):
        e, t = self.class_embeddings, self.template_offsets
        if e.ndim != 2 or t.ndim != 2 or e.shape[1] != t.shape[1]:
            raise ValueError(f"embedding table shapes disagree: {e.shape} vs {t.shape}")
        e.setflags(write=False)
        t.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return self.class_embeddings.shape[0]

    @property
    def n_templates(self) -> int:
        return self.template_offsets.shape[0]

    @property
    def dim(self) -> int:
        return self.class_embeddings.shape[1]

    def min_pairwise_distance(self) -> float:
        e = self.class_embeddings
        d = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)
        return float(d[~np.eye(len(e), dtype=bool)].min())

    def mean_pairwise_distance(self) -> float:
        e = self.class_embeddings
        d = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)
        return float(d[~np.eye(len(e), dtype=bool)].mean())


@dataclass(frozen=True)
class Condition:
    vector: np.ndarray
    anchor: np.ndarray
    class_id: int
    template_id: int

    def with_vector(self, vector: np.ndarray) -> "Condition":
        return Condition(np.asarray(vector, dtype=np.float64), self.anchor, self.class_id, self.template_id)


def make_table(
    n_classes: int,
    dim: int,
    rng: np.random.Generator,
    offset_scales=(0.0, 0.1, 0.3),
    min_angle_deg: float = 60.0,
) -> EmbeddingTable:
    """Unit-sphere class embeddings with a minimum angular gap, plus template offsets.

    The angular threshold is relaxed by 10% whenever rejection sampling stalls,
    so large class counts in few dimensions still terminate.
    """
    cos_max = np.cos(np.deg2rad(min_angle_deg))
    emb = np.empty((n_classes, dim))
    count = misses = 0
    while count < n_classes:
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if count == 0 or (emb[:count] @ v).max() <= cos_max:
            emb[count] = v
            count += 1
            misses = 0
        else:
            misses += 1
            if misses > 2000:
                cos_max = min(1.0 - 1e-9, cos_max + 0.1 * (1.0 - cos_max))
                misses = 0
    table = EmbeddingTable(emb, np.zeros((1, dim)))
    spread = table.mean_pairwise_distance()
    offsets = []
    for s in offset_scales:
        u = rng.standard_normal(dim)
        offsets.append(u / np.linalg.norm(u) * s * spread)
    return EmbeddingTable(emb, np.array(offsets))


def predefined_condition(table: EmbeddingTable, y: int, template: int) -> Condition:
    if not 0 <= y < table.n_classes:
        raise ValueError(f"class id {y} out of range [0, {table.n_classes})")
    if not 0 <= template < table.n_templates:
        raise ValueError(f"template id {template} out of range [0, {table.n_templates})")
    anchor = table.class_embeddings[y] + table.template_offsets[template]
    return Condition(anchor.copy(), anchor.copy(), int(y), int(template))


def project_to_ball(s, s_star, eps: float) -> np.ndarray:
    """Euclidean projection of ``s`` onto the closed ball of radius eps around s_star."""
    s = np.asarray(s, dtype=np.float64)
    s_star = np.asarray(s_star, dtype=np.float64)
    if s.shape != s_star.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {s_star.shape}")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    delta = s - s_star
    dist = float(np.linalg.norm(delta))
    if dist <= eps:
        return s.copy()
    if eps == 0.0:
        return s_star.copy()
    factor = eps / dist
    r = s_star + delta * factor
    # rounding can leave r a hair outside; pull it back in, doubling the shrink each try
    shrink = 1e-15
    while np.linalg.norm(r - s_star) > eps:
        factor *= 1.0 - shrink
        shrink *= 2.0
        r = s_star + delta * factor
    return r
