"""Unlabeled pool U, labeled set L and generated set G, plus the dataset snapshot CSV."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import atomic_write
from .embedding import Condition


@dataclass
class GeneratedEntry:
    x: np.ndarray
    label: int
    cycle: int
    condition: np.ndarray
    template_id: int
    eps: float


@dataclass
class Pools:
    """Bookkeeping for one active-learning run.

    ``oracle`` maps an (n, d) array to labels; it is the only way labels
    enter L, and every call is counted as annotation spend.
    """

    pool_x: np.ndarray
    oracle: Callable[[np.ndarray], np.ndarray]
    unlabeled: list[int] = field(default_factory=list)
    labeled_idx: list[int] = field(default_factory=list)
    labeled_y: list[int] = field(default_factory=list)
    labeled_cycle: list[int] = field(default_factory=list)
    generated: list[GeneratedEntry] = field(default_factory=list)
    annotations: int = 0

    def __post_init__(self):
        if not self.unlabeled and not self.labeled_idx:
            self.unlabeled = list(range(len(self.pool_x)))
        self._in_u = set(self.unlabeled)

    @property
    def U(self) -> np.ndarray:
        return np.asarray(self.unlabeled, dtype=np.int64)

    def unlabeled_x(self) -> np.ndarray:
        return self.pool_x[self.U]

    def labeled_x(self, cycle: int | None = None) -> np.ndarray:
        idx = self._labeled_positions(cycle)
        return self.pool_x[np.asarray(self.labeled_idx, dtype=np.int64)[idx]].reshape(-1, self.pool_x.shape[1])

    def labeled_labels(self, cycle: int | None = None) -> np.ndarray:
        idx = self._labeled_positions(cycle)
        return np.asarray(self.labeled_y, dtype=np.int64)[idx]

    def _labeled_positions(self, cycle):
        cycles = np.asarray(self.labeled_cycle, dtype=np.int64)
        if cycle is None:
            return np.arange(len(cycles))
        return np.flatnonzero(cycles == cycle)

    def move_selected(self, positions, cycle: int = 0) -> None:
        """Label the points at ``positions`` (indices into the current U) and move them to L."""
        positions = [int(p) for p in positions]
        if len(set(positions)) != len(positions):
            raise ValueError("duplicate indices in selection")
        for p in positions:
            if not 0 <= p < len(self.unlabeled):
                raise IndexError(f"selection index {p} outside U of size {len(self.unlabeled)}")
        chosen = [self.unlabeled[p] for p in positions]
        self.move_pool_indices(chosen, cycle)

    def move_pool_indices(self, pool_indices, cycle: int = 0) -> None:
        pool_indices = [int(i) for i in pool_indices]
        if len(set(pool_indices)) != len(pool_indices):
            raise ValueError("duplicate indices in selection")
        stale = [i for i in pool_indices if i not in self._in_u]
        if stale:
            raise ValueError(f"indices not in the unlabeled pool: {stale[:5]}")
        if not pool_indices:
            return
        labels = self.oracle(self.pool_x[pool_indices])
        self.annotations += len(pool_indices)
        for i, y in zip(pool_indices, labels):
            self._in_u.discard(i)
            self.labeled_idx.append(i)
            self.labeled_y.append(int(y))
            self.labeled_cycle.append(cycle)
        taken = set(pool_indices)
        self.unlabeled = [i for i in self.unlabeled if i not in taken]

    def append_generated(self, xs: np.ndarray, condition: Condition, cycle: int, eps: float = 0.0) -> None:
        for x in np.atleast_2d(xs):
            self.generated.append(
                GeneratedEntry(np.array(x), condition.class_id, cycle, condition.vector.copy(), condition.template_id, eps)
            )

    def generated_arrays(self, cycles=None) -> tuple[np.ndarray, np.ndarray]:
        d = self.pool_x.shape[1]
        rows = [g for g in self.generated if cycles is None or g.cycle in cycles]
        if not rows:
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64)
        return np.array([g.x for g in rows]), np.array([g.label for g in rows], dtype=np.int64)


# ---------------------------------------------------------------- snapshot file


@dataclass
class Snapshot:
    x: np.ndarray
    label: np.ndarray
    provenance: list[str]
    cycle: np.ndarray

    def select(self, mask) -> "Snapshot":
        mask = np.asarray(mask, dtype=bool)
        return Snapshot(self.x[mask], self.label[mask], [p for p, m in zip(self.provenance, mask) if m], self.cycle[mask])

    def __len__(self) -> int:
        return len(self.label)


def format_snapshot(snap: Snapshot) -> str:
    d = snap.x.shape[1]
    buf = io.StringIO()
    buf.write(",".join([f"x{i}" for i in range(d)] + ["label", "provenance", "cycle"]) + "\n")
    for x, y, p, c in zip(snap.x, snap.label, snap.provenance, snap.cycle):
        buf.write(",".join([repr(float(v)) for v in x] + [str(int(y)), p, str(int(c))]) + "\n")
    return buf.getvalue()


def parse_snapshot(text: str) -> Snapshot:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    if header[-3:] != ["label", "provenance", "cycle"]:
        raise ValueError(f"bad snapshot header: {lines[0]!r}")
    d = len(header) - 3
    xs, ys, ps, cs = [], [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != d + 3:
            raise ValueError(f"bad snapshot row: {ln!r}")
        xs.append([float(v) for v in parts[:d]])
        ys.append(int(parts[d]))
        ps.append(parts[d + 1])
        cs.append(int(parts[d + 2]))
    x = np.array(xs, dtype=np.float64).reshape(-1, d)
    return Snapshot(x, np.array(ys, dtype=np.int64), ps, np.array(cs, dtype=np.int64))


def write_snapshot(path, snap: Snapshot) -> None:
    atomic_write(path, format_snapshot(snap))


def read_snapshot(path) -> Snapshot:
    return parse_snapshot(Path(path).read_text())


def pools_snapshot(pools: Pools) -> Snapshot:
    """L (insertion order) followed by G (insertion order)."""
    d = pools.pool_x.shape[1]
    lx = pools.labeled_x()
    gx, gy = pools.generated_arrays()
    x = np.concatenate([lx.reshape(-1, d), gx.reshape(-1, d)])
    y = np.concatenate([pools.labeled_labels(), gy]).astype(np.int64)
    prov = ["pool"] * len(lx) + ["generated"] * len(gx)
    cyc = np.array(pools.labeled_cycle + [g.cycle for g in pools.generated], dtype=np.int64)
    return Snapshot(x, y, prov, cyc)
