"""Foundational multi-objective types: Pareto relations, scalarization, archive.

All objective comparisons use the minimization convention: a vector dominates
another when it is no larger in every coordinate and strictly smaller in at
least one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DecisionVector = tuple[float, ...]
ObjectiveVector = tuple[float, ...]

WEIGHT_SUM_TOL = 1e-12


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


@dataclass(frozen=True, slots=True)
class Bounds:
    """Box constraints for decision vectors: lower[i] <= x[i] <= upper[i]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ConfigError("bounds lower/upper length mismatch")
        if not self.lower:
            raise ConfigError("bounds must cover at least one variable")
        for lo, hi in zip(self.lower, self.upper):
            if not (lo < hi):
                raise ConfigError(f"invalid bound interval [{lo}, {hi}]")

    @classmethod
    def cube(cls, lo: float, hi: float, n: int) -> "Bounds":
        return cls((lo,) * n, (hi,) * n)

    @property
    def n(self) -> int:
        return len(self.lower)

    def contains(self, genes: Sequence[float]) -> bool:
        if len(genes) != len(self.lower):
            return False
        return all(lo <= x <= hi for x, lo, hi in zip(genes, self.lower, self.upper))

    def clamp(self, genes: Sequence[float]) -> DecisionVector:
        return clamp_to_bounds(genes, self)


@dataclass(frozen=True, slots=True)
class WeightVector:
    """Convex weights used to scalarize objective vectors."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.weights:
            raise ConfigError("weight vector must be non-empty")
        if any(w < 0.0 for w in self.weights):
            raise ConfigError("weights must be non-negative")
        if all(w == 0.0 for w in self.weights):
            raise ConfigError("all-zero weight vector")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"weights must sum to 1 (got {total!r})")

    @classmethod
    def uniform(cls, m: int) -> "WeightVector":
        if m < 1:
            raise ConfigError("objective count must be positive")
        return cls((1.0 / m,) * m)

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, slots=True)
class Individual:
    """A candidate solution; objectives and fitness are None until evaluated."""

    genes: DecisionVector
    objectives: ObjectiveVector | None = None
    fitness: float | None = None


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a[i] <= b[i] for all i and a[j] < b[j] for some j."""
    if len(a) != len(b):
        raise ContractError(f"objective length mismatch: {len(a)} vs {len(b)}")
    strict = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strict = True
    return strict


def covers(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a dominates b or a equals b elementwise."""
    if len(a) != len(b):
        raise ContractError(f"objective length mismatch: {len(a)} vs {len(b)}")
    return all(x <= y for x, y in zip(a, b))


def non_dominated_filter(points: Iterable[Sequence[float]]) -> list:
    """Keep exactly the points not dominated by any other input point.

    Input order is preserved among survivors and duplicates are retained
    (equal points never dominate each other).
    """
    pts = list(points)
    if not pts:
        return []
    m = len(pts[0])
    for p in pts:
        if len(p) != m:
            raise ContractError("objective vectors must share one length")
    out = []
    for p in pts:
        dominated = False
        for q in pts:
            strict = False
            ok = True
            for x, y in zip(q, p):
                if x > y:
                    ok = False
                    break
                if x < y:
                    strict = True
            if ok and strict:
                dominated = True
                break
        if not dominated:
            out.append(p)
    return out


def weighted_sum(objectives: Sequence[float], weights: "WeightVector | Sequence[float]") -> float:
    """Scalarized fitness: sum(w[i] * f[i]); the engine minimizes this value."""
    w = weights.weights if isinstance(weights, WeightVector) else weights
    if len(objectives) != len(w):
        raise ContractError(f"weights/objectives length mismatch: {len(w)} vs {len(objectives)}")
    total = 0.0
    for wi, fi in zip(w, objectives):
        total += wi * fi
    return total


def clamp_to_bounds(genes: Sequence[float], bounds: Bounds) -> DecisionVector:
    """Project each value onto [lower[i], upper[i]]."""
    lower, upper = bounds.lower, bounds.upper
    if len(genes) != len(lower):
        raise ContractError(f"gene length {len(genes)} does not match bounds length {len(lower)}")
    return tuple(
        lo if x < lo else hi if x > hi else float(x)
        for x, lo, hi in zip(genes, lower, upper)
    )


class Archive:
    """Bounded store of mutually non-dominated individuals.

    A candidate enters unless a current member dominates it; members
    dominated by the candidate are evicted. When the archive would exceed
    its capacity, the member with the smallest nearest-neighbor distance
    in objective space is pruned (oldest first on ties). Single-writer:
    concurrent producers must funnel insertions through one owner.
    """

    def __init__(self, capacity: int = 500):
        if capacity < 1:
            raise ConfigError("archive capacity must be positive")
        self.capacity = int(capacity)
        self._members: list[Individual] = []
        self._n = 0
        # buffers sized capacity + 1: insertion may briefly overshoot before pruning
        self._buf: np.ndarray | None = None
        self._nn_dist = np.empty(self.capacity + 1)
        self._nn_idx = np.empty(self.capacity + 1, dtype=np.int64)

    def __len__(self) -> int:
        return self._n

    @property
    def members(self) -> list[Individual]:
        return list(self._members)

    def objective_matrix(self) -> np.ndarray:
        if self._buf is None:
            return np.empty((0, 0))
        return self._buf[: self._n].copy()

    def insert(self, candidate: Individual) -> bool:
        """Apply the insertion rule; returns True when the candidate was kept."""
        if candidate.objectives is None:
            raise ContractError("archive candidates must have populated objectives")
        c = np.asarray(candidate.objectives, dtype=float)
        n = self._n
        if self._buf is None:
            self._buf = np.empty((self.capacity + 1, c.shape[0]))
        elif c.shape[0] != self._buf.shape[1]:
            raise ContractError("candidate objective length does not match archive")
        if n == 0:
            self._push(candidate, c, None)
            return True
        diff = self._buf[:n] - c
        dmax = diff.max(axis=1)
        dmin = diff.min(axis=1)
        # a member dominates c iff all coords <= and one < (diff <= 0, min < 0)
        if bool(((dmax <= 0.0) & (dmin < 0.0)).any()):
            return False
        beaten = (dmin >= 0.0) & (dmax > 0.0)
        if bool(beaten.any()):
            self._compact(~beaten)
            self._push(candidate, c, None)
        else:
            d = np.sqrt((diff * diff).sum(axis=1))
            self._push(candidate, c, d)
        if self._n > self.capacity:
            self._prune_one()
        return True

    def extend(self, candidates: Iterable[Individual]) -> None:
        for ind in candidates:
            self.insert(ind)

    def _push(self, candidate: Individual, c: np.ndarray, d: np.ndarray | None) -> None:
        n = self._n
        if n == 0:
            self._buf[0] = c
            self._members.append(candidate)
            self._nn_dist[0] = math.inf
            self._nn_idx[0] = -1
            self._n = 1
            return
        if d is None:
            diff = self._buf[:n] - c
            d = np.sqrt((diff * diff).sum(axis=1))
        nn_dist = self._nn_dist[:n]
        improved = d < nn_dist
        nn_dist[improved] = d[improved]
        self._nn_idx[:n][improved] = n
        j = int(np.argmin(d))
        self._buf[n] = c
        self._nn_dist[n] = d[j]
        self._nn_idx[n] = j
        self._members.append(candidate)
        self._n = n + 1

    def _recompute_nn(self, rows: np.ndarray) -> None:
        k = self._n
        objs = self._buf[:k]
        sub = objs[rows]
        d = np.sqrt(((sub[:, None, :] - objs[None, :, :]) ** 2).sum(axis=2))
        span = np.arange(len(rows))
        d[span, rows] = math.inf
        j = d.argmin(axis=1)
        self._nn_dist[rows] = d[span, j]
        self._nn_idx[rows] = j

    def _compact(self, keep: np.ndarray) -> None:
        """Drop members where keep is False, repairing the neighbor cache."""
        n = self._n
        new_index = np.cumsum(keep) - 1  # old index -> new index (valid where kept)
        self._members = [m for m, k in zip(self._members, keep) if k]
        k = len(self._members)
        self._buf[:k] = self._buf[:n][keep]
        nn_idx = self._nn_idx[:n][keep]
        nn_dist = self._nn_dist[:n][keep]
        stale = (nn_idx < 0) | ~keep[nn_idx]
        self._nn_idx[:k] = np.where(stale, -1, new_index[nn_idx])
        self._nn_dist[:k] = nn_dist
        self._n = k
        if k == 0:
            return
        if k == 1:
            self._nn_dist[0] = math.inf
            self._nn_idx[0] = -1
            return
        rows = np.nonzero(stale)[0]
        if len(rows):
            self._recompute_nn(rows)

    def _prune_one(self) -> None:
        # np.argmin returns the first minimum: oldest insertion wins ties
        n = self._n
        victim = int(np.argmin(self._nn_dist[:n]))
        del self._members[victim]
        self._buf[victim : n - 1] = self._buf[victim + 1 : n]
        self._nn_dist[victim : n - 1] = self._nn_dist[victim + 1 : n]
        self._nn_idx[victim : n - 1] = self._nn_idx[victim + 1 : n]
        self._n = n - 1
        if self._n == 1:
            self._nn_dist[0] = math.inf
            self._nn_idx[0] = -1
            return
        idx = self._nn_idx[: self._n]
        stale = idx == victim
        idx[idx > victim] -= 1
        rows = np.nonzero(stale)[0]
        if len(rows):
            self._recompute_nn(rows)


def archive_insert(archive: Archive, candidate: Individual) -> Archive:
    """Functional-style wrapper over Archive.insert; mutates and returns archive."""
    archive.insert(candidate)
    return archive
