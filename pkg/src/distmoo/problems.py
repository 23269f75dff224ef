"""Benchmark problems and reference Pareto-front samplers.

Six box-constrained minimization problems: four two-objective functions
(P1-P4) and the two scalable DTLZ-style problems (DTLZ1 with a plain
quadratic distance term, DTLZ2 on the unit sphere octant). Fronts for P3
and the DTLZ problems are analytic; P1, P2 and P4 fronts come from a
dense-grid oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import Bounds, ContractError, ConfigError, DecisionVector, ObjectiveVector

PROBLEM_IDS = ("P1", "P2", "P3", "P4", "DTLZ1", "DTLZ2")

GRID_TARGET_POINTS = 1_000_000
GRID_POINTS_2D = 1024  # per decision dimension for two-variable problems


@dataclass(frozen=True, slots=True)
class ProblemSpec:
    """Static description of one benchmark instance."""

    id: str
    n_vars: int
    n_objectives: int
    bounds: Bounds


@dataclass(frozen=True, slots=True)
class ParetoFrontSample:
    """Mutually non-dominated reference points for one problem's true front."""

    points: np.ndarray  # shape (k, M)
    source: str  # "analytic" or "grid-oracle"


def make_problem(problem_id: str, n_vars: int | None = None, n_objectives: int | None = None) -> ProblemSpec:
    """Build a ProblemSpec, applying per-problem default dimensions."""
    pid = problem_id.upper()
    if pid == "P1":
        _require_dims(pid, n_vars, 2, n_objectives, 2)
        return ProblemSpec("P1", 2, 2, Bounds.cube(-50.0, 50.0, 2))
    if pid == "P2":
        n = 3 if n_vars is None else n_vars
        if n < 1:
            raise ConfigError("P2 needs at least one variable")
        _require_dims(pid, n, n, n_objectives, 2)
        return ProblemSpec("P2", n, 2, Bounds.cube(-2.0, 2.0, n))
    if pid == "P3":
        _require_dims(pid, n_vars, 1, n_objectives, 2)
        return ProblemSpec("P3", 1, 2, Bounds.cube(-10.0, 10.0, 1))
    if pid == "P4":
        _require_dims(pid, n_vars, 2, n_objectives, 2)
        return ProblemSpec("P4", 2, 2, Bounds.cube(-10.0, 10.0, 2))
    if pid in ("DTLZ1", "DTLZ2"):
        m = 3 if n_objectives is None else n_objectives
        n = (7 if pid == "DTLZ1" else 12) if n_vars is None else n_vars
        if m < 2:
            raise ConfigError(f"{pid} needs at least two objectives")
        if n < m:
            raise ConfigError(f"{pid} requires n_vars >= n_objectives (got {n} < {m})")
        return ProblemSpec(pid, n, m, Bounds.cube(0.0, 1.0, n))
    raise ConfigError(f"unknown problem id {problem_id!r}")


def _require_dims(pid, n_vars, n_fixed, n_obj, m_fixed):
    if n_vars is not None and n_vars != n_fixed:
        raise ConfigError(f"{pid} has exactly {n_fixed} variable(s)")
    if n_obj is not None and n_obj != m_fixed:
        raise ConfigError(f"{pid} has exactly {m_fixed} objectives")


def evaluate(problem: ProblemSpec, x: DecisionVector) -> ObjectiveVector:
    """Evaluate the problem's objectives at an in-bounds point. Pure."""
    lower = problem.bounds.lower
    upper = problem.bounds.upper
    if len(x) != problem.n_vars:
        raise ContractError(f"{problem.id} expects {problem.n_vars} variables, got {len(x)}")
    for v, lo, hi in zip(x, lower, upper):
        if v < lo or v > hi:
            raise ContractError(f"{problem.id} input {x!r} outside bounds")
    return _EVALUATORS[problem.id](problem, x)


def _eval_p1(problem: ProblemSpec, x) -> ObjectiveVector:
    x1, x2 = x
    f1 = x1 * x1 + 2.0 * x2 * x2 - 0.3 * math.cos(3.0 * math.pi * x1) * math.cos(4.0 * math.pi * x2) + 0.3
    f2 = x1 * x1 + x2 * x2 - 2.3 * math.cos(0.5 * math.pi * x1) * math.cos(0.5 * math.pi * x2) + 0.3
    return (f1, f2)


def _eval_p2(problem: ProblemSpec, x) -> ObjectiveVector:
    c = 1.0 / math.sqrt(problem.n_vars)
    s1 = 0.0
    s2 = 0.0
    for v in x:
        s1 += (v - c) * (v - c)
        s2 += (v + c) * (v + c)
    return (1.0 - math.exp(-s1), 1.0 - math.exp(-s2))


def _eval_p3(problem: ProblemSpec, x) -> ObjectiveVector:
    v = x[0]
    return (v * v, (v - 2.0) * (v - 2.0))


def _eval_p4(problem: ProblemSpec, x) -> ObjectiveVector:
    x1, x2 = x
    f1 = 1.0 - math.exp(-(x1 - 1.0) ** 2 - (x2 + 1.0) ** 2)
    f2 = 1.0 - math.exp(-(x1 + 1.0) ** 2 - (x2 - 1.0) ** 2)
    return (f1, f2)


def _tail_g(x, m: int) -> float:
    # distance term over the last n - M + 1 variables
    g = 0.0
    for v in x[m - 1:]:
        g += (v - 0.5) * (v - 0.5)
    return g


def _eval_dtlz1(problem: ProblemSpec, x) -> ObjectiveVector:
    m = problem.n_objectives
    h = 0.5 * (1.0 + _tail_g(x, m))
    out = [0.0] * m
    p = 1.0
    for k in range(m, 1, -1):
        out[k - 1] = h * p * (1.0 - x[m - k])
        p *= x[m - k]
    out[0] = h * p
    return tuple(out)


def _eval_dtlz2(problem: ProblemSpec, x) -> ObjectiveVector:
    m = problem.n_objectives
    r = 1.0 + _tail_g(x, m)
    half_pi = 0.5 * math.pi
    out = [0.0] * m
    p = 1.0
    for k in range(m, 1, -1):
        angle = half_pi * x[m - k]
        out[k - 1] = r * p * math.sin(angle)
        p *= math.cos(angle)
    out[0] = r * p
    return tuple(out)


_EVALUATORS = {
    "P1": _eval_p1,
    "P2": _eval_p2,
    "P3": _eval_p3,
    "P4": _eval_p4,
    "DTLZ1": _eval_dtlz1,
    "DTLZ2": _eval_dtlz2,
}


# ---------------------------------------------------------------------------
# Pareto front sampling

def sample_pareto_front(problem: ProblemSpec, count: int) -> ParetoFrontSample:
    """Sample `count` well-spread points from the problem's true front.

    P3 and the DTLZ problems use closed-form parametrizations; P1, P2 and
    P4 fall back to non-dominated filtering of a dense decision-space grid.
    Deterministic: repeated calls return identical samples.
    """
    if count < 2:
        raise ContractError("front sample needs count >= 2")
    if problem.id == "P3":
        t = np.linspace(0.0, 2.0, count)
        pts = np.column_stack([t * t, (t - 2.0) ** 2])
        return ParetoFrontSample(pts, "analytic")
    if problem.id == "DTLZ1":
        w = _simplex_candidates(problem.n_objectives, 3 * count)
        pts = _farthest_point_subset(0.5 * w, count)
        return ParetoFrontSample(pts, "analytic")
    if problem.id == "DTLZ2":
        w = _simplex_candidates(problem.n_objectives, 3 * count)
        pts = _farthest_point_subset(np.sqrt(w), count)
        return ParetoFrontSample(pts, "analytic")
    if problem.id in ("P1", "P2", "P4"):
        images = _grid_images(problem)
        front = _non_dominated_2d(images)
        if len(front) > count:
            front = _farthest_point_subset(front, count)
        return ParetoFrontSample(front, "grid-oracle")
    raise ConfigError(f"unsupported problem id {problem.id!r}")


def _simplex_candidates(m: int, min_points: int) -> np.ndarray:
    """Lattice of weight vectors on the unit simplex with >= min_points rows."""
    h = m
    while math.comb(h + m - 1, m - 1) < min_points:
        h += 1
    rows = np.empty((math.comb(h + m - 1, m - 1), m))
    for i, dividers in enumerate(itertools.combinations(range(h + m - 1), m - 1)):
        prev = -1
        for j, d in enumerate(dividers):
            rows[i, j] = d - prev - 1
            prev = d
        rows[i, m - 1] = h + m - 2 - prev
    rows /= rows.sum(axis=1, keepdims=True)
    return rows


def _farthest_point_subset(points: np.ndarray, count: int) -> np.ndarray:
    """Greedy covering subset: start at lexicographic minimum, repeatedly add
    the point farthest from the chosen set. Deterministic."""
    n = len(points)
    if count >= n:
        return points.copy()
    order = np.lexsort(points.T[::-1])
    chosen = [order[0]]
    min_dist = np.sqrt(((points - points[order[0]]) ** 2).sum(axis=1))
    for _ in range(count - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        d = np.sqrt(((points - points[nxt]) ** 2).sum(axis=1))
        np.minimum(min_dist, d, out=min_dist)
    return points[np.array(chosen)]


def _grid_images(problem: ProblemSpec) -> np.ndarray:
    n = problem.n_vars
    if n > 3:
        raise ConfigError(f"grid front oracle supports up to 3 variables (got {n})")
    per_dim = GRID_POINTS_2D if n == 2 else int(math.ceil(GRID_TARGET_POINTS ** (1.0 / n)))
    axes = [
        np.linspace(lo, hi, per_dim)
        for lo, hi in zip(problem.bounds.lower, problem.bounds.upper)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.column_stack([m.ravel() for m in mesh])
    return _BATCH_EVALUATORS[problem.id](problem, X)


def _batch_p1(problem: ProblemSpec, X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    f1 = x1**2 + 2.0 * x2**2 - 0.3 * np.cos(3.0 * np.pi * x1) * np.cos(4.0 * np.pi * x2) + 0.3
    f2 = x1**2 + x2**2 - 2.3 * np.cos(0.5 * np.pi * x1) * np.cos(0.5 * np.pi * x2) + 0.3
    return np.column_stack([f1, f2])


def _batch_p2(problem: ProblemSpec, X: np.ndarray) -> np.ndarray:
    c = 1.0 / math.sqrt(problem.n_vars)
    f1 = 1.0 - np.exp(-((X - c) ** 2).sum(axis=1))
    f2 = 1.0 - np.exp(-((X + c) ** 2).sum(axis=1))
    return np.column_stack([f1, f2])


def _batch_p4(problem: ProblemSpec, X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    f1 = 1.0 - np.exp(-((x1 - 1.0) ** 2) - (x2 + 1.0) ** 2)
    f2 = 1.0 - np.exp(-((x1 + 1.0) ** 2) - (x2 - 1.0) ** 2)
    return np.column_stack([f1, f2])


_BATCH_EVALUATORS = {"P1": _batch_p1, "P2": _batch_p2, "P4": _batch_p4}


def _non_dominated_2d(points: np.ndarray) -> np.ndarray:
    """Lower-envelope sweep for two objectives; drops duplicates."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    best_f2 = math.inf
    keep = []
    for idx in order:
        f2 = points[idx, 1]
        if f2 < best_f2:
            keep.append(idx)
            best_f2 = f2
    return points[np.array(keep)]
