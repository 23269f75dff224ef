"""Convergence metric, repeated-run statistics, and the client-scaling
timing experiment.

The convergence value (CV) of a solution set is the mean Euclidean distance
from its non-dominated members to the nearest point of a dense sample of
the true Pareto front; lower is better.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import ConfigError, ContractError, non_dominated_filter
from .engine import EngineConfig, derive_stream_seed, multi_weight_run, run_local_parallel
from .problems import ParetoFrontSample, sample_pareto_front

DEFAULT_FRONT_POINTS = {"DTLZ1": 5000, "DTLZ2": 5000}
FALLBACK_FRONT_POINTS = 500


@dataclass(frozen=True)
class ConvergenceReport:
    problem_id: str
    n_runs: int
    individuals: int
    generations: int
    per_run_cv: tuple[float, ...]
    mean_cv: float


@dataclass(frozen=True)
class TimingReport:
    problem_id: str
    rows: tuple[tuple[int, float], ...]  # (n_clients, wall_seconds)

    def __post_init__(self) -> None:
        counts = [c for c, _ in self.rows]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ConfigError("client counts must be strictly increasing")


def convergence_metric(solutions: Sequence, front: ParetoFrontSample) -> float:
    """Mean nearest-front distance over the non-dominated subset of solutions."""
    if len(solutions) == 0:
        raise ContractError("convergence metric needs at least one solution")
    ref = np.asarray(front.points, dtype=float)
    if ref.shape[0] < 2:
        raise ContractError("front sample needs at least two points")
    survivors = non_dominated_filter([tuple(map(float, s)) for s in solutions])
    pts = np.asarray(survivors, dtype=float)
    if pts.shape[1] != ref.shape[1]:
        raise ContractError(
            f"solution dimension {pts.shape[1]} does not match front dimension {ref.shape[1]}"
        )
    return float(cdist(pts, ref).min(axis=1).mean())


def default_front_points(problem_id: str) -> int:
    return DEFAULT_FRONT_POINTS.get(problem_id, FALLBACK_FRONT_POINTS)


def _one_run_objectives(args) -> np.ndarray:
    config, n_weight_vectors = args
    archive = multi_weight_run(config, n_weight_vectors)
    return archive.objective_matrix()


def batch_convergence(
    config: EngineConfig,
    n_runs: int,
    n_weight_vectors: int,
    *,
    front_points: int | None = None,
    n_jobs: int | None = None,
) -> ConvergenceReport:
    """Repeat multi-weight runs and report per-run and mean CV.

    Run r executes under master seed derive_stream_seed(master_seed, r, 0),
    so reports are reproducible and independent of n_jobs. Runs may execute
    in parallel processes; results are assembled in run order.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be positive")
    count = front_points if front_points is not None else default_front_points(config.problem.id)
    front = sample_pareto_front(config.problem, max(count, FALLBACK_FRONT_POINTS))
    run_args = [
        (replace(config, master_seed=derive_stream_seed(config.master_seed, r, 0)), n_weight_vectors)
        for r in range(n_runs)
    ]
    jobs = n_jobs if n_jobs is not None else min(n_runs, os.cpu_count() or 1)
    if jobs <= 1 or n_runs == 1:
        per_run_objs = [_one_run_objectives(a) for a in run_args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run_objs = list(pool.map(_one_run_objectives, run_args))
    per_run_cv = tuple(convergence_metric(objs, front) for objs in per_run_objs)
    mean_cv = math.fsum(per_run_cv) / len(per_run_cv)
    return ConvergenceReport(
        problem_id=config.problem.id,
        n_runs=n_runs,
        individuals=config.pop_size,
        generations=config.max_generations,
        per_run_cv=per_run_cv,
        mean_cv=mean_cv,
    )


def timing_experiment(
    config: EngineConfig,
    client_counts: Sequence[int],
    injected_delay_s: float,
) -> TimingReport:
    """Wall time of identical-seed runs as the worker count grows.

    Each row runs the thread-parallel engine with n_subpops = n_workers = C
    and an artificial per-evaluation delay standing in for expensive
    objectives.
    """
    if not client_counts:
        raise ConfigError("client_counts must be non-empty")
    if any(c < 1 for c in client_counts):
        raise ConfigError("client counts must be >= 1")
    if injected_delay_s < 0:
        raise ConfigError("injected delay must be non-negative")
    rows = []
    for c in client_counts:
        cfg = replace(config, n_subpops=c)
        result = run_local_parallel(cfg, n_workers=c, eval_delay_s=injected_delay_s)
        rows.append((c, result.wall_seconds))
    return TimingReport(problem_id=config.problem.id, rows=tuple(rows))


# ---------------------------------------------------------------------------
# CSV emission (plain decimal, comma separated)

def convergence_csv(report: ConvergenceReport) -> str:
    lines = ["run_index,cv"]
    lines += [f"{i},{cv!r}" for i, cv in enumerate(report.per_run_cv)]
    lines.append(f"mean,{report.mean_cv!r}")
    return "\n".join(lines) + "\n"


def timing_csv(report: TimingReport) -> str:
    lines = ["n_clients,wall_seconds"]
    lines += [f"{c},{w!r}" for c, w in report.rows]
    return "\n".join(lines) + "\n"


def front_csv(sample: ParetoFrontSample) -> str:
    # no header: one objective vector per line
    return "\n".join(",".join(repr(float(v)) for v in row) for row in sample.points) + "\n"


def history_csv(history) -> str:
    lines = ["generation,best_fitness,evaluations,wall_seconds"]
    lines += [
        f"{r.generation},{r.best_fitness!r},{r.evaluations_so_far},{r.wall_seconds!r}"
        for r in history
    ]
    return "\n".join(lines) + "\n"
