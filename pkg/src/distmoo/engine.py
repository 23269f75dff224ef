"""Generation loop with a determinism contract across execution modes.

Every unit of per-generation work is seeded by `derive_stream_seed`, a pure
mixing function of (master seed, generation, subpopulation id). Results are
merged by subpopulation id, never completion order, so sequential, thread
parallel and distributed runs of the same config are bitwise identical.

Reserved stream ids: (0, 0) seeds population initialization, (0, 1) seeds
weight-vector sampling; generation t >= 1 and subpopulation s use (t, s).
"""

from __future__ import annotations

import json
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from . import problems
from .core import (
    Archive,
    ConfigError,
    Individual,
    WeightVector,
    weighted_sum,
)
from .operators import OperatorParams, evolve_subpopulation, init_population, partition
from .problems import ProblemSpec

MASK64 = (1 << 64) - 1
_SEED_CONST = 0x9E3779B97F4A7C15
_GEN_MULT = 0xC2B2AE3D27D4EB4F
_SUB_MULT = 0x165667B19E3779F9


class EvaluationError(RuntimeError):
    """An objective evaluation produced a non-finite value."""


def _mix64(z: int) -> int:
    # splitmix64 finalizer
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_stream_seed(master_seed: int, generation: int, subpop_id: int) -> int:
    """Stable 64-bit stream seed for one unit of seeded work. Pure."""
    z = _mix64((master_seed + _SEED_CONST) & MASK64)
    z = _mix64((z + generation * _GEN_MULT) & MASK64)
    z = _mix64((z + subpop_id * _SUB_MULT) & MASK64)
    return z


@dataclass(frozen=True)
class EngineConfig:
    """Full description of one run; every random draw derives from master_seed."""

    problem: ProblemSpec
    pop_size: int
    max_generations: int
    n_subpops: int
    master_seed: int
    weights: WeightVector | None = None
    fitness_goal: float | None = None
    operator_params: OperatorParams | None = None
    archive_capacity: int = 500

    def __post_init__(self) -> None:
        if self.pop_size < 2:
            raise ConfigError("pop_size must be at least 2")
        if self.n_subpops < 1:
            raise ConfigError("n_subpops must be positive")
        if self.pop_size < self.n_subpops:
            raise ConfigError("pop_size must be >= n_subpops")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be non-negative")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.archive_capacity < 1:
            raise ConfigError("archive_capacity must be positive")
        if self.weights is None:
            object.__setattr__(self, "weights", WeightVector.uniform(self.problem.n_objectives))
        if len(self.weights) != self.problem.n_objectives:
            raise ConfigError("weights length must equal the problem's objective count")
        params = self.operator_params
        if params is None:
            params = OperatorParams(max_generations=self.max_generations)
        if params.mutation_rate is None:
            params = replace(params, mutation_rate=1.0 / self.problem.n_vars)
        if params.max_generations == 0 and self.max_generations > 0:
            params = replace(params, max_generations=self.max_generations)
        if params.max_generations != self.max_generations:
            raise ConfigError("operator_params.max_generations disagrees with max_generations")
        object.__setattr__(self, "operator_params", params)


@dataclass(frozen=True, slots=True)
class GenerationReport:
    generation: int
    best_fitness: float
    evaluations_so_far: int
    wall_seconds: float


@dataclass
class RunResult:
    """Outcome of one run; wall times are reported but excluded from the
    canonical serialization, which covers only reproducible content."""

    best: Individual
    archive: Archive
    history: list[GenerationReport]
    total_evaluations: int
    wall_seconds: float

    def canonical_dict(self) -> dict:
        def ind(m: Individual) -> dict:
            return {
                "genes": list(m.genes),
                "objectives": list(m.objectives),
                "fitness": m.fitness,
            }

        return {
            "best": ind(self.best),
            "archive": [ind(m) for m in self.archive.members],
            "history": [
                {
                    "generation": r.generation,
                    "best_fitness": r.best_fitness,
                    "evaluations": r.evaluations_so_far,
                }
                for r in self.history
            ],
            "total_evaluations": self.total_evaluations,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(
            self.canonical_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")


# A dispatched unit of work: (subpop_id, members, stream_seed, generation)
Task = tuple[int, tuple[Individual, ...], int, int]
TaskResult = tuple[int, list[Individual], int]
DispatchFn = Callable[[list[Task]], Iterable[TaskResult]]


class _Evaluator:
    """Per-run evaluation wrapper: finiteness guard plus optional delay."""

    def __init__(self, problem: ProblemSpec, delay_s: float = 0.0):
        self.problem = problem
        self.delay_s = delay_s
        self.generation = 0

    def __call__(self, genes):
        if self.delay_s > 0.0:
            time.sleep(self.delay_s)
        objs = problems.evaluate(self.problem, genes)
        for v in objs:
            if not math.isfinite(v):
                raise EvaluationError(
                    f"non-finite objective {objs!r} at generation {self.generation} "
                    f"for genes {genes!r}"
                )
        return objs


def execute_task(
    task: Task,
    config: EngineConfig,
    evaluate_fn,
) -> TaskResult:
    """Run the shared per-subpopulation kernel for one dispatched task."""
    sid, members, seed, generation = task
    new_members, evals = evolve_subpopulation(
        members,
        generation=generation,
        seed=seed,
        params=config.operator_params,
        bounds=config.problem.bounds,
        weights=config.weights,
        evaluate_fn=evaluate_fn,
    )
    return sid, new_members, evals


def _run_loop(
    config: EngineConfig,
    dispatch: DispatchFn,
    evaluator: _Evaluator,
    on_generation: Callable[[GenerationReport], None] | None = None,
) -> RunResult:
    problem = config.problem
    weights = config.weights
    start = time.perf_counter()

    rng = random.Random(derive_stream_seed(config.master_seed, 0, 0))
    raw = init_population(config.pop_size, problem.bounds, rng)
    population: list[Individual] = []
    for ind in raw:
        objs = evaluator(ind.genes)
        population.append(Individual(ind.genes, objs, weighted_sum(objs, weights)))
    evaluations = len(population)

    archive = Archive(config.archive_capacity)
    for ind in population:
        archive.insert(ind)

    best = population[0]
    for ind in population[1:]:
        if ind.fitness < best.fitness:
            best = ind

    history = [GenerationReport(0, best.fitness, evaluations, time.perf_counter() - start)]
    if on_generation is not None:
        on_generation(history[0])
    goal = config.fitness_goal

    if goal is None or best.fitness > goal:
        for t in range(1, config.max_generations + 1):
            evaluator.generation = t
            population.sort(key=lambda ind: ind.fitness)
            subpops = partition(population, config.n_subpops)
            tasks: list[Task] = [
                (sp.id, sp.members, derive_stream_seed(config.master_seed, t, sp.id), t)
                for sp in subpops
            ]
            results = sorted(dispatch(tasks), key=lambda r: r[0])
            if [r[0] for r in results] != [sp.id for sp in subpops]:
                raise RuntimeError("dispatch returned an incomplete or duplicated generation")
            population = []
            for sid, members, n_evals in results:
                population.extend(members)
                evaluations += n_evals
            # archive members that changed this generation; unchanged ones were
            # already archived when first evaluated
            for sid, members, _ in results:
                originals = tasks[sid][1]
                for new, old in zip(members, originals):
                    if new.genes != old.genes:
                        archive.insert(new)
            for ind in population:
                if ind.fitness < best.fitness:
                    best = ind
            history.append(
                GenerationReport(t, best.fitness, evaluations, time.perf_counter() - start)
            )
            if on_generation is not None:
                on_generation(history[-1])
            if goal is not None and best.fitness <= goal:
                break

    return RunResult(best, archive, history, evaluations, time.perf_counter() - start)


def run_sequential(
    config: EngineConfig, *, eval_delay_s: float = 0.0, on_generation=None
) -> RunResult:
    """Single-threaded reference execution of the generation loop."""
    evaluator = _Evaluator(config.problem, eval_delay_s)

    def dispatch(tasks: list[Task]):
        return [execute_task(task, config, evaluator) for task in tasks]

    return _run_loop(config, dispatch, evaluator, on_generation=on_generation)


def run_local_parallel(
    config: EngineConfig, n_workers: int, *, eval_delay_s: float = 0.0, on_generation=None
) -> RunResult:
    """Thread-parallel execution; bitwise identical to run_sequential.

    Subpopulations of one generation are processed by up to n_workers
    threads; merge order is by subpopulation id, so scheduling cannot leak
    into the result.
    """
    if n_workers < 1:
        raise ConfigError("n_workers must be positive")
    evaluator = _Evaluator(config.problem, eval_delay_s)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:

        def dispatch(tasks: list[Task]):
            return list(pool.map(lambda task: execute_task(task, config, evaluator), tasks))

        return _run_loop(config, dispatch, evaluator, on_generation=on_generation)


def sample_weight_vectors(m: int, count: int, seed: int) -> list[WeightVector]:
    """Uniform 1/M vector first, then `count - 1` uniform simplex samples."""
    if count < 1:
        raise ConfigError("need at least one weight vector")
    rng = random.Random(seed)
    vectors = [WeightVector.uniform(m)]
    for _ in range(count - 1):
        draws = [rng.expovariate(1.0) for _ in range(m)]
        total = math.fsum(draws)
        vectors.append(WeightVector(tuple(d / total for d in draws)))
    return vectors


def multi_weight_run(config: EngineConfig, n_weight_vectors: int) -> Archive:
    """Run once per weight vector and merge the per-run archives.

    Weight vector j runs under master seed derive_stream_seed(master, j+1, 1);
    the sampler uses (0, 1). The merged archive is internally non-dominated
    by construction.
    """
    vectors = sample_weight_vectors(
        config.problem.n_objectives,
        n_weight_vectors,
        derive_stream_seed(config.master_seed, 0, 1),
    )
    merged = Archive(config.archive_capacity)
    for j, wv in enumerate(vectors):
        sub_cfg = replace(
            config,
            weights=wv,
            master_seed=derive_stream_seed(config.master_seed, j + 1, 1),
        )
        result = run_sequential(sub_cfg)
        for member in result.archive.members:
            merged.insert(member)
    return merged
