"""Per-generation genetic machinery: initialization, partitioning,
representative selection, max-min arithmetical crossover and time-variant
mutation.

`evolve_subpopulation` is the kernel every execution mode runs: given the
same member list and stream seed it performs bitwise-identical work whether
called in-process or on a remote worker.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    Bounds,
    ConfigError,
    ContractError,
    DecisionVector,
    Individual,
    ObjectiveVector,
    WeightVector,
    clamp_to_bounds,
    weighted_sum,
)

EvalFn = Callable[[DecisionVector], ObjectiveVector]


@dataclass(frozen=True, slots=True)
class SubPopulation:
    """An indexed slice of the population processed by one worker."""

    id: int
    members: tuple[Individual, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ContractError("subpopulation must be non-empty")


@dataclass(frozen=True, slots=True)
class OperatorParams:
    """Crossover/mutation rates and the mutation decay schedule."""

    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # resolved to 1/n_vars by EngineConfig
    tvm_degree: float = 5.0
    max_generations: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ConfigError("crossover_rate must lie in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigError("mutation_rate must lie in [0, 1]")
        if self.tvm_degree <= 0.0:
            raise ConfigError("tvm_degree must be positive")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be non-negative")


def init_population(size: int, bounds: Bounds, rng: random.Random) -> list[Individual]:
    """Uniform random individuals inside the box; objectives left unset."""
    if size < 1:
        raise ContractError("population size must be positive")
    lower, upper = bounds.lower, bounds.upper
    return [
        Individual(tuple(rng.uniform(lo, hi) for lo, hi in zip(lower, upper)))
        for _ in range(size)
    ]


def partition(population: Sequence[Individual], n_subpops: int) -> list[SubPopulation]:
    """Round-robin deal of a fitness-sorted population into n_subpops slices.

    Caller must pass the population sorted ascending by fitness; member at
    sorted index k lands in subpopulation k mod n_subpops, so every slice
    spans the fitness spectrum and sizes differ by at most one.
    """
    if n_subpops < 1:
        raise ConfigError("n_subpops must be positive")
    if n_subpops > len(population):
        raise ConfigError(
            f"cannot split {len(population)} individuals into {n_subpops} subpopulations"
        )
    return [SubPopulation(k, tuple(population[k::n_subpops])) for k in range(n_subpops)]


def select_representative(subpop: SubPopulation) -> Individual:
    """Member with minimal fitness; ties go to the lowest member index."""
    best = None
    for member in subpop.members:
        if member.fitness is None:
            raise ContractError("representative selection needs populated fitness")
        if best is None or member.fitness < best.fitness:
            best = member
    return best


def _rep_index(fitness: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(fitness)):
        if fitness[i] < fitness[best]:
            best = i
    return best


def _sbmac_pass(
    genes_list: list[DecisionVector],
    fitness: list[float],
    known_objs: list[ObjectiveVector | None],
    rep_idx: int,
    params: OperatorParams,
    bounds: Bounds,
    rng: random.Random,
    evaluate_fn: EvalFn,
    weights: WeightVector,
) -> int:
    """Cross every non-representative member with the representative.

    Per member, with probability crossover_rate, three candidates are built
    from the pair (representative, member): a blend with one shared lambda,
    the per-gene max, and the per-gene min. The best-evaluated candidate
    replaces the member only when it strictly improves its fitness. Returns
    the number of objective evaluations spent.
    """
    cr = params.crossover_rate
    rep_genes = genes_list[rep_idx]
    evals = 0
    for i in range(len(genes_list)):
        if i == rep_idx:
            continue
        if rng.random() >= cr:
            continue
        lam = rng.random()
        lam1 = 1.0 - lam
        xg = genes_list[i]
        # the blend can exit the box by rounding; max/min copy in-bounds parents
        blend = clamp_to_bounds([lam * r + lam1 * x for r, x in zip(rep_genes, xg)], bounds)
        hi = tuple(map(max, rep_genes, xg))
        lo = tuple(map(min, rep_genes, xg))
        best_genes = None
        best_objs = None
        best_fit = math.inf
        for child in (blend, hi, lo):
            objs = evaluate_fn(child)
            evals += 1
            f = weighted_sum(objs, weights)
            if f < best_fit:
                best_genes, best_objs, best_fit = child, objs, f
        if best_fit < fitness[i]:
            genes_list[i] = best_genes
            known_objs[i] = best_objs
            fitness[i] = best_fit
    return evals


def sbmac(
    subpop: SubPopulation,
    representative: Individual,
    params: OperatorParams,
    bounds: Bounds,
    rng: random.Random,
    evaluate_fn: EvalFn,
    weights: WeightVector,
) -> tuple[SubPopulation, int]:
    """Max-min arithmetical crossover of a subpopulation against its
    representative; the representative passes through unchanged."""
    members = subpop.members
    rep_idx = None
    for i, m in enumerate(members):
        if m.genes == representative.genes:
            rep_idx = i
            break
    if rep_idx is None:
        raise ContractError("representative is not a member of the subpopulation")
    genes_list = [m.genes for m in members]
    fitness = []
    for m in members:
        if m.fitness is None:
            raise ContractError("sbmac needs populated fitness")
        fitness.append(m.fitness)
    known_objs: list[ObjectiveVector | None] = [m.objectives for m in members]
    evals = _sbmac_pass(
        genes_list, fitness, known_objs, rep_idx, params, bounds, rng, evaluate_fn, weights
    )
    out = []
    for i, m in enumerate(members):
        if genes_list[i] == m.genes:
            out.append(m)
        else:
            out.append(Individual(genes_list[i], known_objs[i], fitness[i]))
    return SubPopulation(subpop.id, tuple(out)), evals


def _tvm_genes(
    genes: DecisionVector,
    generation: int,
    params: OperatorParams,
    bounds: Bounds,
    rng: random.Random,
) -> DecisionVector:
    t_frac = generation / params.max_generations
    exponent = (1.0 - t_frac) ** params.tvm_degree
    mr = params.mutation_rate
    lower, upper = bounds.lower, bounds.upper
    out = list(genes)
    for k in range(len(out)):
        if rng.random() >= mr:
            continue
        toward_upper = rng.random() < 0.5
        r = rng.random()
        x = out[k]
        span = (upper[k] - x) if toward_upper else (x - lower[k])
        delta = span * (1.0 - r**exponent)
        out[k] = x + delta if toward_upper else x - delta
    return tuple(out)


def tvm(
    individual: Individual,
    generation: int,
    params: OperatorParams,
    bounds: Bounds,
    rng: random.Random,
) -> Individual:
    """Time-variant mutation: per-gene perturbations toward a random bound,
    with magnitude span * (1 - r^((1 - t/T)^beta)) decaying to zero at t = T.

    Stays in bounds by construction. Returns the same individual when no
    gene changed.
    """
    if params.max_generations < 1:
        raise ContractError("tvm needs max_generations >= 1")
    if not 0 <= generation <= params.max_generations:
        raise ContractError("generation must lie in [0, max_generations]")
    if params.mutation_rate is None:
        raise ContractError("mutation_rate must be resolved before tvm")
    new_genes = _tvm_genes(individual.genes, generation, params, bounds, rng)
    if new_genes == individual.genes:
        return individual
    return Individual(new_genes)


def evolve_subpopulation(
    members: Sequence[Individual],
    *,
    generation: int,
    seed: int,
    params: OperatorParams,
    bounds: Bounds,
    weights: WeightVector,
    evaluate_fn: EvalFn,
) -> tuple[list[Individual], int]:
    """One generation of work on a subpopulation: pick the representative,
    apply crossover, mutate everyone but the representative, then evaluate
    whatever lacks objectives.

    Incoming objectives are ignored so that remote and in-process execution
    spend identical evaluations: every returned member carries objectives
    computed within this call. Deterministic in (members, seed).
    """
    if not members:
        raise ContractError("subpopulation must be non-empty")
    if params.mutation_rate is None:
        raise ContractError("mutation_rate must be resolved before evolving")
    if not 1 <= generation <= params.max_generations:
        raise ContractError("generation must lie in [1, max_generations]")
    rng = random.Random(seed)
    genes_list = [m.genes for m in members]
    fitness: list[float] = []
    for m in members:
        if m.fitness is None:
            raise ContractError("evolve_subpopulation needs populated fitness")
        fitness.append(m.fitness)
    known_objs: list[ObjectiveVector | None] = [None] * len(members)
    rep_idx = _rep_index(fitness)

    evals = _sbmac_pass(
        genes_list, fitness, known_objs, rep_idx, params, bounds, rng, evaluate_fn, weights
    )

    for i in range(len(genes_list)):
        if i == rep_idx:
            continue
        mutated = _tvm_genes(genes_list[i], generation, params, bounds, rng)
        if mutated != genes_list[i]:
            genes_list[i] = mutated
            known_objs[i] = None

    out = []
    for i in range(len(genes_list)):
        objs = known_objs[i]
        if objs is None:
            objs = evaluate_fn(genes_list[i])
            evals += 1
            fitness[i] = weighted_sum(objs, weights)
        out.append(Individual(genes_list[i], objs, fitness[i]))
    return out, evals
