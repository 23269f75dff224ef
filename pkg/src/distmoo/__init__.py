"""Distributed weighted-sum evolutionary optimizer for multi-objective problems."""

from .core import (
    Archive,
    Bounds,
    ConfigError,
    ContractError,
    Individual,
    WeightVector,
    archive_insert,
    clamp_to_bounds,
    covers,
    dominates,
    non_dominated_filter,
    weighted_sum,
)
from .engine import (
    EngineConfig,
    GenerationReport,
    RunResult,
    derive_stream_seed,
    multi_weight_run,
    run_local_parallel,
    run_sequential,
)
from .metrics import (
    ConvergenceReport,
    TimingReport,
    batch_convergence,
    convergence_metric,
    timing_experiment,
)
from .operators import (
    OperatorParams,
    SubPopulation,
    evolve_subpopulation,
    init_population,
    partition,
    sbmac,
    select_representative,
    tvm,
)
from .problems import (
    PROBLEM_IDS,
    ParetoFrontSample,
    ProblemSpec,
    evaluate,
    make_problem,
    sample_pareto_front,
)

__version__ = "0.1.0"
