"""Command-line entry points: run, serve, work, bench, metric, front.

Configuration comes from a JSON manifest (--config) with flag overrides
(flags win). All randomness flows from the manifest's master_seed; outputs
are CSV files whose semantic columns are reproducible for a fixed seed.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import ConfigError, ContractError, WeightVector
from .engine import (
    EngineConfig,
    EvaluationError,
    run_local_parallel,
    run_sequential,
)
from .metrics import (
    batch_convergence,
    convergence_csv,
    front_csv,
    history_csv,
    timing_csv,
    timing_experiment,
)
from .netproto import ProtocolError, TransportError, server_run, worker_run
from .operators import OperatorParams
from .problems import make_problem, sample_pareto_front

logger = logging.getLogger(__name__)

ENGINE_KEYS = {
    "problem", "n_vars", "n_objectives", "pop_size", "max_generations",
    "n_subpops", "master_seed", "weights", "fitness_goal", "crossover_rate",
    "mutation_rate", "tvm_degree", "archive_capacity",
}
EXTRA_KEYS = {"client_counts", "n_runs", "n_weight_vectors", "injected_delay_ms", "output_path"}
MANIFEST_KEYS = ENGINE_KEYS | EXTRA_KEYS


class ManifestError(ConfigError):
    """Invalid manifest content; carries a file/line diagnostic."""


def _key_line(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def load_manifest(path: str) -> dict:
    """Parse and validate a JSON manifest; unknown keys are rejected."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}:1: manifest must be a JSON object")
    for key in doc:
        if key not in MANIFEST_KEYS:
            line = _key_line(raw, key)
            where = f"{path}:{line}" if line else path
            raise ManifestError(f"{where}: unknown manifest key {key!r}")
    return doc


def _typed(doc: dict, key: str, kinds, what: str):
    v = doc.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, kinds):
        raise ManifestError(f"manifest key {key!r} must be {what}")
    return v


def build_engine_config(doc: dict) -> EngineConfig:
    """Construct an EngineConfig from merged manifest + flag values."""
    problem_id = _typed(doc, "problem", str, "a problem id string")
    if problem_id is None:
        raise ManifestError("manifest needs a 'problem' key (or --problem)")
    problem = make_problem(
        problem_id,
        _typed(doc, "n_vars", int, "an integer"),
        _typed(doc, "n_objectives", int, "an integer"),
    )
    pop_size = _typed(doc, "pop_size", int, "an integer")
    gens = _typed(doc, "max_generations", int, "an integer")
    if pop_size is None or gens is None:
        raise ManifestError("manifest needs 'pop_size' and 'max_generations'")
    weights_raw = _typed(doc, "weights", list, "an array of numbers")
    weights = WeightVector(tuple(float(w) for w in weights_raw)) if weights_raw else None
    params_kwargs = {}
    for key in ("crossover_rate", "mutation_rate", "tvm_degree"):
        v = _typed(doc, key, (int, float), "a number")
        if v is not None:
            params_kwargs[key] = float(v)
    params = OperatorParams(max_generations=gens, **params_kwargs) if params_kwargs else None
    return EngineConfig(
        problem=problem,
        pop_size=pop_size,
        max_generations=gens,
        n_subpops=_typed(doc, "n_subpops", int, "an integer") or 1,
        master_seed=_typed(doc, "master_seed", int, "an integer") or 0,
        weights=weights,
        fitness_goal=_typed(doc, "fitness_goal", (int, float), "a number"),
        operator_params=params,
        archive_capacity=_typed(doc, "archive_capacity", int, "an integer") or 500,
    )


def _merged_doc(ns: argparse.Namespace) -> dict:
    doc = load_manifest(ns.config) if getattr(ns, "config", None) else {}
    overrides = {
        "master_seed": getattr(ns, "seed", None),
        "pop_size": getattr(ns, "pop", None),
        "max_generations": getattr(ns, "gens", None),
        "n_subpops": getattr(ns, "subpops", None),
        "problem": getattr(ns, "problem", None),
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    return doc


def _out_path(ns: argparse.Namespace, doc: dict, default: str) -> Path:
    if getattr(ns, "out", None):
        return Path(ns.out)
    configured = doc.get("output_path")
    return Path(configured) if configured else Path(default)


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"endpoint must look like HOST:PORT, got {text!r}")
    return (host or "127.0.0.1", int(port))


def _print_best(result) -> None:
    print(f"best genes: {list(result.best.genes)}")
    print(f"best objectives: {list(result.best.objectives)}")
    print(f"best fitness: {result.best.fitness!r}")
    print(f"evaluations: {result.total_evaluations}")


def cmd_run(ns: argparse.Namespace) -> int:
    doc = _merged_doc(ns)
    config = build_engine_config(doc)
    workers = ns.workers or 1
    if workers > 1:
        result = run_local_parallel(config, workers)
    else:
        result = run_sequential(config)
    _print_best(result)
    out = _out_path(ns, doc, "history.csv")
    out.write_text(history_csv(result.history), encoding="utf-8")
    print(f"history written to {out}")
    return 0


def cmd_serve(ns: argparse.Namespace) -> int:
    doc = _merged_doc(ns)
    config = build_engine_config(doc)
    host, port = parse_endpoint(ns.listen)

    def progress(report):
        print(
            f"generation {report.generation}: best={report.best_fitness!r} "
            f"evaluations={report.evaluations_so_far}"
        )

    result = server_run(
        config, host, port, ns.workers,
        generation_timeout_s=ns.timeout,
        on_generation=progress,
    )
    _print_best(result)
    out = _out_path(ns, doc, "history.csv")
    out.write_text(history_csv(result.history), encoding="utf-8")
    print(f"history written to {out}")
    return 0


def cmd_work(ns: argparse.Namespace) -> int:
    host, port = parse_endpoint(ns.connect)
    completed = worker_run(
        host, port,
        worker_name=ns.name,
        eval_delay_s=(ns.eval_delay_ms or 0.0) / 1000.0,
    )
    print(f"completed {completed} assignments")
    return 0


def cmd_bench(ns: argparse.Namespace) -> int:
    doc = _merged_doc(ns)
    config = build_engine_config(doc)
    if ns.counts:
        counts = [int(c) for c in ns.counts.split(",")]
    else:
        counts = doc.get("client_counts") or []
    delay_ms = ns.delay_ms if ns.delay_ms is not None else doc.get("injected_delay_ms", 0.0)
    report = timing_experiment(config, counts, float(delay_ms) / 1000.0)
    for c, w in report.rows:
        print(f"{c} clients: {w:.3f}s")
    out = _out_path(ns, doc, "timing.csv")
    out.write_text(timing_csv(report), encoding="utf-8")
    print(f"timing written to {out}")
    return 0


def cmd_metric(ns: argparse.Namespace) -> int:
    doc = _merged_doc(ns)
    config = build_engine_config(doc)
    n_runs = ns.runs if ns.runs is not None else doc.get("n_runs", 30)
    n_weights = (
        ns.weight_vectors if ns.weight_vectors is not None else doc.get("n_weight_vectors", 10)
    )
    report = batch_convergence(
        config, n_runs, n_weights,
        front_points=ns.front_points,
        n_jobs=ns.jobs,
    )
    print(f"mean CV over {report.n_runs} runs: {report.mean_cv!r}")
    out = _out_path(ns, doc, "convergence.csv")
    out.write_text(convergence_csv(report), encoding="utf-8")
    print(f"convergence written to {out}")
    return 0


def cmd_front(ns: argparse.Namespace) -> int:
    problem = make_problem(ns.problem, ns.n_vars, ns.n_objectives)
    sample = sample_pareto_front(problem, ns.count)
    out = Path(ns.out) if ns.out else Path("front.csv")
    out.write_text(front_csv(sample), encoding="utf-8")
    print(f"{len(sample.points)} front points ({sample.source}) written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distmoo",
        description="Distributed weighted-sum evolutionary optimizer for multi-objective problems",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON manifest path")
        p.add_argument("--problem", help="problem id (P1..P4, DTLZ1, DTLZ2)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--pop", type=int, help="population size")
        p.add_argument("--gens", type=int, help="generation count")
        p.add_argument("--subpops", type=int, help="subpopulation count")
        p.add_argument("--out", help="output CSV path")

    p_run = sub.add_parser("run", help="run the optimizer in-process")
    add_config_flags(p_run)
    p_run.add_argument("--workers", type=int, default=1, help="thread workers (1 = sequential)")
    p_run.set_defaults(handler=cmd_run)

    p_serve = sub.add_parser("serve", help="coordinate a distributed run")
    add_config_flags(p_serve)
    p_serve.add_argument("--listen", required=True, metavar="HOST:PORT")
    p_serve.add_argument("--workers", type=int, required=True, help="workers to wait for")
    p_serve.add_argument("--timeout", type=float, default=None, help="generation timeout seconds")
    p_serve.set_defaults(handler=cmd_serve)

    p_work = sub.add_parser("work", help="process assignments from a server")
    p_work.add_argument("--connect", required=True, metavar="HOST:PORT")
    p_work.add_argument("--name", help="worker name sent in the hello")
    p_work.add_argument(
        "--eval-delay-ms", type=float, default=0.0,
        help="artificial delay per evaluation (testing aid)",
    )
    p_work.set_defaults(handler=cmd_work)

    p_bench = sub.add_parser("bench", help="client-scaling timing experiment")
    add_config_flags(p_bench)
    p_bench.add_argument("--counts", help="comma-separated client counts, e.g. 1,2,4")
    p_bench.add_argument("--delay-ms", type=float, default=None, help="per-evaluation delay")
    p_bench.set_defaults(handler=cmd_bench)

    p_metric = sub.add_parser("metric", help="repeated-run convergence statistics")
    add_config_flags(p_metric)
    p_metric.add_argument("--runs", type=int, default=None)
    p_metric.add_argument("--weight-vectors", type=int, default=None)
    p_metric.add_argument("--front-points", type=int, default=None)
    p_metric.add_argument("--jobs", type=int, default=None, help="parallel run processes")
    p_metric.set_defaults(handler=cmd_metric)

    p_front = sub.add_parser("front", help="sample a reference Pareto front")
    p_front.add_argument("problem", help="problem id")
    p_front.add_argument("count", type=int, help="number of front points")
    p_front.add_argument("--n-vars", type=int, default=None)
    p_front.add_argument("--n-objectives", type=int, default=None)
    p_front.add_argument("--out", help="output CSV path")
    p_front.set_defaults(handler=cmd_front)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if ns.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return ns.handler(ns)
    except (ManifestError, ConfigError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (EvaluationError, ProtocolError, TransportError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
