"""Command-line front end.

Subcommands: ``run`` executes optimization runs and writes one trace file per
(algorithm, seed); ``compare`` loads trace directories and reports median
curves with pairwise one-sided signed-rank tests; ``regression`` runs the
data-efficiency study.  Exit codes: 0 success, 1 user error, 2 internal
error.  All randomness comes from explicit seeds in the config; repeated runs
produce identical traces up to wall-time fields.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .bench import (
    ALGORITHMS,
    BoConfig,
    RegressionRecord,
    aggregate_regression,
    build_comparison,
    jenatton_objective,
    quadratic_objective,
    read_trace,
    render_comparison,
    run_bo,
    run_regression_study,
)
from .tree_space import TreeSpecError, parse_tree_spec

__all__ = ["main", "cmd_run", "cmd_compare", "cmd_regression"]

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UserError(Exception):
    """Bad flags, missing files, inconsistent inputs: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we own exit codes
        raise UserError(message)


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise UserError(f"{what}: expected comma-separated integers, got {text!r}") from None


def _parse_sizes(text: str) -> list[int]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UserError(f"--train-sizes range must be start:stop:step, got {text!r}")
        try:
            start, stop, step = (int(p) for p in parts)
        except ValueError:
            raise UserError(f"--train-sizes: non-integer in {text!r}") from None
        if step <= 0:
            raise UserError("--train-sizes: step must be positive")
        return list(range(start, stop, step))
    return _parse_int_list(text, "--train-sizes")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-init", type=int, default=None,
                   help="random iterations before model-based proposals "
                        "(default: 4 + continuous dimension)")
    p.add_argument("--restarts", type=int, default=3,
                   help="hyperparameter optimizer restarts per refit")
    p.add_argument("--theta0", type=float, default=1.0, help="initial lengthscale guess")
    p.add_argument("--b0", type=float, default=1.0, help="initial norm-bound guess")
    p.add_argument("--delta", type=float, default=0.1, help="confidence level in (0,1)")
    p.add_argument("--gamma-g", type=float, default=0.02,
                   help="lengthscale-deflation rate; 0 disables adaptation")
    p.add_argument("--gamma-b", type=float, default=0.3,
                   help="norm-bound growth rate; 0 disables adaptation")
    p.add_argument("--reference-exponent", type=float, default=0.9,
                   help="reference-regret exponent recorded in the config")
    p.add_argument("--noise-variance", type=float, default=1e-8,
                   help="observation noise variance assumed by the GP")
    p.add_argument("--noise-floor", type=float, default=1e-6,
                   help="variance floor for information-gain terms")
    p.add_argument("--acq-starts", type=int, default=5,
                   help="local-search starts per vertex acquisition")
    p.add_argument("--acq-scan", type=int, default=32,
                   help="low-discrepancy scan budget per vertex acquisition")
    p.add_argument("--kernel", choices=("se", "matern32", "matern52"), default="se")
    p.add_argument("--zero-dim", choices=("constant", "zero"), default="constant",
                   help="kernel contribution of vertices without variables")
    p.add_argument("--tie-scales", action=argparse.BooleanOptionalAction, default=True,
                   help="share one fitted output scale across all vertices")


def _config_from_args(args) -> BoConfig:
    return BoConfig(
        n_init=args.n_init,
        restarts=args.restarts,
        theta0=args.theta0,
        B0=args.b0,
        delta=args.delta,
        gamma_g=args.gamma_g,
        gamma_b=args.gamma_b,
        reference_exponent=args.reference_exponent,
        noise_variance=args.noise_variance,
        noise_floor=args.noise_floor,
        acq_starts=args.acq_starts,
        acq_scan=args.acq_scan,
        kernel_kind=args.kernel,
        zero_dim=args.zero_dim,
        tie_scales=args.tie_scales,
    )


def _build_objective(payload: dict):
    if payload.get("tree_spec"):
        path = Path(payload["tree_spec"])
        if not path.exists():
            raise UserError(f"tree-spec file not found: {path}")
        try:
            spec = parse_tree_spec(path.read_text())
        except TreeSpecError as exc:
            raise UserError(f"{path}: {exc}") from None
        return quadratic_objective(
            spec, payload.get("objective_seed", 0), name=f"tree:{path.name}"
        )
    name = payload.get("objective", "jenatton")
    if name == "jenatton":
        return jenatton_objective()
    raise UserError(f"unknown objective {name!r}")


def _execute_run(payload: dict) -> dict:
    """Worker-pool entry: rebuild everything from the picklable payload."""
    objective = _build_objective(payload)
    config = BoConfig(**payload["config"])
    trace = run_bo(
        objective,
        payload["algorithm"],
        payload["iterations"],
        payload["seed"],
        config,
        trace_path=payload["trace_path"],
    )
    return {
        "algorithm": payload["algorithm"],
        "seed": payload["seed"],
        "best": trace.records[-1].best,
        "trace_path": payload["trace_path"],
    }


def cmd_run(args) -> int:
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise UserError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
    seeds = _parse_int_list(args.seeds, "--seeds")
    if not seeds:
        raise UserError("--seeds is empty")
    if args.iterations < 1:
        raise UserError("--iterations must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    config = _config_from_args(args)
    base = {
        "objective": args.objective,
        "tree_spec": args.tree_spec,
        "objective_seed": args.objective_seed,
        "iterations": args.iterations,
        "config": dataclasses.asdict(config),
    }
    _build_objective(base)  # fail fast on a bad objective/tree-spec

    payloads = []
    for algo in algorithms:
        for seed in seeds:
            payload = dict(base)
            payload.update(
                algorithm=algo,
                seed=seed,
                trace_path=str(out / f"{algo}-seed{seed}.jsonl"),
            )
            payloads.append(payload)

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_execute_run, payloads))
    else:
        summaries = [_execute_run(p) for p in payloads]

    for s in summaries:
        print(f"{s['algorithm']} seed={s['seed']} best={s['best']:.6g} trace={s['trace_path']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    iterations = _parse_int_list(args.iterations, "--iterations")
    if not iterations:
        raise UserError("--iterations is empty")
    groups = []
    for k, d in enumerate(args.dirs):
        path = Path(d)
        if not path.is_dir():
            raise UserError(f"trace directory not found: {path}")
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise UserError(f"no trace files in {path}")
        groups.append((k, [read_trace(f) for f in files]))

    # If the same (algorithm, seed) shows up in several argument positions,
    # disambiguate by position so self-comparisons still produce a report.
    seen: set[tuple[str, int]] = set()
    collide = False
    for _, traces in groups:
        for tr in traces:
            key = (tr.meta["algorithm"], int(tr.meta["seed"]))
            if key in seen:
                collide = True
            seen.add(key)
    all_traces = []
    for k, traces in groups:
        for tr in traces:
            if collide:
                tr.meta = dict(tr.meta, algorithm=f"arg{k}:{tr.meta['algorithm']}")
            all_traces.append(tr)

    try:
        report = build_comparison(all_traces, iterations)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    print(render_comparison(report))
    if args.out:
        records = []
        for (a, b), by_t in report.p_values.items():
            for t, p in by_t.items():
                records.append({"better": a, "worse": b, "iteration": t, "p_value": p})
        for algo, by_t in report.median_incumbent.items():
            for t, v in by_t.items():
                records.append({"algorithm": algo, "iteration": t, "median_incumbent": v})
        Path(args.out).write_text(
            "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n"
        )
    return EXIT_OK


def write_regression_records(path, records: list[RegressionRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(dataclasses.asdict(rec), sort_keys=True) + "\n")


def read_regression_records(path) -> list[RegressionRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(RegressionRecord(**json.loads(line)))
    return out


def cmd_regression(args) -> int:
    seeds = _parse_int_list(args.seeds, "--seeds")
    if not seeds:
        raise UserError("--seeds is empty")
    sizes = _parse_sizes(args.train_sizes)
    if not sizes:
        raise UserError("--train-sizes is empty")
    if args.test_size < 1:
        raise UserError("--test-size must be >= 1")
    payload = {
        "objective": args.objective,
        "tree_spec": args.tree_spec,
        "objective_seed": args.objective_seed,
    }
    objective = _build_objective(payload)
    config = _config_from_args(args)
    records = run_regression_study(
        objective, sizes, test_size=args.test_size, seeds=seeds, config=config
    )
    table = aggregate_regression(records)
    print("method".ljust(14) + "n_train".rjust(8) + "median MSE".rjust(14))
    for (method, n), mse in table.items():
        print(method.ljust(14) + f"{n:8d}" + f"{mse:14.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_regression_records(out / "regression.jsonl", records)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="treebo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute optimization runs")
    p_run.add_argument("--objective", default="jenatton", help="builtin objective name")
    p_run.add_argument("--tree-spec", default=None,
                       help="tree-spec file; runs a seeded quadratic objective on it")
    p_run.add_argument("--objective-seed", type=int, default=0,
                       help="seed of the quadratic objective used with --tree-spec")
    p_run.add_argument("--algorithms", default="addtree",
                       help="comma-separated subset of addtree,independent,random")
    p_run.add_argument("--iterations", type=int, default=80)
    p_run.add_argument("--seeds", default="0", help="comma-separated seed list")
    p_run.add_argument("--workers", type=int, default=1, help="parallel run workers")
    p_run.add_argument("--out", required=True, help="output directory for traces")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare trace directories")
    p_cmp.add_argument("dirs", nargs="+", help="directories holding trace files")
    p_cmp.add_argument("--iterations", default="40,60,80",
                       help="comma-separated iterations of interest")
    p_cmp.add_argument("--out", default=None, help="machine-readable report file")
    p_cmp.set_defaults(func=cmd_compare)

    p_reg = sub.add_parser("regression", help="data-efficiency study")
    p_reg.add_argument("--objective", default="jenatton")
    p_reg.add_argument("--tree-spec", default=None)
    p_reg.add_argument("--objective-seed", type=int, default=0)
    p_reg.add_argument("--train-sizes", default="4:48:4",
                       help="comma list or start:stop:step range")
    p_reg.add_argument("--test-size", type=int, default=50)
    p_reg.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    p_reg.add_argument("--out", default=None, help="output directory for records")
    _add_config_flags(p_reg)
    p_reg.set_defaults(func=cmd_regression)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
