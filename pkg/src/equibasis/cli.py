"""Command-line surface: basis dumps, verification suites, fits, experiments.

Exit codes: 0 success, 1 verification or assertion failure, 2 usage error.
All randomness flows from --seed; identical (seed, config) runs produce
identical data artifacts (the wall_time column aside).  Reports always echo
the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .partitions import bell, enumerate_partitions
from .basis import bias_basis, equivariant_basis, invariant_basis
from .layers import EquivariantLayer, apply_equivariant, apply_equivariant_fast
from .oracle import (
    check_basis_spans_fixed_space,
    check_layer_dims_with_features,
    check_multiset_dims,
    fixed_subspace_dim,
    trace_moment,
)
from .training import (
    BASIS_CHOICES,
    SCHEMA_VERSION,
    TASK_KINDS,
    TaskSpec,
    TrainConfig,
    least_squares_fit,
    run_experiment,
)

THREADS_ENV = "EQUIBASIS_THREADS"


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def _emit_rows(rows: list[dict], fmt: str, path: str | None) -> None:
    """Write dict rows as CSV or JSON to a file or stdout, deterministically."""
    if fmt == "json":
        text = json.dumps({"schema_version": SCHEMA_VERSION, "rows": rows}, indent=2, default=_fmt)
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
        text = buf.getvalue()
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _outdir(args) -> str | None:
    if args.output:
        os.makedirs(args.output, exist_ok=True)
    return args.output


# ---------------------------------------------------------------------------
# subcommands


def cmd_partitions(args) -> int:
    parts = enumerate_partitions(args.order)
    if args.format == "json":
        rows = [
            {"rgs": str(p), "blocks": [list(b) for b in p.blocks()], "num_blocks": p.num_blocks}
            for p in parts
        ]
        _emit_rows(rows, "json", args.output)
    elif args.format == "csv":
        rows = [{"schema_version": SCHEMA_VERSION, "rgs": str(p), "num_blocks": p.num_blocks} for p in parts]
        _emit_rows(rows, "csv", args.output)
    else:
        text = "\n".join(str(p) for p in parts) + "\n"
        if args.output:
            with open(args.output, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    return 0


def cmd_basis(args) -> int:
    k, n = args.k, args.n
    if args.kind == "equivariant":
        elements = equivariant_basis(k, n)
        biases = bias_basis(k, n)
    else:
        elements = invariant_basis(k, n)
        biases = []
    outdir = _outdir(args)
    if args.format == "json":
        rows = [
            {
                "element": i,
                "part": "linear",
                "rgs": str(e.partition),
                "blocks": [list(b) for b in e.partition.blocks()],
                "nonzero_count": e.nonzero_count,
            }
            for i, e in enumerate(elements)
        ] + [
            {
                "element": i,
                "part": "bias",
                "rgs": str(e.partition),
                "blocks": [list(b) for b in e.partition.blocks()],
                "nonzero_count": e.nonzero_count,
            }
            for i, e in enumerate(biases)
        ]
        _emit_rows(rows, "json", os.path.join(outdir, "basis.json") if outdir else None)
    else:
        rows = []
        for i, e in enumerate(elements):
            mat = e.as_matrix()
            for (r, c) in zip(*np.nonzero(mat)):
                rows.append(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "element": i,
                        "part": "linear",
                        "rgs": str(e.partition),
                        "row": int(r),
                        "col": int(c),
                        "value": 1,
                    }
                )
        for i, e in enumerate(biases):
            vec = e.materialize().data.reshape(-1)
            for (r,) in zip(*np.nonzero(vec)):
                rows.append(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "element": i,
                        "part": "bias",
                        "rgs": str(e.partition),
                        "row": int(r),
                        "col": 0,
                        "value": 1,
                    }
                )
        _emit_rows(rows, "csv", os.path.join(outdir, "basis.csv") if outdir else None)
    if outdir:
        from .plotting import save_basis_figure

        save_basis_figure(
            elements,
            biases,
            os.path.join(outdir, "basis.png"),
            title=f"{args.kind} basis, k={k}, n={n}",
        )
    return 0


def _verify_checks(args):
    """Yield (name, params, value, expected, passed) for the requested suite."""
    suite = args.suite
    if suite in ("dims", "all"):
        for order in range(1, 5):
            for n in range(order, 6):
                got = fixed_subspace_dim(n, order)
                yield "fixed_subspace_dim", {"n": n, "order": order}, got, bell(order), got == bell(order)
    if suite in ("basis", "all"):
        for (n, order) in ((3, 2), (4, 2), (3, 3), (2, 4)):
            res = check_basis_spans_fixed_space(n, order)
            yield (
                "basis_spans_fixed_space",
                {"n": n, "order": order},
                {"rank": res.basis_rank, "residual": res.max_fixed_point_residual},
                {"rank": res.fixed_space_dim, "residual": 0.0},
                res.ok,
            )
    if suite in ("trace-moment", "all"):
        if args.n is not None and args.k is not None:
            grid = [(args.n, args.k)]
        else:
            grid = [(n, k) for k in range(1, 5) for n in range(k, 8)]
        for n, k in grid:
            value = trace_moment(n, k)
            expected = bell(k) if n >= k else None
            ok = (value == expected) if expected is not None else value.denominator == 1
            yield "trace_moment", {"n": n, "k": k}, str(value), expected, ok
    if suite in ("features", "all"):
        for (n, k, d_in, d_out, kind) in (
            (3, 1, 2, 2, "invariant"),
            (3, 2, 1, 1, "invariant"),
            (3, 1, 1, 1, "equivariant"),
            (3, 1, 2, 2, "equivariant"),
        ):
            res = check_layer_dims_with_features(n, k, d_in, d_out, kind)
            yield (
                "layer_dims_with_features",
                {"n": n, "k": k, "d_in": d_in, "d_out": d_out, "kind": kind},
                res.measured,
                res.expected,
                res.ok,
            )
    if suite in ("multiset", "all"):
        for params in ((3, 3, 1, 1, 1, 1), (3, 3, 2, 0, 0, 0), (2, 3, 1, 1, 0, 0)):
            res = check_multiset_dims(*params)
            names = dict(zip(("n1", "n2", "k1", "k2", "l1", "l2"), params))
            yield "multiset_dims", names, res.measured, res.expected, res.ok


def cmd_verify(args) -> int:
    failures = 0
    outdir = _outdir(args)
    lines = []
    for name, params, value, expected, ok in _verify_checks(args):
        verdict = {
            "schema_version": SCHEMA_VERSION,
            "check": name,
            "params": params,
            "value": value,
            "expected": expected,
            "pass": bool(ok),
        }
        lines.append(json.dumps(verdict, default=_fmt))
        if not ok:
            failures += 1
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if outdir:
        with open(os.path.join(outdir, "verify.jsonl"), "w") as fh:
            fh.write(text)
    sys.stdout.write(f"{'PASS' if failures == 0 else 'FAIL'}: {failures} failing checks\n")
    return 0 if failures == 0 else 1


def cmd_fit(args) -> int:
    coeffs, residual = least_squares_fit(args.task, args.basis, args.n)
    rows = [
        {"schema_version": SCHEMA_VERSION, "term": k, "coefficient": v}
        for k, v in coeffs.items()
    ]
    rows.append({"schema_version": SCHEMA_VERSION, "term": "__residual__", "coefficient": residual})
    outdir = _outdir(args)
    path = os.path.join(outdir, "fit.json" if args.format == "json" else "fit.csv") if outdir else None
    _emit_rows(rows, args.format if args.format != "text" else "csv", path)
    return 0


def cmd_experiment(args) -> int:
    task = TaskSpec(
        args.task,
        n=args.n,
        train_size=args.train_size,
        test_size=args.test_size,
        seed=args.seed,
    )
    config = TrainConfig(
        depths=tuple(args.depths),
        width=args.width,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        lr_decay=args.lr_decay,
        decay_after=args.decay_after,
        optimizer=args.optimizer,
        pool_mode=args.pool_mode,
        seed=args.seed,
    )
    workers = int(os.environ.get(THREADS_ENV, "1"))
    report = run_experiment(
        task, config, basis=args.basis, eval_sizes=tuple(args.eval_n), max_workers=workers
    )
    outdir = _outdir(args)
    _emit_rows(report.csv_rows(), "csv", os.path.join(outdir, "results.csv") if outdir else None)
    summary = json.dumps(report.to_dict(), indent=2, default=_fmt)
    if outdir:
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            fh.write(summary)
        from .plotting import save_experiment_bars, save_generalization_figure, save_training_curves

        save_training_curves(report, os.path.join(outdir, "training_curves.png"))
        save_experiment_bars(report, os.path.join(outdir, "test_losses.png"))
        if report.generalization:
            save_generalization_figure(report, os.path.join(outdir, "generalization.png"))
    else:
        sys.stdout.write(summary + "\n")
    return 0


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    rng = np.random.default_rng(args.seed)
    layer = EquivariantLayer(
        2, 2, args.d, args.d,
        rng.normal(size=(bell(4), args.d, args.d)),
        rng.normal(size=(bell(2), args.d)),
    )
    x = rng.normal(size=(args.n, args.n, args.d))
    fast = apply_equivariant_fast(layer, x)
    generic = apply_equivariant(layer, x)
    agree = float(np.max(np.abs(fast - generic)))

    def median_time(fn):
        times = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    t_fast = median_time(lambda: apply_equivariant_fast(layer, x))
    t_generic = median_time(lambda: apply_equivariant(layer, x))
    ratio = t_generic / t_fast if t_fast > 0 else float("inf")
    report = {
        "schema_version": SCHEMA_VERSION,
        "n": args.n,
        "d": args.d,
        "reps": args.reps,
        "median_fast_s": t_fast,
        "median_generic_s": t_generic,
        "speedup": ratio,
        "max_output_difference": agree,
    }
    sys.stdout.write(json.dumps(report, indent=2, default=_fmt) + "\n")
    if agree > 1e-10:
        sys.stderr.write(f"FAIL: fast and generic paths disagree by {agree:.2e}\n")
        return 1
    if args.n >= 64 and ratio < 5.0:
        sys.stderr.write(f"FAIL: fast path only {ratio:.1f}x faster at n={args.n} (expected >= 5x)\n")
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equibasis",
        description="Bases for permutation-invariant and -equivariant linear layers: dump, verify, fit, train.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness in this run")
        p.add_argument("--output", default=None, help="output file or directory (default: stdout)")
        p.add_argument("--config", default=None, help="JSON file with flag defaults (flags override)")

    p = sub.add_parser("partitions", help="enumerate set partitions as growth strings")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    common(p)
    p.set_defaults(func=cmd_partitions)

    p = sub.add_parser("basis", help="dump materialized basis elements")
    p.add_argument("--k", type=int, default=2, help="input tensor order")
    p.add_argument("--n", type=int, default=5, help="node count")
    p.add_argument("--kind", choices=("equivariant", "invariant"), default="equivariant")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    common(p)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("verify", help="run brute-force verification suites")
    p.add_argument(
        "--suite",
        choices=("dims", "basis", "trace-moment", "features", "multiset", "all"),
        default="all",
    )
    p.add_argument("--n", type=int, default=None, help="single-point n for trace-moment")
    p.add_argument("--k", type=int, default=None, help="single-point k for trace-moment")
    p.add_argument("--format", choices=("json",), default="json")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit", help="SGD-free least-squares fit of a linear task over a basis")
    p.add_argument("--task", choices=("sym_projection", "diag_extraction", "trace"), required=True)
    p.add_argument("--basis", choices=BASIS_CHOICES, default="full")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("experiment", help="train networks on a synthetic task and report losses")
    p.add_argument("--task", choices=TASK_KINDS, required=True)
    p.add_argument("--basis", choices=BASIS_CHOICES, default="full")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--depths", type=int, nargs="+", default=[1, 2])
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch-size", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--decay-after", type=int, default=80)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--pool-mode", choices=("sum", "max"), default="sum")
    p.add_argument("--eval-n", type=int, nargs="*", default=[], help="extra node counts to evaluate at")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="time the fast order-2 path against the generic path")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--reps", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse args, then re-parse with defaults from --config so flags override."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object of flag defaults")
        valid = set(vars(args))
        unknown = set(overrides) - valid
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, sys.argv[1:] if argv is None else list(argv))
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 2
    except (ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
