"""Command-line front end: estimate partitions, export similarity matrices,
run desk-scale method comparisons, and enumerate partitions.

The CLI itself is a thin, single-threaded shell; any parallelism happens
inside the search engine and never changes the output.  Exit code is 0 on
success and 2 on any input or validation problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .baselines import SyntheticSpec, draws_method, enumerate_partitions, map_estimate, synthetic_draws
from .engine import SalsoConfig, salso
from .losses import LossSpec
from .partitions import DrawsMatrix, build_psm

# CLI loss names; "vi-lb" maps to the "vilb" kind, "draws" and "map" select
# baseline methods instead of the search engine.
ESTIMATE_LOSSES = (
    "binder",
    "omari",
    "vi",
    "gvi",
    "nvi",
    "nid",
    "id",
    "vi-lb",
    "draws",
    "map",
)

BENCH_LOSSES = ("binder", "omari", "vi", "gvi", "nvi", "nid", "id", "vi-lb")


def _max_clusters_token(text: str):
    t = text.strip().lower()
    if t in ("auto", "unconstrained"):
        return t
    try:
        value = int(t)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected AUTO, UNCONSTRAINED, or a positive integer, got {text!r}"
        )
    if value < 1:
        raise argparse.ArgumentTypeError(f"max-clusters must be positive, got {value}")
    return value


def read_draws(path: str, header: bool = False) -> DrawsMatrix:
    """Parse an H-by-n CSV of integer labels; rows are canonicalized.

    Blank lines are skipped.  Ragged rows and non-integer cells are rejected
    with the offending row (and column) named.
    """
    rows: list[list[int]] = []
    width: int | None = None
    header_pending = header
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if header_pending:
                header_pending = False
                continue
            values = []
            for colno, cell in enumerate(row, 1):
                text = cell.strip()
                try:
                    values.append(int(text))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column {colno}: not an integer: {text!r}"
                    ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValueError(
                    f"{path}: row {lineno} has {len(values)} fields, expected {width}"
                )
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no draws found")
    return DrawsMatrix.from_labels(np.asarray(rows, dtype=np.int64))


def _resolve_threads(cli_value: int | None) -> int:
    """--threads wins; else SALSO_KIT_THREADS; else 1.  0 means all cores."""
    if cli_value is not None:
        value = cli_value
    else:
        env = os.environ.get("SALSO_KIT_THREADS")
        if env is None or env.strip() == "":
            return 1
        try:
            value = int(env.strip())
        except ValueError:
            raise ValueError(
                f"SALSO_KIT_THREADS must be an integer, got {env!r}"
            ) from None
    if value < 0:
        raise ValueError(f"threads must be nonnegative, got {value}")
    return value


def _json_text(payload: dict) -> str:
    # repr-based float serialization: shortest digits that round-trip exactly.
    return json.dumps(payload, indent=2) + "\n"


def _estimate_payload_baseline(
    labels: np.ndarray, loss_value: float, kind: str, a: float, b: float, wall_ms: float
) -> dict:
    return {
        "labels": [int(v) for v in labels],
        "n_clusters": int(labels.max()),
        "expected_loss": float(loss_value),
        "loss": {"kind": kind, "a": a, "b": b},
        "n_runs": 0,
        "best_run_index": None,
        "seed": None,
        "k_d_resolved": None,
        "wall_ms": wall_ms,
        "runs": [],
    }


def _estimate_csv(payload: dict) -> str:
    lines = [str(v) for v in payload["labels"]]
    summary = ",".join(
        [
            f"loss={payload['loss']['kind']}",
            f"a={payload['loss']['a']!r}",
            f"b={payload['loss']['b']!r}",
            f"expected_loss={payload['expected_loss']!r}",
            f"n_clusters={payload['n_clusters']}",
            f"n_runs={payload['n_runs']}",
            f"best_run_index={payload['best_run_index']}",
            f"seed={payload['seed']}",
            f"k_d_resolved={payload['k_d_resolved']}",
            f"wall_ms={payload['wall_ms']!r}",
        ]
    )
    return "\n".join(lines + [summary]) + "\n"


def _cmd_estimate(args) -> str:
    import time

    threads = _resolve_threads(args.threads)
    draws = read_draws(args.draws, args.header)
    t0 = time.perf_counter()
    if args.loss == "map":
        labels, freq = map_estimate(draws)
        payload = _estimate_payload_baseline(
            labels, 1.0 - freq, "one_zero", 1.0, 1.0,
            (time.perf_counter() - t0) * 1000.0,
        )
    elif args.loss == "draws":
        # The draws method needs a ranking loss; it uses Binder with the
        # requested weights.
        spec = LossSpec("binder", args.a, args.b)
        labels, loss_value = draws_method(draws, spec)
        payload = _estimate_payload_baseline(
            labels, loss_value, spec.kind, spec.a, spec.b,
            (time.perf_counter() - t0) * 1000.0,
        )
    else:
        kind = "vilb" if args.loss == "vi-lb" else args.loss
        spec = LossSpec(kind, args.a, args.b)
        token = args.max_clusters
        if token == "auto":
            max_clusters = None
        elif token == "unconstrained":
            max_clusters = draws.n_items
        else:
            max_clusters = token
        config = SalsoConfig(
            n_runs=args.runs,
            p_sa=args.p_sa,
            max_clusters=max_clusters,
            n_max_zealous=args.max_zealous,
            seed=args.seed,
            n_workers=threads,
        )
        payload = salso(draws, spec, config).as_dict()
    if args.output == "json":
        return _json_text(payload)
    return _estimate_csv(payload)


def _cmd_psm(args) -> str:
    draws = read_draws(args.draws, args.header)
    psm = build_psm(draws)
    return "".join(",".join(f"{v:.6f}" for v in row) + "\n" for row in psm)


def _cmd_enumerate(args) -> str:
    token = args.max_clusters
    if token in ("auto", "unconstrained"):
        max_clusters = None
    else:
        max_clusters = token
    lines = [
        ",".join(str(v) for v in labels)
        for labels in enumerate_partitions(args.n, max_clusters=max_clusters)
    ]
    return "\n".join(lines) + "\n"


# The bench battery: planted partitions at three noise levels, cycled across
# scenarios; seeds are derived from the master seed so the battery is fixed.
_BENCH_NOISES = (0.2, 0.35, 0.5)


def _cmd_bench(args) -> str:
    threads = _resolve_threads(args.threads)
    kind = "vilb" if args.loss == "vi-lb" else args.loss
    spec = LossSpec(kind, args.a, args.b)
    # keep the descriptors comma-free so the CSV splits cleanly
    method_a = f"salso(runs={args.runs};p_sa={args.p_sa};zealous={args.max_zealous})"
    method_b = "salso(runs=1;p_sa=0;zealous=0)"
    header = "loss,method_a,method_b,prop_a_better,prop_b_better,mean_ms_a,mean_ms_b\n"
    if args.scenarios == 0:
        return header
    a_wins = b_wins = 0
    ms_a: list[float] = []
    ms_b: list[float] = []
    for i in range(args.scenarios):
        synth = SyntheticSpec(
            n_items=args.n,
            k_true=args.k_true,
            n_draws=args.n_draws,
            noise=_BENCH_NOISES[i % len(_BENCH_NOISES)],
            seed=args.seed * 100003 + i,
        )
        draws = synthetic_draws(synth)
        res_a = salso(
            draws,
            spec,
            SalsoConfig(
                n_runs=args.runs,
                p_sa=args.p_sa,
                n_max_zealous=args.max_zealous,
                seed=args.seed,
                n_workers=threads,
            ),
        )
        res_b = salso(
            draws,
            spec,
            SalsoConfig(
                n_runs=1, p_sa=0.0, n_max_zealous=0, seed=args.seed, n_workers=threads
            ),
        )
        if res_a.expected_loss < res_b.expected_loss:
            a_wins += 1
        elif res_b.expected_loss < res_a.expected_loss:
            b_wins += 1
        ms_a.append(res_a.wall_ms)
        ms_b.append(res_b.wall_ms)
    row = ",".join(
        [
            args.loss,
            method_a,
            method_b,
            f"{a_wins / args.scenarios:.6f}",
            f"{b_wins / args.scenarios:.6f}",
            f"{float(np.mean(ms_a)):.3f}",
            f"{float(np.mean(ms_b)):.3f}",
        ]
    )
    return header + row + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salso-kit",
        description="Summarize a sample of partitions by minimizing expected loss.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common_io(p, needs_draws=True):
        if needs_draws:
            p.add_argument("--draws", required=True, help="CSV of integer label rows")
            p.add_argument(
                "--header",
                action="store_true",
                help="skip one header row in the draws file",
            )
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    est = sub.add_parser("estimate", help="point-estimate a partition")
    add_common_io(est)
    est.add_argument("--loss", default="binder", choices=ESTIMATE_LOSSES)
    est.add_argument("--a", type=float, default=1.0, help="cost of wrongly splitting")
    est.add_argument("--b", type=float, default=1.0, help="cost of wrongly merging")
    est.add_argument(
        "--max-clusters",
        type=_max_clusters_token,
        default="auto",
        help="AUTO (max clusters in draws), UNCONSTRAINED (= n), or an integer cap",
    )
    est.add_argument("--runs", type=int, default=16)
    est.add_argument("--p-sa", type=float, default=0.5, dest="p_sa")
    est.add_argument("--max-zealous", type=int, default=10, dest="max_zealous")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument(
        "--threads", type=int, default=None, help="0 = all cores (env: SALSO_KIT_THREADS)"
    )
    est.add_argument("--output", default="json", choices=("json", "csv"))

    psm = sub.add_parser("psm", help="write the posterior similarity matrix")
    add_common_io(psm)

    bench = sub.add_parser("bench", help="compare search presets on synthetic draws")
    add_common_io(bench, needs_draws=False)
    bench.add_argument("--loss", default="binder", choices=BENCH_LOSSES)
    bench.add_argument("--a", type=float, default=1.0)
    bench.add_argument("--b", type=float, default=1.0)
    bench.add_argument("--scenarios", type=int, default=50)
    bench.add_argument("--n", type=int, default=40, help="items per scenario")
    bench.add_argument("--k-true", type=int, default=4, dest="k_true")
    bench.add_argument("--n-draws", type=int, default=100, dest="n_draws")
    bench.add_argument("--runs", type=int, default=4)
    bench.add_argument("--p-sa", type=float, default=0.5, dest="p_sa")
    bench.add_argument("--max-zealous", type=int, default=10, dest="max_zealous")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--threads", type=int, default=None)

    enum = sub.add_parser("enumerate", help="list all partitions of n items")
    add_common_io(enum, needs_draws=False)
    enum.add_argument("--n", type=int, required=True)
    enum.add_argument(
        "--max-clusters", type=_max_clusters_token, default="auto"
    )

    return parser


_COMMANDS = {
    "estimate": _cmd_estimate,
    "psm": _cmd_psm,
    "bench": _cmd_bench,
    "enumerate": _cmd_enumerate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "scenarios", 0) < 0:
            raise ValueError(f"scenarios must be nonnegative, got {args.scenarios}")
        text = _COMMANDS[args.subcommand](args)
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
    except (ValueError, OSError) as exc:
        print(f"salso-kit: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
