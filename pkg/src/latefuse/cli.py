"""Command-line entry point.

Subcommands: synth (generate a synthetic corpus), ingest (event log ->
session cache), train (cache -> checkpoint + metrics, single run or
(d_h, k) grid sweep), eval (checkpoint -> validation metrics, optionally
with one view masked), gradcheck (finite-difference gradient audit).

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 failed
numeric check.

The LATEFUSE_THREADS environment variable, when set, caps the BLAS
thread pools (it must take effect before numpy loads, which is why this
module does its heavy imports lazily).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


def _apply_thread_env() -> None:
    n = os.environ.get("LATEFUSE_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                    "VECLIB_MAXIMUM_THREADS"):
            os.environ.setdefault(var, n)


_apply_thread_env()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latefuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event log + labels")
    p.add_argument("--config", required=True, help="JSON generator config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="event log + labels -> session cache")
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--gap-threshold", type=int, default=5000,
                   help="session gap in ms (default 5000)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model or a (d_h, k) grid")
    p.add_argument("--cache", required=True)
    p.add_argument("--head", choices=("fc", "fm", "mvm"), required=True)
    p.add_argument("--task", choices=("hdrs", "ymrs"), required=True)
    p.add_argument("--d_h", type=int, default=8)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", default=None,
                   help="comma-separated view subset (train-time ablation)")
    p.add_argument("--grid", action="store_true",
                   help="sweep d_h, k over {4, 8, 16} and select on validation")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--ablate-view", default=None,
                   help="zero this view's inputs before evaluating")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true",
                   help="inject a known gradient error (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _metrics_line(metrics) -> str:
    parts = [f"{name}={value:.6f}"
             for name, value in metrics.to_dict().items() if value is not None]
    return " ".join(parts)


def cmd_synth(args) -> int:
    from .reports import write_json, write_manifest
    from .synth import GenerationReport, SynthConfig, generate

    try:
        with open(args.config) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        print(f"error: malformed config JSON: {e}", file=sys.stderr)
        return EXIT_USAGE
    config = SynthConfig.from_dict(raw)
    os.makedirs(args.out, exist_ok=True)
    events_path = os.path.join(args.out, "events.csv")
    labels_path = os.path.join(args.out, "labels.csv")
    report = generate(config, events_path, labels_path)
    write_json(os.path.join(args.out, "generation.json"), {
        "sessions_emitted": report.sessions_emitted,
        "labels_emitted": report.labels_emitted,
        "expected_dropped_short": report.expected_dropped_short,
        "class_counts": {str(k): v for k, v in report.class_counts.items()},
    })
    write_manifest(os.path.join(args.out, "manifest.json"), "synth",
                   config.to_dict(), config.seed,
                   inputs={"config": args.config},
                   outputs=[events_path, labels_path, "generation.json"])
    print(f"wrote {report.sessions_emitted} sessions "
          f"({report.expected_dropped_short} below the length floor) to "
          f"{args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .pipeline import read_events, read_labels, run_ingest, write_cache
    from .reports import write_manifest

    events = read_events(args.events)
    if not events:
        print(f"error: event log {args.events} contains no events",
              file=sys.stderr)
        return EXIT_DATA
    labels = read_labels(args.labels)
    result = run_ingest(events, labels, gap_threshold=args.gap_threshold)
    c = result.counts
    print(f"segmented {c['sessions_segmented']} sessions; "
          f"dropped {c['dropped_short']} short, "
          f"{c['dropped_unlabeled']} unlabeled; "
          f"retained {c['samples']} samples "
          f"({c['unknown_categories']} unknown special categories)")
    if not result.samples:
        print("error: no sessions survived the pipeline", file=sys.stderr)
        return EXIT_DATA
    write_cache(args.out, result.samples)
    write_manifest(args.out + ".manifest.json", "ingest",
                   {"gap_threshold": args.gap_threshold, "counts": c},
                   None, inputs={"events": args.events, "labels": args.labels},
                   outputs=[args.out])
    return EXIT_OK


def _run_config_from_args(args):
    from .experiment import RunConfig
    from .pipeline import VIEW_NAMES

    views = tuple(VIEW_NAMES)
    if args.views is not None:
        views = tuple(v.strip() for v in args.views.split(",") if v.strip())
    return RunConfig(head=args.head, task=args.task, d_h=args.d_h, k=args.k,
                     epochs=args.epochs, batch_size=args.batch,
                     learning_rate=args.lr, dropout_fraction=args.dropout,
                     seed=args.seed, views=views)


def cmd_train(args) -> int:
    from .experiment import grid_run, save_run, train_run
    from .pipeline import read_cache
    from .reports import write_manifest

    config = _run_config_from_args(args)
    samples = read_cache(args.cache)
    os.makedirs(args.out, exist_ok=True)
    if args.grid:
        summary = grid_run(samples, config, args.out)
        for cell in summary["cells"]:
            print(f"d_h={cell['d_h']:>2} k={cell['k']:>2} "
                  + " ".join(f"{m}={v:.6f}" for m, v in cell["final"].items()
                             if v is not None))
        sel = summary["selected"]
        print(f"selected: d_h={sel['d_h']} k={sel['k']} ({sel['dir']})")
        outputs = [c["dir"] for c in summary["cells"]] + ["summary.json"]
        write_manifest(os.path.join(args.out, "manifest.json"), "train-grid",
                       config.to_dict(), config.seed,
                       inputs={"cache": args.cache}, outputs=outputs)
        return EXIT_OK
    result = train_run(samples, config)
    paths = save_run(args.out, result)
    write_manifest(os.path.join(args.out, "manifest.json"), "train",
                   config.to_dict(), config.seed,
                   inputs={"cache": args.cache},
                   outputs=list(paths.values()))
    print(f"final: {_metrics_line(result.final)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiment import eval_checkpoint
    from .reports import write_manifest, write_metrics

    metrics, run_config = eval_checkpoint(args.checkpoint, args.cache,
                                          ablate_view=args.ablate_view)
    print(_metrics_line(metrics))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        metrics_path = os.path.join(args.out, "metrics.json")
        write_metrics(metrics_path, {
            "task": run_config.task,
            "config": run_config.to_dict(),
            "ablate_view": args.ablate_view,
            "final": metrics.to_dict(),
        })
        write_manifest(os.path.join(args.out, "manifest.json"), "eval",
                       {"ablate_view": args.ablate_view}, run_config.seed,
                       inputs={"checkpoint": args.checkpoint,
                               "cache": args.cache},
                       outputs=[metrics_path])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_suite

    results = run_suite(seed=args.seed, corrupt=args.corrupt)
    print(format_table(results))
    if all(r.passed for r in results):
        return EXIT_OK
    print("error: gradient check failed", file=sys.stderr)
    return EXIT_CHECK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK

    from .checkpoint import CheckpointError
    from .kernel import NumericsError
    from .pipeline import DataError
    from .reports import ReportError

    try:
        return args.func(args)
    except (DataError, CheckpointError, ReportError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
