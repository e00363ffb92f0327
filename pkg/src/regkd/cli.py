"""Command-line entry point: ``regkd <subcommand> [options]``.

Exit status is 0 on success, 2 on a configuration or input error, and 1
when ``--strict`` is set and any trial failed.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import make_sinusoid, train_test_split
from .errors import ConfigError, TabularParseError
from .harness import ExperimentConfig, rebuild_reports, run_experiment, sweep_config
from .models import save_network
from .training import evaluate, student_config, teacher_config, train_student, train_teacher

EXIT_OK, EXIT_FAILED_TRIALS, EXIT_INVALID = 0, 1, 2


def _common(p, config=True):
    if config:
        p.add_argument("--config", "-c", type=Path, help="YAML experiment config")
    p.add_argument("--output-dir", "-o", type=Path, help="where trials/, tables/, plots/, checkpoints/ go")
    p.add_argument("--trials", "-n", type=int, help="override the trial count per cell")
    p.add_argument("--workers", "-j", type=int, help="worker processes (default: CPU count)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--strict", action="store_true", help="exit nonzero if any trial failed")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="regkd", description="Regression distillation with teacher outlier rejection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full experiment grid")
    _common(p)
    p.add_argument("--std", type=float, action="append", help="restrict to this noise std (repeatable)")
    p.add_argument("--variant", action="append", help="restrict to this variant (repeatable)")
    p.add_argument("--trial", type=int, action="append", help="run only this trial index (repeatable)")

    p = sub.add_parser("report", help="re-aggregate stored trials into tables and plot data")
    p.add_argument("--output-dir", "-o", type=Path, required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("sweep-threshold", help="fixed-threshold sweep against an L1 baseline")
    _common(p)
    p.add_argument("--thresholds", type=float, nargs="+", default=[6.0, 7.0, 8.0, 9.0])
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--noise-std", type=float, default=3.0)
    p.add_argument("--n", type=int, default=10_000, help="dataset size")
    p.add_argument("--batch-size", type=int, default=250)

    for name, help_ in (("train-teacher", "train and checkpoint one teacher"), ("train-student", "train one student")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--noise-std", type=float, default=3.0)
        p.add_argument("--n", type=int, help="dataset size (default from config)")
        p.add_argument("--epochs", type=int)
        if name == "train-student":
            p.add_argument("--variant", default="ours-full")
            p.add_argument("--teacher", type=Path, help="teacher checkpoint (required by teacher-based variants)")
    return parser


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    raw = cfg.to_dict()
    if args.output_dir is not None:
        raw["output_dir"] = str(args.output_dir)
    if args.trials is not None:
        raw["trials"] = args.trials
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.seed is not None:
        raw["master_seed"] = args.seed
    return ExperimentConfig.from_dict(raw)


def _finish(result, strict):
    failed = [r for r in result.reports if r.failed]
    for name, paths in result.outputs.items():
        if isinstance(paths, dict):
            print(f"{name}: {paths['txt']}")
    table = result.outputs.get("table")
    if table:
        print(Path(table["txt"]).read_text(), end="")
    if failed:
        print(f"{len(failed)} trial(s) failed", file=sys.stderr)
    return EXIT_FAILED_TRIALS if strict and failed else EXIT_OK


def _single_dataset(cfg, args):
    n = args.n or cfg.dataset.n
    ds = make_sinusoid(n, args.noise_std, x_range=tuple(cfg.dataset.x_range), seed=cfg.master_seed)
    return train_test_split(ds, cfg.dataset.test_fraction, seed=cfg.master_seed)


def cmd_run(args):
    cfg = _load_config(args)
    result = run_experiment(cfg, stds=args.std, variants=args.variant, trials=args.trial)
    return _finish(result, args.strict)


def cmd_report(args):
    result = rebuild_reports(args.output_dir)
    return _finish(result, args.strict)


def cmd_sweep(args):
    base = _load_config(args)
    cfg = sweep_config(base, args.thresholds, args.sigma, args.noise_std, args.n, args.batch_size)
    return _finish(run_experiment(cfg), args.strict)


def cmd_train_teacher(args):
    cfg = _load_config(args)
    train, test = _single_dataset(cfg, args)
    tc = cfg.teacher_train_config(cfg.master_seed)
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    out = Path(cfg.output_dir)
    ckpt = out / "checkpoints" / "teacher.ckpt"
    result = train_teacher(train, tc, checkpoint_path=ckpt, trace_path=out / "trials" / "teacher_trace.jsonl")
    print(json.dumps({"checkpoint": str(ckpt), **evaluate(result.network, test)}))
    return EXIT_OK


def cmd_train_student(args):
    cfg = _load_config(args)
    train, test = _single_dataset(cfg, args)
    variant = cfg.variant_for(args.variant, args.noise_std)
    sc = cfg.student_train_config(variant, cfg.master_seed)
    if args.epochs is not None:
        sc = replace(sc, epochs=args.epochs)
    if variant.needs_teacher and args.teacher is None:
        raise ConfigError([f"variant {variant.tag!r} needs --teacher"])
    out = Path(cfg.output_dir)
    result = train_student(train, args.teacher, sc, trace_path=out / "trials" / f"{variant.tag}_trace.jsonl")
    ckpt = save_network(out / "checkpoints" / f"student_{variant.tag}.ckpt", result.network, role="student",
                        variant=variant.to_dict())
    summary = {"checkpoint": str(ckpt), **evaluate(result.network, test)}
    if result.threshold is not None:
        summary.update(threshold=result.threshold.as_dict(), outlier_fraction=result.outlier_fraction)
    print(json.dumps(summary))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "report": cmd_report,
    "sweep-threshold": cmd_sweep,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TabularParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
