"""Command line entry point: ``adacache {run,compare,hist,presets}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from adacache.cache import PRESET_NOTES, PRESETS, ConfigError
from adacache.harness.artifacts import HISTOGRAM_FIELDS, histogram_csv, read_latent, read_trace
from adacache.harness.config import ExperimentConfig, MoRegConfig, load_config
from adacache.harness.report import compare_runs
from adacache.harness.runner import run_experiment


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.4f}"


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed:
        changes["seeds"] = tuple(args.seed)
    if args.codebook:
        changes["codebook"] = args.codebook
    if args.moreg:
        changes["moreg"] = MoRegConfig(enabled=True, frame_step=cfg.moreg.frame_step)
    if args.out:
        changes["output_dir"] = args.out
    if args.steps:
        changes["steps"] = args.steps
    cfg = cfg.replace(**changes)

    results = run_experiment(cfg, workers=args.workers)
    for r in results:
        line = (
            f"seed {r.seed}: computed {r.flops.computed_steps}/{len(r.trace)} steps, "
            f"speedup {r.flops.speedup_estimate:.3f}x"
        )
        if r.comparison is not None:
            line += f", psnr {_fmt(r.comparison.psnr)} dB"
        print(line)
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_compare(args) -> int:
    report = compare_runs(read_latent(args.reference), read_latent(args.candidate))
    if args.json:
        doc = report.to_dict()
        doc["psnr"] = _fmt(report.psnr) if math.isinf(report.psnr) else report.psnr
        doc["per_frame_psnr"] = [
            _fmt(v) if math.isinf(v) else v for v in report.per_frame_psnr
        ]
        print(json.dumps(doc, indent=2))
    else:
        print(f"psnr {_fmt(report.psnr)} dB")
        print(f"mean_abs_err {report.mean_abs_err:.6g}")
        print("per_frame_psnr " + " ".join(_fmt(v) for v in report.per_frame_psnr))
    return 0


def cmd_hist(args) -> int:
    text = histogram_csv(read_trace(args.trace), args.field, args.bins)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_presets(args) -> int:
    for name, cb in PRESETS.items():
        pairs = ", ".join(
            f"{'inf' if math.isinf(th) else f'{th:g}'}: {rate}" for th, rate in cb.entries
        )
        print(f"{name:<18} {{{pairs}}}  # {PRESET_NOTES[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adacache", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write artifacts")
    run.add_argument("--config", help="YAML experiment config")
    run.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    run.add_argument("--codebook", help="codebook preset name")
    run.add_argument("--moreg", action="store_true", help="enable motion regularization")
    run.add_argument("--out", help="output directory")
    run.add_argument("--steps", type=int, help="denoising steps")
    run.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    run.set_defaults(func=cmd_run)

    cmp = sub.add_parser("compare", help="PSNR/MAE between two latent files")
    cmp.add_argument("reference")
    cmp.add_argument("candidate")
    cmp.add_argument("--json", action="store_true")
    cmp.set_defaults(func=cmd_compare)

    hist = sub.add_parser("hist", help="trace file to histogram CSV")
    hist.add_argument("trace")
    hist.add_argument("--field", choices=HISTOGRAM_FIELDS, default="metric")
    hist.add_argument("--bins", type=int, default=10)
    hist.add_argument("--out", help="CSV path (default: stdout)")
    hist.set_defaults(func=cmd_hist)

    presets = sub.add_parser("presets", help="list built-in codebooks")
    presets.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
