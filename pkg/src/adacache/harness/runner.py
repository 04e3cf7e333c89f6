"""Run experiments and write per-seed artifacts.

For each seed ``s`` the output directory receives::

    trace_seed{s}.jsonl       one record per denoising step
    latent_seed{s}.bin        final latent
    baseline_seed{s}.bin      all-compute latent (when report.baseline)
    hist_{field}_seed{s}.csv  metric (+ m, mg with MoReg) series and bins
    report_seed{s}.json       FLOPs report, comparison, run summary

plus ``config.yaml`` with the resolved configuration. Files depend only on
(config, seed), so reruns reproduce them byte for byte.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from adacache.harness.artifacts import export_histogram, write_latent, write_trace
from adacache.harness.config import ExperimentConfig, serialize_config
from adacache.harness.report import ComparisonReport, FlopsReport, compare_runs
from adacache.model import Model, init_model
from adacache.sampler import RunTrace, baseline_denoise, denoise

log = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    trace: RunTrace
    flops: FlopsReport
    latent: np.ndarray
    comparison: Optional[ComparisonReport] = None
    paths: dict[str, Path] = field(default_factory=dict)


def _json_float(x):
    # keep reports strict JSON
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else "-inf" if x < 0 else "nan"
    return x


def _run_seed(cfg: ExperimentConfig, model: Model, seed: int, out: Path) -> SeedResult:
    cb = cfg.resolved_codebook()
    latent, trace = denoise(
        model,
        seed,
        cb,
        moreg=cfg.moreg.enabled,
        cfg=cfg.sampler,
        metric=cfg.metric,
        frame_step=cfg.moreg.frame_step,
    )
    flops = FlopsReport.from_trace(trace, cfg.model)
    result = SeedResult(seed=seed, trace=trace, flops=flops, latent=latent)

    paths = result.paths
    paths["trace"] = out / f"trace_seed{seed}.jsonl"
    write_trace(paths["trace"], trace)
    paths["latent"] = out / f"latent_seed{seed}.bin"
    write_latent(paths["latent"], latent)

    fields = ["metric", "m", "mg"] if cfg.moreg.enabled else ["metric"]
    for name in fields:
        key = f"hist_{name}"
        paths[key] = export_histogram(
            trace, name, cfg.report.bins, out / f"hist_{name}_seed{seed}.csv"
        )

    if cfg.report.baseline:
        reference = baseline_denoise(model, seed, cfg.sampler)
        paths["baseline"] = out / f"baseline_seed{seed}.bin"
        write_latent(paths["baseline"], reference)
        result.comparison = compare_runs(reference, latent)

    doc = {
        "seed": seed,
        "codebook": cb.name or [list(p) for p in cb.entries],
        "moreg": cfg.moreg.enabled,
        "computed_steps": trace.computed_steps,
        "flops": flops.to_dict(),
    }
    if result.comparison is not None:
        cmp = result.comparison
        doc["comparison"] = {
            "psnr": _json_float(cmp.psnr),
            "mean_abs_err": cmp.mean_abs_err,
            "per_frame_psnr": [_json_float(v) for v in cmp.per_frame_psnr],
        }
    paths["report"] = out / f"report_seed{seed}.json"
    paths["report"].write_text(json.dumps(doc, indent=2) + "\n")
    log.info(
        "seed %d: %d/%d steps computed, speedup %.2fx",
        seed,
        flops.computed_steps,
        len(trace),
        flops.speedup_estimate,
    )
    return result


def run_experiment(
    cfg: ExperimentConfig, workers: int = 1, model: Optional[Model] = None
) -> list[SeedResult]:
    """Execute ``denoise`` for every seed in ``cfg`` and write artifacts.

    Seeds may run on ``workers`` threads; each writes only its own files.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(serialize_config(cfg))
    model = model or init_model(cfg.model)
    if workers <= 1:
        return [_run_seed(cfg, model, s, out) for s in cfg.seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: _run_seed(cfg, model, s, out), cfg.seeds))
