from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from adacache.model import ModelConfig, flops_per_step
from adacache.sampler import RunTrace


@dataclass(frozen=True)
class FlopsReport:
    total_flops: int
    computed_steps: int
    cached_steps: int
    baseline_flops: int
    speedup_estimate: float

    @classmethod
    def from_trace(cls, trace: RunTrace, cfg: ModelConfig) -> "FlopsReport":
        total = trace.total_flops
        computed = len(trace.computed_steps)
        baseline = len(trace) * flops_per_step(cfg, cached=False)
        return cls(
            total_flops=total,
            computed_steps=computed,
            cached_steps=len(trace) - computed,
            baseline_flops=baseline,
            speedup_estimate=baseline / total,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def closed_form_speedup(cfg: ModelConfig, computed: int) -> float:
    """Baseline-to-cached compute ratio for ``computed`` full steps out of ``cfg.steps``."""
    full = flops_per_step(cfg, cached=False)
    cheap = flops_per_step(cfg, cached=True)
    return cfg.steps * full / (computed * full + (cfg.steps - computed) * cheap)


@dataclass(frozen=True)
class ComparisonReport:
    psnr: float
    mean_abs_err: float
    per_frame_psnr: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _psnr(peak: float, mse: float) -> float:
    if mse == 0.0:
        return math.inf
    if peak == 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / mse)


def compare_runs(a: np.ndarray, b: np.ndarray) -> ComparisonReport:
    """PSNR of ``b`` against reference ``a``, using ``a``'s value range as the peak.

    Identical inputs give ``inf``. Per-frame scores split along axis 0 and
    share the global peak.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64)
    diff = a64 - b.astype(np.float64)
    peak = float(a64.max() - a64.min()) if a64.size else 0.0
    sq = diff * diff
    per_frame = [_psnr(peak, float(sq[n].mean())) for n in range(a.shape[0])] if a.ndim else []
    return ComparisonReport(
        psnr=_psnr(peak, float(sq.mean())),
        mean_abs_err=float(np.abs(diff).mean()),
        per_frame_psnr=per_frame,
    )
