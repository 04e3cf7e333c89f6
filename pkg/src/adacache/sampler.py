"""Deterministic DDIM (eta=0) sampling loop with adaptive residual caching."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional

import numpy as np

from adacache.cache import (
    CacheDecision,
    CacheState,
    Codebook,
    MetricConfig,
    on_compute,
    should_compute,
)
from adacache.model import flops_per_step
from adacache.numerics import DTYPE


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 30
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ValueError("need 0 < beta_start < beta_end < 1")

    @property
    def alphas_cumprod(self) -> np.ndarray:
        if self.steps == 1:
            betas = np.array([self.beta_start])
        else:
            betas = np.linspace(self.beta_start, self.beta_end, self.steps)
        return np.cumprod(1.0 - betas)


def step_update(f: np.ndarray, noise_pred: np.ndarray, t: int, cfg: SamplerConfig) -> np.ndarray:
    """One deterministic DDIM step from timestep ``t`` to ``t - 1``.

    At ``t == 0`` the predicted clean sample is returned.
    """
    if not 0 <= t < cfg.steps:
        raise ValueError(f"timestep {t} outside [0, {cfg.steps})")
    if f.shape != noise_pred.shape:
        raise ValueError(f"latent {f.shape} and noise prediction {noise_pred.shape} differ")
    abar = cfg.alphas_cumprod
    a_t = abar[t]
    a_prev = abar[t - 1] if t > 0 else 1.0
    eps = noise_pred.astype(np.float64)
    x0 = (f.astype(np.float64) - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
    return (np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps).astype(DTYPE)


@dataclass(frozen=True)
class StepRecord:
    step: int
    timestep: int
    computed: bool
    metric: Optional[float]
    distance: Optional[float]
    rate: Optional[int]
    m: Optional[float]
    mg: Optional[float]
    flops: int


TRACE_FIELDS = tuple(f.name for f in fields(StepRecord))


@dataclass
class RunTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def computed_steps(self) -> list[int]:
        return [r.step for r in self.records if r.computed]

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.records)

    def series(self, name: str) -> list[tuple[int, float]]:
        if name not in ("metric", "distance", "m", "mg"):
            raise ValueError(f"no per-step series named {name!r}")
        return [(r.step, getattr(r, name)) for r in self.records if getattr(r, name) is not None]

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(r), allow_nan=True) for r in self.records]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "RunTrace":
        records = []
        for line in text.splitlines():
            if line.strip():
                data = json.loads(line)
                records.append(StepRecord(**{k: data.get(k) for k in TRACE_FIELDS}))
        return cls(records)


def initial_latent(shape: tuple[int, ...], seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape).astype(DTYPE)


def _check(model, cfg: SamplerConfig) -> None:
    if model.cfg.steps != cfg.steps:
        raise ValueError(
            f"model timestep table has {model.cfg.steps} steps, sampler has {cfg.steps}"
        )


def denoise(
    model,
    seed: int,
    cb: Codebook,
    moreg: bool = False,
    cfg: Optional[SamplerConfig] = None,
    metric: Optional[MetricConfig] = None,
    frame_step: int = 1,
    decisions_out: Optional[list[CacheDecision]] = None,
) -> tuple[np.ndarray, RunTrace]:
    """Sample one latent, caching the whole network between computed steps.

    ``model`` needs a ``cfg`` (``ModelConfig``) and a
    ``forward(f, t, decisions)`` method returning ``(noise, residuals)``.
    Cached steps still run the DDIM update with the reused residuals.
    """
    cfg = cfg or SamplerConfig(steps=model.cfg.steps)
    _check(model, cfg)
    full = flops_per_step(model.cfg, cached=False)
    cheap = flops_per_step(model.cfg, cached=True)

    state = CacheState.create(model.cfg.layers, metric, moreg, frame_step)
    f = initial_latent(model.cfg.latent_shape, seed)
    trace = RunTrace()
    for i in range(cfg.steps):
        t = cfg.steps - 1 - i
        if should_compute(state, i):
            noise, residuals = model.forward(f, t, None)
            d = on_compute(state, residuals, i, cb)
            rec = StepRecord(i, t, True, d.metric, d.distance, d.selected_rate, d.m, d.mg, full)
        else:
            noise, _ = model.forward(f, t, state.cached)
            d = CacheDecision(compute=False, step=i)
            rec = StepRecord(i, t, False, None, None, None, None, None, cheap)
        if decisions_out is not None:
            decisions_out.append(d)
        trace.records.append(rec)
        f = step_update(f, noise, t, cfg)
    return f, trace


def baseline_denoise(model, seed: int, cfg: Optional[SamplerConfig] = None) -> np.ndarray:
    """Reference loop with no cache engine at all."""
    cfg = cfg or SamplerConfig(steps=model.cfg.steps)
    _check(model, cfg)
    f = initial_latent(model.cfg.latent_shape, seed)
    for i in range(cfg.steps):
        t = cfg.steps - 1 - i
        noise, _ = model.forward(f, t, None)
        f = step_update(f, noise, t, cfg)
    return f


def residual_stream(model, seed: int, cfg: Optional[SamplerConfig] = None) -> list:
    """Per-step residuals of an all-compute run, for replaying the scheduler."""
    cfg = cfg or SamplerConfig(steps=model.cfg.steps)
    _check(model, cfg)
    f = initial_latent(model.cfg.latent_shape, seed)
    stream = []
    for i in range(cfg.steps):
        t = cfg.steps - 1 - i
        noise, residuals = model.forward(f, t, None)
        stream.append(residuals)
        f = step_update(f, noise, t, cfg)
    return stream


def count_computed(decisions: Iterable[CacheDecision]) -> int:
    return sum(1 for d in decisions if d.compute)
