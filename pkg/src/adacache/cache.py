"""Adaptive caching state machine.

One distance metric, one cache-rate and one set of computed steps are shared
by every DiT layer. On a computed step the chosen residual is compared with
its cached predecessor, the change (divided by the step gap) is looked up in a
codebook of basis cache-rates, and the whole network is reused until the gap
since the last compute reaches that rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from adacache.model import BlockResiduals
from adacache.motion import MotionState, regularize
from adacache.numerics import cosine_distance, mean_abs_diff, rms_diff


class ConfigError(ValueError):
    """Invalid cache or experiment configuration.

    ``path`` names the offending field, e.g. ``"metric.location"``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


METRIC_KINDS = ("l1", "l2", "cosine")
METRIC_LOCATIONS = ("start", "mid", "end", "averaged")
METRIC_RESIDUALS = ("p", "q", "r")


@dataclass(frozen=True)
class Codebook:
    """Ordered ``(threshold, rate)`` pairs.

    A rate is picked when the metric is below its threshold and at or above
    every earlier one. The last entry also catches anything larger.
    """

    entries: tuple[tuple[float, int], ...]
    name: str = ""

    def __post_init__(self):
        entries = tuple((float(th), int(rate)) for th, rate in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ConfigError("codebook is empty", "codebook")
        for idx, (th, rate) in enumerate(entries):
            if math.isnan(th):
                raise ConfigError(f"entry {idx} threshold is NaN", "codebook")
            if rate < 1:
                raise ConfigError(f"entry {idx} rate {rate} < 1", "codebook")
        for idx in range(1, len(entries)):
            (th0, r0), (th1, r1) = entries[idx - 1], entries[idx]
            if not th1 > th0:
                raise ConfigError(
                    f"thresholds must strictly increase (entry {idx}: {th1} <= {th0})",
                    "codebook",
                )
            if r1 > r0:
                raise ConfigError(
                    f"rates must not increase with threshold (entry {idx}: {r1} > {r0})",
                    "codebook",
                )

    @classmethod
    def from_mapping(cls, mapping: Mapping[float, int], name: str = "") -> "Codebook":
        return cls(tuple(sorted((float(k), int(v)) for k, v in mapping.items())), name)

    @property
    def rates(self) -> tuple[int, ...]:
        return tuple(rate for _, rate in self.entries)

    @property
    def bootstrap_rate(self) -> int:
        # The catch-all rate assumes maximal change, which is the only safe
        # assumption before any metric exists.
        return self.entries[-1][1]

    def lookup(self, c: float) -> int:
        return lookup_rate(self, c)

    def to_pairs(self) -> list[list]:
        return [[th, rate] for th, rate in self.entries]


PRESETS: dict[str, Codebook] = {
    "opensora-30-fast": Codebook.from_mapping(
        {0.08: 6, 0.16: 5, 0.24: 4, 0.32: 3, 0.40: 2, 1.00: 1}, "opensora-30-fast"
    ),
    "opensora-100-fast": Codebook.from_mapping(
        {0.03: 12, 0.05: 10, 0.07: 8, 0.09: 6, 0.11: 4, 1.00: 3}, "opensora-100-fast"
    ),
    "opensora-30-slow": Codebook.from_mapping(
        {0.08: 3, 0.16: 2, 0.24: 1, 1.00: 1}, "opensora-30-slow"
    ),
    # between the two 30-step books; not a published setting
    "toy-30-medium": Codebook.from_mapping(
        {0.08: 4, 0.16: 3, 0.24: 2, 1.00: 1}, "toy-30-medium"
    ),
    "all-compute": Codebook(((math.inf, 1),), "all-compute"),
}

PRESET_NOTES = {
    "opensora-30-fast": "AdaCache-fast, 30-step schedule",
    "opensora-100-fast": "AdaCache-fast, 100-step schedule",
    "opensora-30-slow": "AdaCache-slow, 30-step schedule",
    "toy-30-medium": "medium rates on the 30-step thresholds (toy model)",
    "all-compute": "rate 1 everywhere; equivalent to no caching",
}


def constant_codebook(rate: int) -> Codebook:
    return Codebook(((math.inf, rate),), f"constant-{rate}")


def get_codebook(spec: Union[str, Codebook, Mapping, Sequence]) -> Codebook:
    """Resolve a preset name, ``{threshold: rate}`` mapping or pair list."""
    if isinstance(spec, Codebook):
        return spec
    if isinstance(spec, str):
        try:
            return PRESETS[spec]
        except KeyError:
            raise ConfigError(
                f"unknown preset {spec!r}; known: {', '.join(PRESETS)}", "codebook"
            ) from None
    if isinstance(spec, Mapping):
        return Codebook.from_mapping(spec)
    return Codebook(tuple(tuple(pair) for pair in spec))


def lookup_rate(cb: Codebook, c: float) -> int:
    if not cb.entries:
        raise ConfigError("codebook is empty", "codebook")
    if c < 0 or math.isnan(c):
        raise ValueError(f"metric must be a non-negative number, got {c}")
    for threshold, rate in cb.entries[:-1]:
        if c < threshold:
            return rate
    return cb.entries[-1][1]


def compute_metric(p_prev: np.ndarray, p_curr: np.ndarray, k: int, kind: str = "l1") -> float:
    """Per-step rate of change between two computed residuals ``k`` steps apart.

    ``l1`` is the mean absolute difference, ``l2`` the root-mean-square
    difference, ``cosine`` one minus cosine similarity.
    """
    if k < 1:
        raise ValueError("step gap k must be >= 1")
    if p_prev.shape != p_curr.shape:
        raise ValueError(f"shape mismatch: {p_prev.shape} vs {p_curr.shape}")
    if kind == "l1":
        dist = mean_abs_diff(p_curr, p_prev)
    elif kind == "l2":
        dist = rms_diff(p_curr, p_prev)
    elif kind == "cosine":
        dist = cosine_distance(p_curr, p_prev)
    else:
        raise ValueError(f"unknown metric kind {kind!r}")
    return dist / k


@dataclass(frozen=True)
class MetricConfig:
    kind: str = "l1"
    location: str = "mid"
    residual: str = "p"

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ConfigError(f"must be one of {METRIC_KINDS}, got {self.kind!r}", "metric.kind")
        if self.location not in METRIC_LOCATIONS:
            raise ConfigError(
                f"must be one of {METRIC_LOCATIONS}, got {self.location!r}", "metric.location"
            )
        if self.residual not in METRIC_RESIDUALS:
            raise ConfigError(
                f"must be one of {METRIC_RESIDUALS}, got {self.residual!r}", "metric.residual"
            )

    def layer_indices(self, layers: int) -> tuple[int, ...]:
        if layers < 1:
            raise ConfigError("model has no layers", "metric.location")
        return {
            "start": (0,),
            "mid": (layers // 2,),
            "end": (layers - 1,),
            "averaged": tuple(range(layers)),
        }[self.location]


@dataclass(frozen=True)
class CacheDecision:
    compute: bool
    step: int
    metric: Optional[float] = None
    selected_rate: Optional[int] = None
    distance: Optional[float] = None
    m: Optional[float] = None
    mg: Optional[float] = None


@dataclass
class CacheState:
    """Mutable per-run scheduler state. ``k`` counts steps since the last compute."""

    metric_layers: tuple[int, ...]
    metric: MetricConfig = field(default_factory=MetricConfig)
    motion: Optional[MotionState] = None
    cached: Optional[list[BlockResiduals]] = None
    last_computed_step: int = -1
    rate: int = 1
    k: int = 0
    last_metric: Optional[float] = None

    @classmethod
    def create(
        cls,
        layers: int,
        metric: Optional[MetricConfig] = None,
        moreg: bool = False,
        frame_step: int = 1,
    ) -> "CacheState":
        metric = metric or MetricConfig()
        idx = metric.layer_indices(layers)
        motion = MotionState(frame_step=frame_step) if moreg else None
        return cls(metric_layers=idx, metric=metric, motion=motion)


def should_compute(state: CacheState, step: int) -> bool:
    """Advance ``state.k`` to ``step`` and report whether the network must run."""
    if state.cached is None:
        return True
    k = step - state.last_computed_step
    if k < 1:
        raise ValueError(f"step {step} does not follow last computed step {state.last_computed_step}")
    state.k = min(k, state.rate)
    return k >= state.rate


def on_compute(
    state: CacheState,
    residuals: Sequence[BlockResiduals],
    step: int,
    cb: Codebook,
) -> CacheDecision:
    """Record fresh residuals, pick the next cache-rate and reset ``k``."""
    for l in state.metric_layers:
        if not 0 <= l < len(residuals):
            raise ConfigError(
                f"metric layer {l} out of range for {len(residuals)} layers", "metric.location"
            )
    name = state.metric.residual
    current = [residuals[l].get(name) for l in state.metric_layers]

    if state.cached is None:
        decision = CacheDecision(compute=True, step=step, selected_rate=cb.bootstrap_rate)
        rate = cb.bootstrap_rate
        metric = None
    else:
        k = step - state.last_computed_step
        previous = [state.cached[l].get(name) for l in state.metric_layers]
        distance = float(
            np.mean([compute_metric(a, b, k, state.metric.kind) for a, b in zip(previous, current)])
        )
        m = mg = None
        metric = distance
        if state.motion is not None:
            m, mg = state.motion.update(current, step)
            metric = regularize(distance, m, mg)
        rate = lookup_rate(cb, metric)
        decision = CacheDecision(
            compute=True,
            step=step,
            metric=metric,
            selected_rate=rate,
            distance=distance,
            m=m,
            mg=mg,
        )

    state.cached = list(residuals)
    state.last_computed_step = step
    state.rate = rate
    state.k = 0
    state.last_metric = metric
    return decision


def replay(
    stream: Union[Sequence, Callable[[int], Sequence[BlockResiduals]]],
    cb: Codebook,
    steps: Optional[int] = None,
    metric: Optional[MetricConfig] = None,
    moreg: bool = False,
    frame_step: int = 1,
) -> list[CacheDecision]:
    """Drive the scheduler against a fixed residual stream.

    ``stream[i]`` (or ``stream(i)``) gives what the network would return at
    step ``i``: either a list of per-layer ``BlockResiduals`` or a single
    tensor, used as p, q and r of a one-layer network. Only entries at
    computed steps are read.
    """
    if callable(stream):
        fetch = stream
        if steps is None:
            raise ValueError("steps is required when stream is callable")
    else:
        fetch = stream.__getitem__
        steps = len(stream) if steps is None else steps

    def residuals_at(i: int) -> list[BlockResiduals]:
        item = fetch(i)
        if isinstance(item, np.ndarray):
            return [BlockResiduals(p=item, q=item, r=item, layer=0, computed_at_step=i)]
        return list(item)

    state: Optional[CacheState] = None
    decisions = []
    for i in range(steps):
        if state is None or should_compute(state, i):
            res = residuals_at(i)
            if state is None:
                state = CacheState.create(len(res), metric, moreg, frame_step)
            decisions.append(on_compute(state, res, i, cb))
        else:
            decisions.append(CacheDecision(compute=False, step=i))
    return decisions


def computed_steps(decisions: Iterable[CacheDecision]) -> list[int]:
    return [d.step for d in decisions if d.compute]
