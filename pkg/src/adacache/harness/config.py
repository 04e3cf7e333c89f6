"""Experiment configuration: a YAML document with one section per concern.

Every ablation axis (metric kind, location and residual; codebook; MoReg
frame step) is a single key. ``model.steps`` is not written; it always
follows ``sampler.steps``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import yaml

from adacache.cache import Codebook, ConfigError, MetricConfig, get_codebook
from adacache.model import ModelConfig
from adacache.sampler import SamplerConfig

CodebookSpec = Union[str, tuple[tuple[float, int], ...]]


@dataclass(frozen=True)
class MoRegConfig:
    enabled: bool = False
    frame_step: int = 1

    def __post_init__(self):
        if self.frame_step < 1:
            raise ConfigError("must be >= 1", "moreg.frame_step")


@dataclass(frozen=True)
class ReportConfig:
    baseline: bool = True
    bins: int = 10

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("must be >= 1", "report.bins")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    codebook: CodebookSpec = "opensora-30-fast"
    moreg: MoRegConfig = field(default_factory=MoRegConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.model.steps != self.sampler.steps:
            raise ConfigError(
                f"model.steps={self.model.steps} differs from sampler.steps={self.sampler.steps}",
                "sampler.steps",
            )
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        self.resolved_codebook()
        if self.moreg.enabled and not self.moreg.frame_step < self.model.frames:
            raise ConfigError(
                f"must be < model.frames ({self.model.frames})", "moreg.frame_step"
            )

    def resolved_codebook(self) -> Codebook:
        return get_codebook(self.codebook)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with overrides; ``steps`` updates model and sampler together."""
        steps = changes.pop("steps", None)
        cfg = dataclasses.replace(self, **changes)
        if steps is not None:
            cfg = dataclasses.replace(
                cfg,
                model=dataclasses.replace(cfg.model, steps=steps),
                sampler=dataclasses.replace(cfg.sampler, steps=steps),
            )
        return cfg


def _section(cls, data: Any, path: str, **extra):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known or key in extra:
            raise ConfigError("unknown key", f"{path}.{key}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        kwargs[f.name] = _coerce(data[f.name], f, f"{path}.{f.name}")
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _coerce(value, f: dataclasses.Field, path: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def _codebook_from(value: Any) -> CodebookSpec:
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        pairs = sorted((float(k), v) for k, v in value.items())
    elif isinstance(value, list):
        pairs = value
    else:
        raise ConfigError("expected a preset name or a list of [threshold, rate]", "codebook")
    out = []
    for idx, pair in enumerate(pairs):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError("expected [threshold, rate]", f"codebook[{idx}]")
        th, rate = pair
        if isinstance(rate, bool) or not isinstance(rate, int):
            raise ConfigError(f"rate must be an integer, got {rate!r}", f"codebook[{idx}]")
        if isinstance(th, bool) or not isinstance(th, (int, float)):
            raise ConfigError(f"threshold must be a number, got {th!r}", f"codebook[{idx}]")
        out.append((float(th), rate))
    return tuple(out)


TOP_LEVEL = ("model", "sampler", "codebook", "moreg", "metric", "seeds", "output_dir", "report")


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    for key in data:
        if key not in TOP_LEVEL:
            raise ConfigError("unknown key", key)
    sampler = _section(SamplerConfig, data.get("sampler"), "sampler")
    model = _section(ModelConfig, data.get("model"), "model", steps=sampler.steps)
    kwargs: dict[str, Any] = {"model": model, "sampler": sampler}
    if "codebook" in data:
        kwargs["codebook"] = _codebook_from(data["codebook"])
    kwargs["moreg"] = _section(MoRegConfig, data.get("moreg"), "moreg")
    kwargs["metric"] = _section(MetricConfig, data.get("metric"), "metric")
    kwargs["report"] = _section(ReportConfig, data.get("report"), "report")
    if "seeds" in data:
        seeds = data["seeds"]
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            seeds = [seeds]
        if not isinstance(seeds, list) or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in seeds
        ):
            raise ConfigError("expected a list of integers", "seeds")
        kwargs["seeds"] = tuple(seeds)
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            raise ConfigError("expected a path string", "output_dir")
        kwargs["output_dir"] = data["output_dir"]
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    model = dataclasses.asdict(cfg.model)
    del model["steps"]
    codebook = cfg.codebook if isinstance(cfg.codebook, str) else [list(p) for p in cfg.codebook]
    return {
        "model": model,
        "sampler": dataclasses.asdict(cfg.sampler),
        "codebook": codebook,
        "moreg": dataclasses.asdict(cfg.moreg),
        "metric": dataclasses.asdict(cfg.metric),
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
        "report": dataclasses.asdict(cfg.report),
    }


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    return config_from_dict(data)


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
