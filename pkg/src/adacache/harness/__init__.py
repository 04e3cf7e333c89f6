from adacache.harness.artifacts import (
    bin_values,
    export_histogram,
    histogram_csv,
    read_latent,
    read_trace,
    write_latent,
    write_trace,
)
from adacache.harness.config import (
    ExperimentConfig,
    MoRegConfig,
    ReportConfig,
    load_config,
    parse_config,
    serialize_config,
)
from adacache.harness.report import (
    ComparisonReport,
    FlopsReport,
    closed_form_speedup,
    compare_runs,
)
from adacache.harness.runner import SeedResult, run_experiment

__all__ = [
    "ComparisonReport",
    "ExperimentConfig",
    "FlopsReport",
    "MoRegConfig",
    "ReportConfig",
    "SeedResult",
    "bin_values",
    "closed_form_speedup",
    "compare_runs",
    "export_histogram",
    "histogram_csv",
    "load_config",
    "parse_config",
    "read_latent",
    "read_trace",
    "run_experiment",
    "serialize_config",
    "write_latent",
    "write_trace",
]
