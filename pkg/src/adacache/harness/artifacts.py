"""On-disk formats: latent binaries, JSONL traces, histogram CSVs.

Latent file layout (all little-endian):

    4 bytes   magic b"ADCL"
    1 byte    format version (1)
    1 byte    rank n
    n * u32   dimension sizes
    ...       row-major float32 values
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path
from typing import Union

import numpy as np

from adacache.sampler import RunTrace

LATENT_MAGIC = b"ADCL"
LATENT_VERSION = 1

PathLike = Union[str, Path]


def encode_latent(x: np.ndarray) -> bytes:
    shape = x.shape
    header = struct.pack("<4sBB", LATENT_MAGIC, LATENT_VERSION, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def decode_latent(data: bytes) -> np.ndarray:
    if len(data) < 6:
        raise ValueError("latent file truncated")
    magic, version, rank = struct.unpack_from("<4sBB", data)
    if magic != LATENT_MAGIC:
        raise ValueError(f"bad latent magic {magic!r}")
    if version != LATENT_VERSION:
        raise ValueError(f"unsupported latent format version {version}")
    offset = 6 + 4 * rank
    if len(data) < offset:
        raise ValueError("latent header truncated")
    shape = struct.unpack_from(f"<{rank}I", data, 6)
    count = int(np.prod(shape)) if rank else 1
    if len(data) != offset + 4 * count:
        raise ValueError(f"latent payload has {len(data) - offset} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def write_latent(path: PathLike, x: np.ndarray) -> None:
    Path(path).write_bytes(encode_latent(x))


def read_latent(path: PathLike) -> np.ndarray:
    return decode_latent(Path(path).read_bytes())


def write_trace(path: PathLike, trace: RunTrace) -> None:
    Path(path).write_text(trace.to_jsonl())


def read_trace(path: PathLike) -> RunTrace:
    return RunTrace.from_jsonl(Path(path).read_text())


HISTOGRAM_FIELDS = ("metric", "distance", "m", "mg")
HISTOGRAM_HEADER = ("step", "value", "bin", "bin_lo", "bin_hi", "bin_count")


def bin_values(values, bins: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equal-width binning over ``[min, max]``; the top edge is inclusive.

    Returns ``(edges, index_per_value, counts)``. A constant series puts
    everything in bin 0 with both edges at that value.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return np.zeros(bins + 1), np.zeros(0, dtype=np.int64), np.zeros(bins, dtype=np.int64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        edges = np.full(bins + 1, lo)
        idx = np.zeros(v.size, dtype=np.int64)
    else:
        edges = np.linspace(lo, hi, bins + 1)
        idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
        idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return edges, idx, counts


def histogram_csv(trace: RunTrace, field: str = "metric", bins: int = 10) -> str:
    """Per-step series of ``field`` with each value's bin and that bin's count."""
    if field not in HISTOGRAM_FIELDS:
        raise ValueError(f"field must be one of {HISTOGRAM_FIELDS}, got {field!r}")
    series = trace.series(field)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTOGRAM_HEADER)
    if series:
        steps, values = zip(*series)
        edges, idx, counts = bin_values(values, bins)
        for step, value, b in zip(steps, values, idx):
            writer.writerow(
                [step, repr(float(value)), int(b), repr(float(edges[b])), repr(float(edges[b + 1])), int(counts[b])]
            )
    return buf.getvalue()


def export_histogram(trace: RunTrace, field: str, bins: int, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(histogram_csv(trace, field, bins))
    return path
