"""Small deterministic tensor kernels used by the toy DiT and the cache metrics.

Tensors are plain ``numpy.ndarray`` objects with float32 dtype. Reductions
accumulate in float64 and cast back.
"""

from __future__ import annotations

import threading
from collections import Counter

import numpy as np

DTYPE = np.float32

_local = threading.local()


def _count(name: str) -> None:
    counter = getattr(_local, "calls", None)
    if counter is None:
        counter = _local.calls = Counter()
    counter[name] += 1


def kernel_calls() -> Counter:
    """Per-thread snapshot of how many times each kernel ran."""
    return Counter(getattr(_local, "calls", Counter()))


def reset_kernel_calls() -> None:
    _local.calls = Counter()


def as_tensor(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _check_axis(x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for tensor of rank {x.ndim}")
    return axis % x.ndim


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _count("matmul")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return np.matmul(a, b).astype(DTYPE, copy=False)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    _count("softmax")
    axis = _check_axis(x, axis)
    x64 = x.astype(np.float64)
    shifted = x64 - x64.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(DTYPE)


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    _count("layer_norm")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match last dim {d}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mean) ** 2).mean(axis=-1, keepdims=True)
    out = (x64 - mean) / np.sqrt(var + eps) * gain + bias
    return out.astype(DTYPE)


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    _count("gelu")
    x64 = x.astype(np.float64)
    inner = np.sqrt(2.0 / np.pi) * (x64 + 0.044715 * x64 * x64 * x64)
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(DTYPE)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    """Multi-head scaled dot-product attention over 2-D ``[tokens, channels]`` inputs.

    ``q`` may have a different token count from ``k``/``v`` (cross-attention).
    Projections are the caller's job; this only splits heads and mixes.
    """
    _count("attention")
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention expects 2-D [tokens, channels] tensors")
    n_q, d = q.shape
    if k.shape[1] != d or v.shape[1] != d:
        raise ValueError("q/k/v channel dims differ")
    if k.shape[0] != v.shape[0]:
        raise ValueError("k and v token counts differ")
    if heads < 1 or d % heads:
        raise ValueError(f"channels {d} not divisible by heads {heads}")
    dh = d // heads
    qh = q.reshape(n_q, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(-1, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(-1, heads, dh).transpose(1, 0, 2)
    logits = np.matmul(qh, kh.transpose(0, 2, 1)) / DTYPE(np.sqrt(dh))
    weights = softmax(logits, axis=-1)
    out = np.matmul(weights, vh)
    return np.ascontiguousarray(out.transpose(1, 0, 2).reshape(n_q, d), dtype=DTYPE)


def mean_abs(x: np.ndarray) -> float:
    return float(np.abs(x.astype(np.float64)).mean())


def mean_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean())


def rms_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt((d * d).mean()))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64).ravel()
    b64 = b.astype(np.float64).ravel()
    na, nb = np.linalg.norm(a64), np.linalg.norm(b64)
    if na == 0.0 and nb == 0.0:
        return 0.0
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(max(0.0, 1.0 - np.dot(a64, b64) / (na * nb)))
