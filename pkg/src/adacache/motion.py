"""Motion regularization: a latent motion score from residual frame
differences, its gradient across computed steps, and the metric scaling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from adacache.numerics import mean_abs_diff


@dataclass
class MotionState:
    frame_step: int = 1
    m: float = 0.0
    mg: float = 0.0
    last_m: Optional[float] = None
    last_m_step: int = -1

    def __post_init__(self):
        if self.frame_step < 1:
            raise ValueError("frame_step must be >= 1")

    def update(self, residuals: Sequence[np.ndarray], step: int) -> tuple[float, float]:
        """Refresh m and mg from freshly computed residuals at ``step``.

        Several residuals (one per metric layer) are averaged. The first
        update has no predecessor and sets mg to 0.
        """
        m = float(np.mean([motion_score(p, self.frame_step) for p in residuals]))
        if self.last_m is None:
            mg = 0.0
        else:
            mg = motion_gradient(m, self.last_m, step - self.last_m_step)
        self.m, self.mg = m, mg
        self.last_m, self.last_m_step = m, step
        return m, mg


def motion_score(p: np.ndarray, i: int = 1) -> float:
    """Mean absolute difference between frames ``i`` apart along axis 0."""
    n = p.shape[0]
    if not 1 <= i < n:
        raise ValueError(f"frame step {i} must satisfy 1 <= i < {n}")
    return mean_abs_diff(p[i:], p[: n - i])


def motion_gradient(m_curr: float, m_prev: float, k: int) -> float:
    if k < 1:
        raise ValueError("step gap k must be >= 1")
    return (m_curr - m_prev) / k


def regularize(c: float, m: float, mg: float) -> float:
    """Scale a distance metric by the motion estimate.

    ``m + mg`` is clamped at zero, since a negative metric has no meaning for
    codebook lookup.
    """
    if c < 0:
        raise ValueError("metric must be non-negative")
    return c * max(0.0, m + mg)
