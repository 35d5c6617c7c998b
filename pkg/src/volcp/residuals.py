"""Standardized increments of an observed path.

Residual ``j`` is built from increment ``X_j -> X_{j+1}`` (``j = 0..n-1``),
so partial sums over the first ``k`` residuals cover the first ``k``
increments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .model_sim import SamplePath

if TYPE_CHECKING:
    from .drift_np import DriftEstimate


class ResidualMode(str, enum.Enum):
    KNOWN = "known"
    ESTIMATED = "estimated"


class ResidualError(ValueError):
    """Residuals cannot be formed (vanishing sigma, undefined drift, bad input)."""


@dataclass(frozen=True)
class ResidualSeries:
    z: np.ndarray
    mode: ResidualMode
    delta: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size < 1:
            raise ResidualError("residual series must be a non-empty vector")
        if not np.all(np.isfinite(z)):
            raise ResidualError(f"non-finite residual at index {int(np.argmax(~np.isfinite(z)))}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "mode", ResidualMode(self.mode))

    @property
    def n(self) -> int:
        return self.z.size


def _evaluate(f, x: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return np.asarray(f(x), dtype=float) * np.ones_like(x)


def residuals_known(
    path: SamplePath, drift, diffusion, eps_sigma: float = 1e-12
) -> ResidualSeries:
    """``Z_i = (X_{i+1} - X_i - b(X_i) delta) / (sqrt(delta) sigma(X_i))``."""
    x = path.values
    left = x[:-1]
    b = _evaluate(drift, left)
    s = _evaluate(diffusion, left)
    if not np.all(np.isfinite(b)):
        i = int(np.argmax(~np.isfinite(b)))
        raise ResidualError(f"drift not finite at index {i} (x={left[i]!r})")
    small = ~(np.abs(s) > eps_sigma)
    if small.any():
        i = int(np.argmax(small))
        raise ResidualError(f"|sigma(X_{i})| <= {eps_sigma:g} at index {i} (x={left[i]!r})")
    z = (np.diff(x) - b * path.delta) / (math.sqrt(path.delta) * s)
    return ResidualSeries(z, ResidualMode.KNOWN, path.delta)


def residuals_estimated(path: SamplePath, drift_estimate: "DriftEstimate") -> ResidualSeries:
    """Residuals under unit diffusion with the drift replaced by its estimate."""
    x = path.values
    b_hat = drift_estimate(x[:-1])
    z = (np.diff(x) - b_hat * path.delta) / math.sqrt(path.delta)
    return ResidualSeries(z, ResidualMode.ESTIMATED, path.delta)
