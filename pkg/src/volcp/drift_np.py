"""Nadaraya-Watson drift estimation for paths with unknown drift.

The estimator averages the local slopes ``(X_{j+1} - X_j) / delta`` with
kernel weights centred at the evaluation point, using every sampled state
(no leave-one-out).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model_sim import SamplePath

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK_ELEMENTS = 1_000_000


class DriftEstimateError(ValueError):
    """Raised when the kernel weights vanish at a requested state."""

    def __init__(self, x: float):
        self.x = x
        super().__init__(f"drift estimate undefined at x={x!r}: kernel weights sum to zero")


class KernelId(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"


@dataclass(frozen=True)
class Kernel:
    id: KernelId

    def __call__(self, u):
        return kernel_eval(self, u)


GAUSSIAN = Kernel(KernelId.GAUSSIAN)
EPANECHNIKOV = Kernel(KernelId.EPANECHNIKOV)


def get_kernel(name: str | Kernel) -> Kernel:
    if isinstance(name, Kernel):
        return name
    return Kernel(KernelId(str(name).lower()))


def kernel_eval(kernel: Kernel, u):
    u = np.asarray(u, dtype=float)
    if kernel.id is KernelId.GAUSSIAN:
        return _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def silverman_bandwidth(states) -> float:
    """Normal-reference bandwidth ``1.06 min(s, IQR / 1.34) n^(-1/5)``.

    When the IQR is zero but the spread is not (heavily tied samples), the
    standard deviation alone is used.
    """
    x = np.asarray(states, dtype=float)
    if x.size < 2:
        raise ValueError("bandwidth needs at least two states")
    s = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    if not s > 0:
        raise ValueError("states have zero dispersion; bandwidth undefined")
    spread = min(s, iqr) if iqr > 0 else s
    return 1.06 * spread * x.size ** (-0.2)


@dataclass(frozen=True)
class DriftEstimate:
    """Kernel drift estimate; call it on states to evaluate ``b_hat``."""

    sample_states: np.ndarray
    sample_slopes: np.ndarray
    bandwidth: float
    kernel: Kernel = GAUSSIAN

    def __post_init__(self):
        states = np.asarray(self.sample_states, dtype=float)
        slopes = np.asarray(self.sample_slopes, dtype=float)
        if states.shape != slopes.shape or states.ndim != 1:
            raise ValueError("states and slopes must be aligned vectors")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        states.setflags(write=False)
        slopes.setflags(write=False)
        object.__setattr__(self, "sample_states", states)
        object.__setattr__(self, "sample_slopes", slopes)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        rows = max(1, _CHUNK_ELEMENTS // max(1, self.sample_states.size))
        for start in range(0, flat.size, rows):
            out[start:start + rows] = self._evaluate(flat[start:start + rows])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        if self.kernel.id is KernelId.GAUSSIAN:
            w = self._gaussian_weights(x)
        else:
            w = kernel_eval(self.kernel, (self.sample_states[None, :] - x[:, None]) / self.bandwidth)
        den = w.sum(axis=1)
        if np.any(den <= 0):
            raise DriftEstimateError(float(x[np.argmax(den <= 0)]))
        return (w @ self.sample_slopes) / den

    def _gaussian_weights(self, x: np.ndarray) -> np.ndarray:
        # unnormalized exp(-u^2/2); the constant cancels in the ratio
        w = self.sample_states[None, :] - x[:, None]
        w *= w
        w *= -0.5 / (self.bandwidth * self.bandwidth)
        far = w.max(axis=1) < -700.0
        if far.any():
            # rows whose weights would all underflow: rescale by the row maximum
            w[far] -= w[far].max(axis=1, keepdims=True)
        np.exp(w, out=w)
        return w


def nw_drift(path: SamplePath, kernel: Kernel | str = GAUSSIAN, bandwidth: float | None = None) -> DriftEstimate:
    """Fit the Nadaraya-Watson drift on ``(X_j, (X_{j+1} - X_j) / delta)``, ``j = 0..n-1``.

    ``bandwidth=None`` selects :func:`silverman_bandwidth` on the states.
    """
    x = path.values
    states = x[:-1]
    slopes = np.diff(x) / path.delta
    h = silverman_bandwidth(states) if bandwidth is None else float(bandwidth)
    return DriftEstimate(states, slopes, h, get_kernel(kernel))
