"""Least-squares change-point estimation on squared residuals.

For a split after ``k`` residuals the within-segment sum of squares is
``U_k^2 = sum (z^2 - zbar)^2 - n V_k^2`` with ``V_k = S_n D_k / sqrt(k(n-k))``
and ``D_k = k/n - S_k/S_n``. Minimizing ``U_k^2`` is therefore maximizing
``|V_k|``; the estimator here maximizes the unweighted ``|D_k|`` instead,
which differs from ``|V_k|`` by the factor ``sqrt(k(n-k)) / S_n`` and so
can pick a different split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .residuals import ResidualSeries


class DegenerateInputError(ValueError):
    """All residuals vanish, so the CUSUM ratios are undefined."""


class TrimError(ValueError):
    """The trimmed search range contains no admissible split."""


def trim_bounds(n: int, trim_delta: float) -> tuple[int, int]:
    """Inclusive split range ``[ceil(delta n), floor((1 - delta) n)]`` within ``[1, n-1]``."""
    if not 0.0 <= trim_delta < 0.5:
        raise TrimError(f"trim_delta must lie in [0, 1/2), got {trim_delta}")
    lo = max(1, math.ceil(trim_delta * n - 1e-9))
    hi = min(n - 1, math.floor((1.0 - trim_delta) * n + 1e-9))
    if lo > hi:
        raise TrimError(f"no split index in [{lo}, {hi}] for n={n}, trim_delta={trim_delta}")
    return lo, hi


def _squares(res) -> np.ndarray:
    z = res.z if isinstance(res, ResidualSeries) else np.asarray(res, dtype=float)
    return z * z


@dataclass(frozen=True)
class CusumTrace:
    """Cumulative statistics of one residual series.

    ``s_cum[k-1] = S_k`` for ``k = 1..n``; ``d``, ``v`` and ``u2`` hold
    ``D_k``, ``V_k`` and ``U_k^2`` at position ``k-1`` for ``k = 1..n-1``.
    """

    n: int
    s_cum: np.ndarray
    d: np.ndarray
    v: np.ndarray
    u2: np.ndarray
    z_bar: float
    total_ss: float
    provenance: dict = field(default_factory=dict)

    @property
    def s_n(self) -> float:
        return float(self.s_cum[-1])

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.n)


def cusum_stats(res: ResidualSeries) -> CusumTrace:
    """Prefix-sum computation of ``S_k, D_k, V_k, U_k^2`` in O(n)."""
    sq = _squares(res)
    n = sq.size
    if n < 2:
        raise DegenerateInputError("need at least two residuals")
    s_cum = np.cumsum(sq)
    s_n = float(s_cum[-1])
    if not s_n > 0:
        raise DegenerateInputError("sum of squared residuals is zero")
    k = np.arange(1, n, dtype=float)
    s_k = s_cum[:-1]
    d = k / n - s_k / s_n
    v = s_n * d / np.sqrt(k * (n - k))
    z_bar = s_n / n
    total_ss = float(np.sum((sq - z_bar) ** 2))
    # n V_k^2 written through the segment means avoids forming S_n D_k twice
    gap = (s_n - s_k) / (n - k) - s_k / k
    u2 = total_ss - k * (n - k) / n * gap * gap
    provenance = {}
    if isinstance(res, ResidualSeries):
        provenance = {"mode": res.mode.value, "delta": res.delta}
    for arr in (s_cum, d, v, u2):
        arr.setflags(write=False)
    return CusumTrace(n, s_cum, d, v, u2, z_bar, total_ss, provenance)


@dataclass(frozen=True)
class ChangePointFit:
    k_hat: int
    tau_hat: float
    theta1_hat: float
    theta2_hat: float
    vartheta_hat: float
    trim_delta: float
    n: int
    z_bar: float
    search_range: tuple[int, int]
    tie_break: str = "smallest k"
    warnings: tuple = ()
    trace_ref: dict = field(default_factory=dict)


def split_estimates(trace: CusumTrace, k: int) -> tuple[float, float]:
    """Segment means ``(S_k / k, (S_n - S_k) / (n - k))`` of the squared residuals."""
    s_k = float(trace.s_cum[k - 1])
    return s_k / k, (trace.s_n - s_k) / (trace.n - k)


def estimate_changepoint(trace: CusumTrace, trim_delta: float = 0.05) -> ChangePointFit:
    """Maximize ``|D_k|`` over the trimmed range; the smallest maximizer wins ties."""
    lo, hi = trim_bounds(trace.n, trim_delta)
    window = np.abs(trace.d[lo - 1:hi])
    k_hat = lo + int(np.argmax(window))
    theta1, theta2 = split_estimates(trace, k_hat)
    warnings = ()
    if trim_delta == 0:
        warnings = ("untrimmed search: V_k is unstable near the ends of the sample",)
    return ChangePointFit(
        k_hat=k_hat,
        tau_hat=k_hat / trace.n,
        theta1_hat=theta1,
        theta2_hat=theta2,
        vartheta_hat=theta2 - theta1,
        trim_delta=trim_delta,
        n=trace.n,
        z_bar=trace.z_bar,
        search_range=(lo, hi),
        warnings=warnings,
        trace_ref={"n": trace.n, "s_n": trace.s_n, **trace.provenance},
    )


def objective_u2(res, k: int) -> float:
    """Brute-force within-segment sum of squares of ``z^2`` for a split after ``k``."""
    sq = _squares(res)
    n = sq.size
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    left, right = sq[:k], sq[k:]
    return float(np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2))
