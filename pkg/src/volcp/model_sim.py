"""Diffusions with a single volatility switch, Euler simulation and the
non-explosion diagnostic based on the scale function.

The model is ``dX = b(X) dt + sqrt(theta) sigma(X) dW`` with ``theta``
equal to ``theta1`` before the change and ``theta2`` after it.  Coefficient
callables must accept floats and numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rng import PATH_STREAM, generator

Coefficient = Callable[[np.ndarray], np.ndarray]


class SimulationError(RuntimeError):
    """Euler recursion produced a non-finite state or left the state interval."""

    def __init__(self, index: int, value: float, reason: str = "non-finite value"):
        self.index = index
        self.value = value
        super().__init__(f"simulation failed at index {index}: {reason} ({value!r})")


class DiagnosticError(ValueError):
    """The scale-function quadrature hit sigma == 0 or a non-finite integrand."""

    def __init__(self, location: float, reason: str):
        self.location = location
        super().__init__(f"scale function undefined at x={location!r}: {reason}")


def change_index(n: int, tau0: float) -> int:
    """``floor(n * tau0)``; the 1e-9 slack absorbs binary representation error."""
    return int(math.floor(n * tau0 + 1e-9))


@dataclass(frozen=True)
class ModelSpec:
    """A diffusion with one volatility switch on an equispaced grid.

    Parameters
    ----------
    drift, diffusion
        ``b(x)`` and ``sigma(x)``, vectorised.
    theta1, theta2
        Volatility multipliers before and after the change.
    tau0
        Change fraction; increment ``i`` uses ``theta1`` iff ``i < floor(n tau0)``.
    x0, n, T
        Initial state, number of increments and horizon (``delta = T / n``).
    state_interval
        Open state space ``(l, r)``.
    constant_coefficients
        Set when ``b`` and ``sigma`` are constants; simulation then uses a
        cumulative sum that performs the same additions as the Euler loop.
    name, params
        Registry name and parameters, echoed into reports.
    """

    drift: Coefficient
    diffusion: Coefficient
    theta1: float
    theta2: float
    tau0: float
    n: int
    T: float = 1.0
    x0: float = 0.0
    state_interval: tuple[float, float] = (-math.inf, math.inf)
    constant_coefficients: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.tau0 < 1.0:
            raise ValueError(f"tau0 must lie in (0, 1), got {self.tau0}")
        # zero is allowed: it turns the scheme into forward Euler for the ODE
        if self.theta1 < 0 or self.theta2 < 0:
            raise ValueError("theta1 and theta2 must be non-negative")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        lo, hi = self.state_interval
        if not lo < hi:
            raise ValueError(f"empty state interval {self.state_interval}")
        if not lo < self.x0 < hi:
            raise ValueError(f"x0={self.x0} outside state interval {self.state_interval}")
        probe = _probe_grid(lo, hi, self.x0)
        with np.errstate(all="ignore"):
            sig = np.asarray(self.diffusion(probe), dtype=float) * np.ones_like(probe)
        bad = ~(np.isfinite(sig) & (sig > 0))
        if bad.any():
            x = float(probe[np.argmax(bad)])
            raise ValueError(f"diffusion must be positive on the state interval; sigma({x}) = {sig[np.argmax(bad)]}")

    @property
    def delta(self) -> float:
        return self.T / self.n

    @property
    def k0(self) -> int:
        return change_index(self.n, self.tau0)

    def replace(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


def _probe_grid(lo: float, hi: float, x0: float, size: int = 101) -> np.ndarray:
    if math.isfinite(lo) and math.isfinite(hi):
        return np.linspace(lo, hi, size + 2)[1:-1]
    if math.isfinite(lo):
        return lo + (x0 - lo) * np.geomspace(1e-3, 1e3, size)
    if math.isfinite(hi):
        return hi - (hi - x0) * np.geomspace(1e-3, 1e3, size)
    return x0 + np.linspace(-10.0, 10.0, size)


@dataclass(frozen=True)
class SamplePath:
    """Observations ``X_0, ..., X_n`` at spacing ``delta``."""

    delta: float
    values: np.ndarray
    change_index_true: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a path needs at least two observations")
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.n + 1)


def _noise(model: ModelSpec, seed: int) -> np.ndarray:
    """``sqrt(theta_i) * (W_{i+1} - W_i)`` for every increment."""
    xi = generator(seed, PATH_STREAM).standard_normal(model.n)
    dw = math.sqrt(model.delta) * xi
    scale = np.where(np.arange(model.n) < model.k0, math.sqrt(model.theta1), math.sqrt(model.theta2))
    return scale * dw


def simulate_path(model: ModelSpec, seed: int) -> SamplePath:
    """Euler scheme ``X_{i+1} = X_i + b(X_i) delta + sqrt(theta) sigma(X_i) dW_i``.

    Deterministic in ``(model, seed)``.  Raises :class:`SimulationError`
    with the failing index if the recursion produces a non-finite value or
    leaves the state interval.
    """
    noise = _noise(model, seed)
    delta = model.delta
    lo, hi = model.state_interval
    values = np.empty(model.n + 1)
    values[0] = model.x0

    if model.constant_coefficients:
        b = float(model.drift(model.x0))
        s = float(model.diffusion(model.x0))
        values[1:] = b * delta + s * noise
        np.cumsum(values, out=values)
        bad = ~(np.isfinite(values) & (values > lo) & (values < hi))
        if bad.any():
            i = int(np.argmax(bad))
            raise SimulationError(i, float(values[i]), "left the state interval")
        return SamplePath(delta, values, model.k0)

    drift, diffusion = model.drift, model.diffusion
    x = float(model.x0)
    with np.errstate(all="ignore"):
        for i in range(model.n):
            try:
                x = x + (float(drift(x)) * delta + float(diffusion(x)) * noise[i])
            except (OverflowError, FloatingPointError, ZeroDivisionError):
                raise SimulationError(i + 1, math.inf) from None
            if not math.isfinite(x):
                raise SimulationError(i + 1, x)
            if not lo < x < hi:
                raise SimulationError(i + 1, x, "left the state interval")
            values[i + 1] = x
    return SamplePath(delta, values, model.k0)


# -- registry ---------------------------------------------------------------


def _zero(x):
    return 0.0 * np.asarray(x, dtype=float)


def _one(x):
    return 1.0 + 0.0 * np.asarray(x, dtype=float)


def brownian(theta1: float, theta2: float, tau0: float, n: int, T: float = 1.0, x0: float = 0.0) -> ModelSpec:
    """Zero drift, unit diffusion."""
    return ModelSpec(
        _zero, _one, theta1, theta2, tau0, n, T, x0,
        constant_coefficients=True, name="bm", params={},
    )


def ornstein_uhlenbeck(
    theta1: float, theta2: float, tau0: float, n: int, T: float = 1.0, x0: float = 0.0,
    kappa: float = 1.0, mu: float = 0.0,
) -> ModelSpec:
    """``b(x) = kappa (mu - x)``, unit diffusion."""

    def drift(x):
        return kappa * (mu - x)

    return ModelSpec(
        drift, _one, theta1, theta2, tau0, n, T, x0,
        name="ou", params={"kappa": kappa, "mu": mu},
    )


def geometric(
    theta1: float, theta2: float, tau0: float, n: int, T: float = 1.0, x0: float = 1.0,
    mu: float = 0.0,
) -> ModelSpec:
    """``b(x) = mu x``, ``sigma(x) = x`` on ``(0, inf)``."""

    def drift(x):
        return mu * x

    def diffusion(x):
        return x

    return ModelSpec(
        drift, diffusion, theta1, theta2, tau0, n, T, x0,
        state_interval=(0.0, math.inf), name="geometric", params={"mu": mu},
    )


MODELS = {"bm": brownian, "ou": ornstein_uhlenbeck, "geometric": geometric}


def make_model(name: str, **kwargs) -> ModelSpec:
    """Build a registered model by name (``bm``, ``ou``, ``geometric``)."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**kwargs)


def describe_model(model: ModelSpec) -> dict:
    """JSON-ready description; enough to rebuild registry models."""
    return {
        "name": model.name,
        "theta1": model.theta1,
        "theta2": model.theta2,
        "tau0": model.tau0,
        "n": model.n,
        "T": model.T,
        "x0": model.x0,
        **model.params,
    }


# -- assumption A1 ------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureConfig:
    """Expanding-grid quadrature settings for :func:`check_nonexplosion`.

    ``growth`` is the geometric factor between segment lengths (or between
    distances to a finite boundary), ``threshold`` the partial-integral level
    taken as divergence, and a side counts as convergent once the relative
    increment stays below ``rtol`` for ``patience`` consecutive segments.
    """

    growth: float = 2.0
    threshold: float = 1e8
    first_step: float = 1.0
    max_segments: int = 200
    nodes: int = 64
    rtol: float = 1e-9
    patience: int = 3

    def __post_init__(self):
        if not self.growth > 1:
            raise ValueError("growth must exceed 1")
        if not self.threshold > 0 or not self.first_step > 0:
            raise ValueError("threshold and first_step must be positive")
        if self.nodes < 2 or self.max_segments < 1 or self.patience < 1:
            raise ValueError("nodes >= 2, max_segments >= 1 and patience >= 1 required")


@dataclass(frozen=True)
class SideTrace:
    boundary: float
    points: list
    log_partial: list
    diverges: bool
    reason: str


@dataclass(frozen=True)
class DiagnosticReport:
    left_integral_diverges: bool
    right_integral_diverges: bool
    details: dict


def _side(model: ModelSpec, x_ref: float, boundary: float, cfg: QuadratureConfig) -> SideTrace:
    direction = 1.0 if boundary > x_ref else -1.0
    g = cfg.growth
    log_thr = math.log(cfg.threshold)
    log_s = 0.0
    log_partial = -math.inf
    points, partials = [x_ref], []
    calm = 0
    a = x_ref
    for j in range(1, cfg.max_segments + 1):
        if math.isfinite(boundary):
            nxt = boundary + (x_ref - boundary) * g ** (-j)
        else:
            nxt = x_ref + direction * cfg.first_step * (g**j - 1) / (g - 1)
        if nxt == a or nxt == boundary:
            return SideTrace(boundary, points, partials, log_partial > log_thr or calm < cfg.patience,
                             "grid reached floating-point resolution")
        u = np.linspace(a, nxt, cfg.nodes + 1)
        with np.errstate(all="ignore"):
            sig = np.asarray(model.diffusion(u), dtype=float) * np.ones_like(u)
            rate = 2.0 * np.asarray(model.drift(u), dtype=float) / sig**2
        if np.any(sig == 0):
            raise DiagnosticError(float(u[np.argmax(sig == 0)]), "sigma is zero")
        if not np.all(np.isfinite(rate)):
            raise DiagnosticError(float(u[np.argmax(~np.isfinite(rate))]), "2b/sigma^2 is not finite")
        du = np.diff(u)
        # log s(u) = -int_{x_ref}^{u} 2b/sigma^2, integrated along the signed grid
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * du)))
        logs = log_s - cum
        if not np.all(np.isfinite(logs)):
            raise DiagnosticError(float(u[np.argmax(~np.isfinite(logs))]), "scale function not finite")
        peak = logs.max()
        w = np.exp(logs - peak)
        seg = np.sum(0.5 * (w[1:] + w[:-1]) * np.abs(du))
        log_inc = peak + math.log(seg) if seg > 0 else -math.inf
        prev = log_partial
        log_partial = np.logaddexp(log_partial, log_inc)
        log_s = float(logs[-1])
        a = nxt
        points.append(a)
        partials.append(float(log_partial))
        if log_partial > log_thr:
            return SideTrace(boundary, points, partials, True, "partial integral exceeded threshold")
        rel = math.exp(log_inc - log_partial) if math.isfinite(prev) else 1.0
        calm = calm + 1 if rel < cfg.rtol else 0
        if calm >= cfg.patience:
            return SideTrace(boundary, points, partials, False, "partial integral stabilized")
    return SideTrace(boundary, points, partials, True, "no stabilization within max_segments")


def check_nonexplosion(
    model: ModelSpec, x_ref: float | None = None, quad: QuadratureConfig | None = None
) -> DiagnosticReport:
    """Numerically probe divergence of the scale-function integrals at both ends.

    A side is reported divergent when its partial integral exceeds the
    threshold, or keeps growing without stabilizing until the grid budget is
    spent.  Divergence cannot be proven numerically; the full trace is kept
    in ``details``.
    """
    quad = quad or QuadratureConfig()
    lo, hi = model.state_interval
    x_ref = model.x0 if x_ref is None else float(x_ref)
    if not lo < x_ref < hi:
        raise ValueError(f"x_ref={x_ref} must lie strictly inside {model.state_interval}")
    left = _side(model, x_ref, lo, quad)
    right = _side(model, x_ref, hi, quad)
    return DiagnosticReport(left.diverges, right.diverges, {"left": left, "right": right, "x_ref": x_ref})
