"""No-change test, simulated critical values and confidence intervals.

Critical values come from Monte Carlo tables of three limit laws:

* ``bridge_sup``: ``sup |W0(t)|`` over the trimmed grid,
* ``weighted_bridge_sup``: ``sup |W0(t)| / sqrt(t (1 - t))``,
* ``argmax_drift_bm``: ``argmax_v {W(v) - |v| / 2}`` for a two-sided
  Brownian motion ``W``.

Every simulated path uses its own stream keyed by ``(seed, path index)``,
so a table does not depend on how paths are split among workers.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from .changepoint import ChangePointFit, CusumTrace, trim_bounds
from .rng import ARGMAX_STREAM, BRIDGE_STREAM, generator, worker_count

TABLE_SCHEMA = "volcp.quantile_table"
TABLE_SCHEMA_VERSION = 1
_BLOCK = 256


class TableMismatchError(ValueError):
    """A quantile table does not describe the statistic it is applied to."""


class IntervalError(ValueError):
    """A confidence interval is undefined for the given fit."""


class Target(str, enum.Enum):
    BRIDGE_SUP = "bridge_sup"
    WEIGHTED_BRIDGE_SUP = "weighted_bridge_sup"
    ARGMAX_DRIFT_BM = "argmax_drift_bm"


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo size for a quantile table.

    ``grid`` is the number of bridge grid intervals; ``horizon`` and
    ``step`` only apply to the argmax law.
    """

    paths: int
    seed: int = 0
    grid: int | None = None
    horizon: float | None = None
    step: float | None = None
    trim_delta: float | None = None


def default_probabilities() -> np.ndarray:
    return np.round(np.arange(1, 1000) / 1000.0, 3)


@dataclass(frozen=True)
class QuantileTable:
    probabilities: np.ndarray
    quantiles: np.ndarray
    target: Target
    mc_config: McConfig

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        q = np.asarray(self.quantiles, dtype=float)
        if p.shape != q.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities and quantiles must be aligned vectors")
        if np.any((p <= 0) | (p >= 1)) or np.any(np.diff(p) <= 0):
            raise ValueError("probabilities must be increasing inside (0, 1)")
        if np.any(np.diff(q) < 0):
            raise ValueError("quantiles must be nondecreasing")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "quantiles", q)
        object.__setattr__(self, "target", Target(self.target))

    def quantile(self, p: float) -> float:
        """Quantile at ``p`` by linear interpolation inside the tabulated range."""
        lo, hi = self.probabilities[0], self.probabilities[-1]
        if not lo - 1e-12 <= p <= hi + 1e-12:
            raise ValueError(f"p={p} outside tabulated range [{lo}, {hi}]")
        return float(np.interp(min(max(p, lo), hi), self.probabilities, self.quantiles))

    def to_dict(self) -> dict:
        return {
            "schema": TABLE_SCHEMA,
            "schema_version": TABLE_SCHEMA_VERSION,
            "target": self.target.value,
            "mc_config": asdict(self.mc_config),
            "probabilities": [float(p) for p in self.probabilities],
            "quantiles": [float(q) for q in self.quantiles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileTable":
        if data.get("schema") != TABLE_SCHEMA:
            raise ValueError(f"not a quantile table: schema={data.get('schema')!r}")
        if data.get("schema_version") != TABLE_SCHEMA_VERSION:
            raise ValueError(f"unsupported table schema version {data.get('schema_version')!r}")
        return cls(
            np.array(data["probabilities"]),
            np.array(data["quantiles"]),
            Target(data["target"]),
            McConfig(**data["mc_config"]),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "QuantileTable":
        return cls.from_dict(json.loads(text))


def table_from_samples(samples, target: Target, mc: McConfig, probabilities=None) -> QuantileTable:
    probs = default_probabilities() if probabilities is None else np.asarray(probabilities, dtype=float)
    q = np.quantile(np.asarray(samples, dtype=float), probs)
    # np.quantile can be non-monotone by an ulp between tied order statistics
    q = np.maximum.accumulate(q)
    return QuantileTable(probs, q, target, mc)


def _run_blocks(total: int, fn, workers: int | None) -> np.ndarray:
    blocks = [(s, min(total, s + _BLOCK)) for s in range(0, total, _BLOCK)]
    w = worker_count(workers)
    if w == 1:
        parts = [fn(a, b) for a, b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=w) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), blocks))
    return np.concatenate(parts)


# -- statistics ---------------------------------------------------------------


def h0_statistics(trace: CusumTrace, trim_delta: float = 0.05, theta_tilde: float | None = None) -> tuple[float, float]:
    """``sqrt(n/2) max|D_k|`` and the studentized ``sqrt(n/2) max|V_k| / theta_tilde``.

    ``theta_tilde`` defaults to the mean squared residual, which makes the
    second statistic invariant to the residual scale.
    """
    lo, hi = trim_bounds(trace.n, trim_delta)
    theta_tilde = trace.z_bar if theta_tilde is None else float(theta_tilde)
    if not theta_tilde > 0:
        raise ValueError(f"theta_tilde must be positive, got {theta_tilde}")
    root = math.sqrt(trace.n / 2.0)
    stat_d = root * float(np.max(np.abs(trace.d[lo - 1:hi])))
    stat_v = root * float(np.max(np.abs(trace.v[lo - 1:hi]))) / theta_tilde
    return stat_d, stat_v


def bridge_sup_samples(
    trim_delta: float, weighted: bool, paths: int, grid: int, seed: int = 0, workers: int | None = None
) -> np.ndarray:
    """Suprema of ``|W0|`` (optionally weighted) on the grid ``j / grid`` over the trimmed range."""
    if paths < 1 or grid < 2:
        raise ValueError("need paths >= 1 and grid >= 2")
    if weighted and trim_delta <= 0:
        raise ValueError("the weighted bridge supremum needs trim_delta > 0")
    lo, hi = trim_bounds(grid, trim_delta)
    t = np.arange(lo, hi + 1) / grid
    weight = 1.0 / np.sqrt(t * (1.0 - t)) if weighted else None
    scale = 1.0 / math.sqrt(grid)

    def block(a: int, b: int) -> np.ndarray:
        xi = np.stack([generator(seed, BRIDGE_STREAM, i).standard_normal(grid) for i in range(a, b)])
        w = np.cumsum(xi, axis=1) * scale
        bridge = w[:, lo - 1:hi] - t * w[:, -1:]
        mag = np.abs(bridge)
        if weighted:
            mag *= weight
        return mag.max(axis=1)

    return _run_blocks(paths, block, workers)


def simulate_bridge_sup(trim_delta: float, weighted: bool, mc: McConfig, workers: int | None = None) -> QuantileTable:
    """Quantile table of the (weighted) trimmed Brownian-bridge supremum."""
    if mc.paths < 1000 or mc.grid is None or mc.grid < 1000:
        raise ValueError("bridge tables need at least 1000 paths and 1000 grid points")
    samples = bridge_sup_samples(trim_delta, weighted, mc.paths, mc.grid, mc.seed, workers)
    target = Target.WEIGHTED_BRIDGE_SUP if weighted else Target.BRIDGE_SUP
    mc = McConfig(paths=mc.paths, seed=mc.seed, grid=mc.grid, trim_delta=trim_delta)
    return table_from_samples(samples, target, mc)


def argmax_samples(
    horizon: float, step: float, paths: int, seed: int = 0, workers: int | None = None
) -> np.ndarray:
    """Grid argmax of ``W(v) - |v|/2`` on ``[-horizon, horizon]`` with spacing ``step``."""
    m = int(round(horizon / step))
    if m < 1 or paths < 1:
        raise ValueError("need paths >= 1 and horizon >= step")
    v = step * np.arange(1, m + 1)
    sd = math.sqrt(step)

    def block(a: int, b: int) -> np.ndarray:
        out = np.empty(b - a)
        for row, i in enumerate(range(a, b)):
            xi = generator(seed, ARGMAX_STREAM, i).standard_normal((2, m))
            walk = np.cumsum(xi, axis=1) * sd - 0.5 * v
            jl, jr = int(np.argmax(walk[0])), int(np.argmax(walk[1]))
            best_l, best_r = walk[0, jl], walk[1, jr]
            if max(best_l, best_r) <= 0.0:
                out[row] = 0.0
            elif best_l > best_r:
                out[row] = -v[jl]
            else:
                out[row] = v[jr]
        return out

    return _run_blocks(paths, block, workers)


def simulate_argmax_law(mc: McConfig, workers: int | None = None) -> QuantileTable:
    """Quantile table of ``argmax_v {W(v) - |v|/2}``.

    Warns when more than 0.1% of the argmaxes sit on the horizon, a sign
    that the horizon truncates the law.
    """
    horizon = 50.0 if mc.horizon is None else float(mc.horizon)
    step = 0.01 if mc.step is None else float(mc.step)
    if horizon < 30 or step > 0.01 * horizon or step <= 0:
        raise ValueError("argmax law needs horizon >= 30 and 0 < step <= horizon / 100")
    if mc.paths < 1:
        raise ValueError("need at least one path")
    samples = argmax_samples(horizon, step, mc.paths, mc.seed, workers)
    hits = float(np.mean(np.abs(samples) >= horizon - 0.5 * step))
    if hits > 1e-3:
        warnings.warn(f"{hits:.2%} of argmaxes hit the horizon {horizon}; increase it", RuntimeWarning)
    mc = McConfig(paths=mc.paths, seed=mc.seed, horizon=horizon, step=step)
    return table_from_samples(samples, Target.ARGMAX_DRIFT_BM, mc)


# -- test ---------------------------------------------------------------------


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class

    stat_d: float
    stat_v: float
    statistic: str
    trim_delta: float
    alpha: float
    critical_value: float
    reject: bool
    theta_tilde: float
    cv_provenance: dict = field(default_factory=dict)


def test_no_change(
    trace: CusumTrace, trim_delta: float, alpha: float, table: QuantileTable, theta_tilde: float | None = None
) -> TestReport:
    """Reject no-change when the statistic matching ``table`` exceeds its ``1 - alpha`` quantile."""
    if table.target is Target.ARGMAX_DRIFT_BM:
        raise TableMismatchError("the argmax table does not calibrate a no-change test")
    table_trim = table.mc_config.trim_delta
    if table_trim is None or not math.isclose(table_trim, trim_delta, rel_tol=0, abs_tol=1e-12):
        raise TableMismatchError(f"table trimmed at {table_trim}, statistic at {trim_delta}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    theta_tilde = trace.z_bar if theta_tilde is None else float(theta_tilde)
    stat_d, stat_v = h0_statistics(trace, trim_delta, theta_tilde)
    weighted = table.target is Target.WEIGHTED_BRIDGE_SUP
    stat = stat_v if weighted else stat_d
    cv = table.quantile(1.0 - alpha)
    return TestReport(
        stat_d=stat_d,
        stat_v=stat_v,
        statistic="stat_v" if weighted else "stat_d",
        trim_delta=trim_delta,
        alpha=alpha,
        critical_value=cv,
        reject=bool(stat > cv),
        theta_tilde=theta_tilde,
        cv_provenance={"target": table.target.value, **asdict(table.mc_config)},
    )


test_no_change.__test__ = False


# -- intervals ----------------------------------------------------------------


@dataclass(frozen=True)
class IntervalEstimate:
    target: str
    lower: float
    upper: float
    coverage: float
    method: dict = field(default_factory=dict)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _theta_tilde(fit: ChangePointFit, choice) -> float:
    if isinstance(choice, (int, float)) and not isinstance(choice, bool):
        return float(choice)
    try:
        return {"pooled": fit.z_bar, "theta1": fit.theta1_hat, "theta2": fit.theta2_hat}[choice]
    except KeyError:
        raise ValueError(f"theta_tilde must be pooled, theta1, theta2 or a number; got {choice!r}") from None


def _check_coverage(coverage: float) -> None:
    if not 0 < coverage < 1:
        raise ValueError(f"coverage must lie in (0, 1), got {coverage}")


def ci_changepoint(
    fit: ChangePointFit, coverage: float, table: QuantileTable, theta_tilde="pooled"
) -> IntervalEstimate:
    """Interval for the change fraction from the argmax law.

    ``n vartheta^2 (tau_hat - tau0) / (2 theta_tilde^2)`` is approximately
    distributed as the tabulated argmax, with ``vartheta`` replaced by
    ``theta2_hat - theta1_hat``.  The result is clipped to ``[1/n, (n-1)/n]``.
    """
    _check_coverage(coverage)
    if table.target is not Target.ARGMAX_DRIFT_BM:
        raise TableMismatchError(f"need an argmax table, got {table.target.value}")
    if fit.vartheta_hat == 0:
        raise IntervalError("theta2_hat == theta1_hat: no detectable change, interval undefined")
    tt = _theta_tilde(fit, theta_tilde)
    scale = 2.0 * tt * tt / (fit.n * fit.vartheta_hat**2)
    q_lo = table.quantile(0.5 * (1.0 - coverage))
    q_hi = table.quantile(0.5 * (1.0 + coverage))
    raw_lo = fit.tau_hat - q_hi * scale
    raw_hi = fit.tau_hat - q_lo * scale
    edge = 1.0 / fit.n
    lower = min(max(raw_lo, edge), 1.0 - edge)
    upper = min(max(raw_hi, edge), 1.0 - edge)
    return IntervalEstimate(
        "tau0", lower, upper, coverage,
        {
            "law": Target.ARGMAX_DRIFT_BM.value,
            "theta_tilde": theta_tilde if isinstance(theta_tilde, str) else "value",
            "theta_tilde_value": tt,
            "unclipped": [raw_lo, raw_hi],
            "table": asdict(table.mc_config),
        },
    )


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def ci_thetas(fit: ChangePointFit, coverage: float) -> tuple[IntervalEstimate, IntervalEstimate]:
    """Normal intervals with asymptotic variances ``2 theta^2 / tau`` and ``2 theta^2 / (1 - tau)``."""
    _check_coverage(coverage)
    tau = fit.tau_hat
    if not 0 < tau < 1:
        raise IntervalError(f"degenerate tau_hat={tau}")
    z = normal_quantile(0.5 * (1.0 + coverage))
    h1 = z * math.sqrt(2.0) * fit.theta1_hat / math.sqrt(fit.n * tau)
    h2 = z * math.sqrt(2.0) * fit.theta2_hat / math.sqrt(fit.n * (1.0 - tau))
    method = {"law": "normal", "z": z}
    return (
        IntervalEstimate("theta1", fit.theta1_hat - h1, fit.theta1_hat + h1, coverage, method),
        IntervalEstimate("theta2", fit.theta2_hat - h2, fit.theta2_hat + h2, coverage, method),
    )
