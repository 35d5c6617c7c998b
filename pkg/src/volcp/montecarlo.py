"""Replication harness: simulate, estimate and infer over many seeded paths.

Replication ``r`` of master seed ``s`` simulates from ``derive_seed(s, r)``,
so every record can be reproduced on its own and the records do not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .changepoint import cusum_stats, estimate_changepoint
from .drift_np import get_kernel, nw_drift
from .inference import QuantileTable, Target, ci_changepoint, ci_thetas, h0_statistics, test_no_change
from .model_sim import ModelSpec, describe_model, simulate_path
from .residuals import residuals_estimated, residuals_known
from .rng import REPLICATION_STREAM, derive_seed, worker_count

SUMMARY_SCHEMA = "volcp.mc_summary"
SUMMARY_SCHEMA_VERSION = 1


class ReplicationError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        super().__init__(f"replication {index} failed: {cause}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``drift_mode`` is ``known`` (residuals from the model coefficients) or
    ``estimate`` (kernel drift, unit diffusion).  With ``compare_known`` an
    estimated-drift run also fits the known-drift residuals of the same
    path and records the gap ``sqrt(n) (V_hat - V)`` at the true split.
    Tables passed to :func:`run_replications` switch on the test
    (bridge tables) and the change-fraction interval (argmax table).
    """

    model: ModelSpec
    replications: int
    seed: int = 0
    trim_delta: float = 0.05
    drift_mode: str = "known"
    kernel: str = "gaussian"
    bandwidth: float | None = None
    alpha: float = 0.05
    coverage: float = 0.95
    theta_tilde: str = "pooled"
    compare_known: bool = False
    failure_budget: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.drift_mode not in ("known", "estimate"):
            raise ValueError(f"drift_mode must be 'known' or 'estimate', got {self.drift_mode!r}")
        if self.failure_budget < 0:
            raise ValueError("failure_budget must be >= 0")
        get_kernel(self.kernel)

    def describe(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        return {"model": describe_model(self.model), **d}


@dataclass
class ReplicationRecord:
    index: int
    seed: int
    k_hat: int | None = None
    tau_hat: float | None = None
    theta1_hat: float | None = None
    theta2_hat: float | None = None
    stat_d: float | None = None
    stat_v: float | None = None
    reject: bool | None = None
    tau_lower: float | None = None
    tau_upper: float | None = None
    tau_covered: bool | None = None
    theta1_covered: bool | None = None
    theta2_covered: bool | None = None
    tau_hat_known: float | None = None
    v_gap_k0: float | None = None
    error: str | None = None


def _replicate(cfg: ExperimentConfig, index: int, tables: dict) -> ReplicationRecord:
    model = cfg.model
    seed = derive_seed(cfg.seed, REPLICATION_STREAM, index)
    rec = ReplicationRecord(index=index, seed=seed)
    path = simulate_path(model, seed)
    if cfg.drift_mode == "known":
        res = residuals_known(path, model.drift, model.diffusion)
    else:
        res = residuals_estimated(path, nw_drift(path, cfg.kernel, cfg.bandwidth))
    trace = cusum_stats(res)
    fit = estimate_changepoint(trace, cfg.trim_delta)
    rec.k_hat, rec.tau_hat = fit.k_hat, fit.tau_hat
    rec.theta1_hat, rec.theta2_hat = fit.theta1_hat, fit.theta2_hat
    rec.stat_d, rec.stat_v = h0_statistics(trace, cfg.trim_delta)

    bridge = tables.get(Target.BRIDGE_SUP) or tables.get(Target.WEIGHTED_BRIDGE_SUP)
    if bridge is not None:
        rec.reject = test_no_change(trace, cfg.trim_delta, cfg.alpha, bridge).reject
    tau0 = model.k0 / model.n
    argmax = tables.get(Target.ARGMAX_DRIFT_BM)
    if argmax is not None and fit.vartheta_hat != 0:
        ci = ci_changepoint(fit, cfg.coverage, argmax, cfg.theta_tilde)
        rec.tau_lower, rec.tau_upper, rec.tau_covered = ci.lower, ci.upper, ci.contains(tau0)
    ci1, ci2 = ci_thetas(fit, cfg.coverage)
    rec.theta1_covered = ci1.contains(model.theta1)
    rec.theta2_covered = ci2.contains(model.theta2)

    if cfg.compare_known and cfg.drift_mode == "estimate":
        known = cusum_stats(residuals_known(path, model.drift, model.diffusion))
        rec.tau_hat_known = estimate_changepoint(known, cfg.trim_delta).tau_hat
        k0 = model.k0
        rec.v_gap_k0 = math.sqrt(model.n) * float(trace.v[k0 - 1] - known.v[k0 - 1])
    return rec


def _median(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _mean(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(records: list, model: dict) -> dict:
    """Headline numbers recomputed from per-replication records."""
    ok = [r for r in records if r.error is None]
    n = model["n"]
    tau0 = math.floor(n * model["tau0"] + 1e-9) / n
    err = [abs(r.tau_hat - tau0) for r in ok]
    out = {
        "replications": len(records),
        "failures": len(records) - len(ok),
        "tau0_grid": tau0,
        "median_abs_tau_error": _median(err),
        "q90_abs_tau_error": float(np.quantile(err, 0.9)) if err else None,
        "mean_theta1_hat": _mean(r.theta1_hat for r in ok),
        "mean_theta2_hat": _mean(r.theta2_hat for r in ok),
        "var_scaled_theta1": None,
        "var_scaled_theta2": None,
        "rejection_rate": _mean(r.reject for r in ok),
        "coverage_tau": _mean(r.tau_covered for r in ok),
        "coverage_theta1": _mean(r.theta1_covered for r in ok),
        "coverage_theta2": _mean(r.theta2_covered for r in ok),
        "median_abs_tau_error_known": None,
        "q95_abs_v_gap": None,
    }
    if len(ok) > 1:
        root = math.sqrt(n)
        out["var_scaled_theta1"] = float(np.var([root * (r.theta1_hat - model["theta1"]) for r in ok], ddof=1))
        out["var_scaled_theta2"] = float(np.var([root * (r.theta2_hat - model["theta2"]) for r in ok], ddof=1))
    known = [abs(r.tau_hat_known - tau0) for r in ok if r.tau_hat_known is not None]
    if known:
        out["median_abs_tau_error_known"] = float(np.median(known))
    gaps = [abs(r.v_gap_k0) for r in ok if r.v_gap_k0 is not None]
    if gaps:
        out["q95_abs_v_gap"] = float(np.quantile(gaps, 0.95))
    return out


@dataclass
class McSummary:
    config: dict
    records: list
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": SUMMARY_SCHEMA,
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "config": self.config,
            "aggregates": self.aggregates,
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict, check: bool = True) -> "McSummary":
        if data.get("schema") != SUMMARY_SCHEMA or data.get("schema_version") != SUMMARY_SCHEMA_VERSION:
            raise ValueError("not a supported Monte Carlo summary")
        records = [ReplicationRecord(**r) for r in data["records"]]
        summary = cls(data["config"], records, data["aggregates"])
        if check:
            again = aggregate(records, data["config"]["model"])
            if again != summary.aggregates:
                raise ValueError("summary aggregates do not match its records")
        return summary

    @classmethod
    def from_json(cls, text: str | bytes, check: bool = True) -> "McSummary":
        return cls.from_dict(json.loads(text), check)

    def records_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(ReplicationRecord)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for r in self.records:
            writer.writerow(["" if getattr(r, k) is None else repr(getattr(r, k)) for k in names])
        return buf.getvalue()


def run_replications(
    cfg: ExperimentConfig, tables: list | dict | None = None, workers: int | None = None
) -> McSummary:
    """Run ``cfg.replications`` independent replications.

    Failures are recorded with their index; once more than
    ``cfg.failure_budget`` replications fail the run aborts with
    :class:`ReplicationError`.
    """
    if tables is None:
        tables = {}
    elif not isinstance(tables, dict):
        tables = {t.target: t for t in tables}

    def one(i: int) -> ReplicationRecord:
        try:
            return _replicate(cfg, i, tables)
        except Exception as exc:  # noqa: BLE001 - recorded against the budget
            rec = ReplicationRecord(index=i, seed=derive_seed(cfg.seed, REPLICATION_STREAM, i))
            rec.error = f"{type(exc).__name__}: {exc}"
            rec._exc = exc
            return rec

    w = worker_count(workers)
    idx = range(cfg.replications)
    if w == 1:
        records = [one(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=w) as pool:
            records = list(pool.map(one, idx))

    failed = [r for r in records if r.error is not None]
    if len(failed) > cfg.failure_budget:
        first = failed[0]
        raise ReplicationError(first.index, first._exc) from first._exc
    for r in failed:
        del r._exc
    desc = cfg.describe()
    return McSummary(desc, records, aggregate(records, desc["model"]))


@dataclass(frozen=True)
class RateReport:
    ns: list
    medians: list
    slope: float
    intercept: float
    residuals: list


def fit_rate(ns, medians) -> RateReport:
    """Least-squares slope of ``log(median error)`` against ``log(n)``."""
    ns = np.asarray(ns, dtype=float)
    med = np.asarray(medians, dtype=float)
    if ns.size < 3:
        raise ValueError("rate check needs at least three sample sizes")
    if np.any(med <= 0) or np.any(ns <= 0):
        raise ValueError("sample sizes and median errors must be positive")
    x, y = np.log(ns), np.log(med)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateReport(ns.tolist(), med.tolist(), float(slope), float(intercept), resid.tolist())


def rate_check(summaries: list) -> RateReport:
    """Rate of the median ``|tau_hat - tau0|`` across summaries over an ``n`` schedule."""
    if len(summaries) < 3:
        raise ValueError("rate check needs at least three summaries")
    ns = [s.config["model"]["n"] for s in summaries]
    med = [s.aggregates["median_abs_tau_error"] for s in summaries]
    return fit_rate(ns, med)


def a2_schedule(model: ModelSpec, ns, c: float, gamma: float) -> list:
    """Models with ``theta2 = theta1 + c n^(-gamma)``: a shrinking but detectable change."""
    if not 0 <= gamma < 0.5:
        raise ValueError("gamma must lie in [0, 1/2)")
    return [model.replace(n=int(n), theta2=model.theta1 + c * n ** (-gamma)) for n in ns]


def ks_distance(sample, reference) -> float:
    """Kolmogorov-Smirnov distance to a second sample or to a CDF callable."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if callable(reference):
        return float(stats.kstest(x, reference).statistic)
    y = np.asarray(reference, dtype=float)
    if y.size == 0:
        raise ValueError("empty reference sample")
    return float(stats.ks_2samp(x, y).statistic)
