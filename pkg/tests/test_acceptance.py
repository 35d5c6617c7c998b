"""Acceptance criteria, each at its stated tolerance.

Every test appends a one-line ``[PASS]`` or ``[FAIL]`` verdict to the
session log, which the terminal summary prints at the end of the run.
"""

import json
import math

import numpy as np
import pytest
from scipy import optimize, stats

from volcp import cli
from volcp.changepoint import cusum_stats, objective_u2
from volcp.inference import bridge_sup_samples
from volcp.model_sim import brownian, ornstein_uhlenbeck
from volcp.montecarlo import ExperimentConfig, ks_distance, rate_check, run_replications

pytestmark = pytest.mark.acceptance


def verdict(log, number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


def kolmogorov_quantile(p):
    """Root of the Kolmogorov series ``1 - 2 sum (-1)^(k-1) exp(-2 k^2 x^2) = p``."""
    k = np.arange(1, 101)

    def cdf(x):
        return 1.0 - 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * x * x))

    return optimize.brentq(lambda x: cdf(x) - p, 0.5, 3.0, xtol=1e-13)


def test_criterion_1_algebraic_identities(acceptance_log):
    rng = np.random.default_rng(1001)
    identity_ok = d_vs_v_ok = u2_vs_d_ok = u2_vs_v_ok = 0
    trials = 1000
    for _ in range(trials):
        n = int(rng.integers(3, 201))
        z = rng.standard_normal(n) * rng.uniform(0.2, 3.0)
        tr = cusum_stats(z)
        brute = np.array([objective_u2(z, k) for k in range(1, n)])
        scale = max(tr.total_ss, 1e-300)
        identity_ok += np.all(np.abs(tr.u2 - brute) <= 1e-10 * scale)
        k = np.arange(1, n)
        arg_u2 = int(np.argmin(brute))
        arg_d = int(np.argmax(np.abs(tr.d)))
        arg_wv = int(np.argmax(np.sqrt(k * (n - k)) * np.abs(tr.v)))
        arg_v = int(np.argmax(np.abs(tr.v)))
        d_vs_v_ok += arg_d == arg_wv
        u2_vs_d_ok += arg_u2 == arg_d
        u2_vs_v_ok += arg_u2 == arg_v
    ok = identity_ok == d_vs_v_ok == u2_vs_d_ok == trials
    verdict(
        acceptance_log, 1, ok,
        f"U2 identity {identity_ok}/{trials}, argmax|D| = argmax sqrt(k(n-k))|V| {d_vs_v_ok}/{trials}, "
        f"argmin U2 = argmax|D| {u2_vs_d_ok}/{trials} (argmin U2 = argmax|V| holds {u2_vs_v_ok}/{trials})",
    )


def test_criterion_2_null_law_and_size(acceptance_log, bridge_table):
    cfg = ExperimentConfig(brownian(1.0, 1.0, 0.5, n=5000), 2000, seed=2002, trim_delta=0.05, alpha=0.05)
    summary = run_replications(cfg, [bridge_table])
    stat_d = np.array([r.stat_d for r in summary.records])
    reference = bridge_sup_samples(0.05, False, 2000, 5000, seed=2003)
    ks = ks_distance(stat_d, reference)
    size = summary.aggregates["rejection_rate"]
    ok = ks < 0.05 and 0.03 <= size <= 0.07
    verdict(acceptance_log, 2, ok, f"KS distance {ks:.4f} (< 0.05), size {size:.4f} (in [0.03, 0.07])")


def test_criterion_3_kolmogorov_oracle(acceptance_log):
    oracle = kolmogorov_quantile(0.95)
    assert oracle == pytest.approx(stats.kstwobign.ppf(0.95), abs=1e-9)
    sups = bridge_sup_samples(0.0, False, 20000, 10000, seed=3003)
    q95 = float(np.quantile(sups, 0.95))
    ok = abs(q95 - oracle) <= 0.02
    verdict(acceptance_log, 3, ok, f"simulated q95 {q95:.4f} vs Kolmogorov {oracle:.4f} (|diff| <= 0.02)")


def test_criterion_4_rate(acceptance_log):
    base = brownian(1.0, 2.0, 0.5, n=500)
    summaries = [
        run_replications(ExperimentConfig(base.replace(n=n), 200, seed=4000 + n)) for n in (500, 2000, 8000)
    ]
    report = rate_check(summaries)
    meds = ", ".join(f"{m:.5f}" for m in report.medians)
    verdict(acceptance_log, 4, report.slope <= -0.8, f"log-log slope {report.slope:.3f} (<= -0.8); medians {meds}")


def test_criterion_5_tau_interval_coverage(acceptance_log, argmax_table):
    cfg = ExperimentConfig(brownian(1.0, 1.5, 0.5, n=10_000), 500, seed=5005, coverage=0.9)
    cov = run_replications(cfg, [argmax_table]).aggregates["coverage_tau"]
    verdict(acceptance_log, 5, 0.85 <= cov <= 0.95, f"90% interval coverage {cov:.3f} (in [0.85, 0.95])")


def test_criterion_6_theta_normality(acceptance_log):
    cfg = ExperimentConfig(brownian(1.0, 1.5, 0.5, n=10_000), 500, seed=6006, coverage=0.95)
    agg = run_replications(cfg).aggregates
    target = 2.0 * 1.0**2 / 0.5
    var1 = agg["var_scaled_theta1"]
    c1, c2 = agg["coverage_theta1"], agg["coverage_theta2"]
    ok = abs(var1 / target - 1) <= 0.15 and 0.92 <= c1 <= 0.98 and 0.92 <= c2 <= 0.98
    verdict(
        acceptance_log, 6, ok,
        f"var sqrt(n)(theta1_hat - theta1) {var1:.3f} vs {target:.1f} (within 15%); "
        f"95% coverage theta1 {c1:.3f}, theta2 {c2:.3f} (in [0.92, 0.98])",
    )


def test_criterion_7_estimated_drift(acceptance_log):
    model = ornstein_uhlenbeck(1.0, 2.0, 0.3, n=5000, T=5.0)
    cfg = ExperimentConfig(model, 200, seed=7007, drift_mode="estimate", compare_known=True)
    agg = run_replications(cfg).aggregates
    est, known = agg["median_abs_tau_error"], agg["median_abs_tau_error_known"]
    gap = agg["q95_abs_v_gap"]
    ok = est <= 2 * known and gap < 0.5
    verdict(
        acceptance_log, 7, ok,
        f"median error estimated {est:.5f} vs known {known:.5f} (<= 2x); "
        f"q95 |sqrt(n)(V_hat - V)| at k0 {gap:.3f} (< 0.5)",
    )


def _numeric_payload(blob: bytes):
    doc = json.loads(blob)
    doc.pop("config", None)
    return json.dumps(doc, sort_keys=True)


def test_criterion_8_determinism(acceptance_log, tmp_path, monkeypatch):
    exp = tmp_path / "exp.yaml"
    exp.write_text(
        "model: {name: ou, theta1: 1, theta2: 2, tau0: 0.4, n: 2000, T: 2}\n"
        "replications: 40\nseed: 8\ndrift_mode: estimate\ncompare_known: true\ncoverage: 0.9\n"
        "tables:\n  bridge: {paths: 2000, grid: 2000}\n  argmax: {paths: 2000}\n"
    )
    path = tmp_path / "path.csv"
    assert cli.main(["simulate", "--theta1", "1", "--theta2", "2", "--n", "3000", "--seed", "8",
                     "--out", str(path)]) == 0
    commands = {
        "mc": ["mc", str(exp)],
        "critvals-bridge": ["critvals", "--paths", "3000", "--grid", "2000", "--seed", "8", "--no-cache"],
        "critvals-weighted": ["critvals", "--target", "weighted", "--paths", "3000", "--grid", "2000",
                              "--seed", "8", "--no-cache"],
        "critvals-argmax": ["critvals", "--target", "argmax", "--argmax-paths", "3000", "--seed", "8",
                            "--no-cache"],
        "test": ["test", str(path), "--mc-paths", "2000", "--mc-grid", "2000", "--seed", "8", "--no-cache"],
        "ci": ["ci", str(path), "--argmax-paths", "2000", "--seed", "8", "--no-cache"],
    }
    outputs = {}
    for workers in ("1", "3"):
        monkeypatch.setenv("VOLCP_WORKERS", workers)
        for name, argv in commands.items():
            out = tmp_path / f"{name}-{workers}.json"
            assert cli.main(argv + ["--out", str(out)]) == 0
            outputs[name, workers] = out.read_bytes()
    same_bytes = [n for n in commands if outputs[n, "1"] == outputs[n, "3"]]
    same_numbers = [n for n in commands if _numeric_payload(outputs[n, "1"]) == _numeric_payload(outputs[n, "3"])]
    ok = len(same_numbers) == len(commands)
    verdict(
        acceptance_log, 8, ok,
        f"1 vs 3 workers: numeric payload identical for {len(same_numbers)}/{len(commands)} commands, "
        f"whole file identical for {len(same_bytes)}/{len(commands)}",
    )
