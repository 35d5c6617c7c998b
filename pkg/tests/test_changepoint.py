import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volcp.changepoint import (
    DegenerateInputError,
    TrimError,
    cusum_stats,
    estimate_changepoint,
    objective_u2,
    split_estimates,
    trim_bounds,
)
from volcp.model_sim import brownian, simulate_path
from volcp.residuals import residuals_known

FOUR = np.sqrt([1.0, 1.0, 4.0, 4.0])

series = arrays(
    float,
    st.integers(2, 120),
    elements=st.floats(-10, 10, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-3),
)


def _unique_peak(d):
    top = np.sort(d)[::-1]
    return top[0] > 1e-9 and (top.size == 1 or top[0] - top[1] > 1e-9 * top[0])


def test_worked_example():
    tr = cusum_stats(FOUR)
    np.testing.assert_allclose(tr.s_cum, [1, 2, 6, 10])
    np.testing.assert_allclose(tr.d, [0.15, 0.30, 0.15], atol=1e-15)
    assert tr.v[1] == pytest.approx(1.5)
    assert tr.u2[1] == pytest.approx(0.0, abs=1e-12)
    assert tr.z_bar == 2.5


def test_worked_fit():
    fit = estimate_changepoint(cusum_stats(FOUR), trim_delta=0.0)
    assert (fit.k_hat, fit.theta1_hat, fit.theta2_hat) == (2, 1.0, 4.0)
    assert fit.vartheta_hat == 3.0 and fit.tau_hat == 0.5
    assert fit.warnings  # untrimmed search is flagged


def test_objective_examples():
    assert objective_u2(FOUR, 2) == 0.0
    assert objective_u2(FOUR, 1) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        objective_u2(FOUR, 4)


def test_constant_series_has_zero_cusum():
    tr = cusum_stats(np.full(50, 1.3))
    assert np.max(np.abs(tr.d)) < 1e-14


def test_scaling():
    z = np.random.default_rng(0).standard_normal(80)
    a, b = cusum_stats(z), cusum_stats(3.0 * z)
    np.testing.assert_allclose(b.d, a.d, atol=1e-14)
    np.testing.assert_allclose(b.v, 9.0 * a.v, rtol=1e-12)
    np.testing.assert_allclose(b.s_cum, 9.0 * a.s_cum, rtol=1e-12)


def test_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        cusum_stats(np.zeros(10))
    with pytest.raises(DegenerateInputError):
        cusum_stats(np.ones(1))


def test_trim_bounds():
    assert trim_bounds(100, 0.05) == (5, 95)
    assert trim_bounds(4, 0.0) == (1, 3)
    assert trim_bounds(5000, 0.3) == (1500, 3500)
    with pytest.raises(TrimError):
        trim_bounds(10, 0.5)
    with pytest.raises(TrimError):
        trim_bounds(3, 0.45)
    with pytest.raises(TrimError):
        estimate_changepoint(cusum_stats(np.ones(3)), trim_delta=0.45)


def test_ties_pick_smallest_k():
    z = np.sqrt([1.0, 4.0, 1.0, 4.0, 1.0])
    tr = cusum_stats(z)
    peak = np.max(np.abs(tr.d))
    first = int(np.flatnonzero(np.isclose(np.abs(tr.d), peak))[0]) + 1
    assert estimate_changepoint(tr, 0.0).k_hat == first


@given(series)
@settings(max_examples=200, deadline=None)
def test_identity_and_argmax_equivalence(z):
    assume(np.sum(z * z) > 0)
    tr = cusum_stats(z)
    n = z.size
    brute = np.array([objective_u2(z, k) for k in range(1, n)])
    scale = max(tr.total_ss, np.max(z * z) ** 2, 1e-300)
    np.testing.assert_allclose(tr.u2, brute, rtol=1e-10, atol=1e-10 * scale)
    k = np.arange(1, n)
    score_d = np.abs(tr.d)
    score_v = np.sqrt(k * (n - k)) * np.abs(tr.v) / tr.s_n
    np.testing.assert_allclose(score_v, score_d, rtol=1e-12, atol=1e-15)
    # least squares picks the largest |V_k|, up to rounding in U2 units
    v2 = tr.v * tr.v
    assert n * (v2.max() - v2[np.argmin(brute)]) <= 1e-9 * scale


def test_least_squares_and_cusum_can_disagree():
    # z^2 = [0, 36, 49, 64]: U^2 is smallest at k=1 while |D_k| peaks at k=2
    z = np.array([0.0, 6.0, 7.0, 8.0])
    tr = cusum_stats(z)
    brute = [objective_u2(z, k) for k in (1, 2, 3)]
    assert int(np.argmin(brute)) + 1 == 1 == int(np.argmax(np.abs(tr.v))) + 1
    assert estimate_changepoint(tr, 0.0).k_hat == 2


@given(series, st.floats(0.1, 10))
@settings(max_examples=100, deadline=None)
def test_location_scale_invariance(z, c):
    assume(np.sum(z * z) > 1e-6)
    a = estimate_changepoint(cusum_stats(z), 0.0)
    b = estimate_changepoint(cusum_stats(c * z), 0.0)
    tr = cusum_stats(z)
    d = np.abs(tr.d)
    assume(_unique_peak(d))
    assert a.k_hat == b.k_hat
    assert b.theta1_hat == pytest.approx(c * c * a.theta1_hat, rel=1e-9)
    assert b.theta2_hat == pytest.approx(c * c * a.theta2_hat, rel=1e-9)


@given(series)
@settings(max_examples=100, deadline=None)
def test_complementarity(z):
    assume(np.sum(z * z) > 0)
    tr = cusum_stats(z)
    for k in range(1, z.size):
        t1, t2 = split_estimates(tr, k)
        assert t1 >= 0 and t2 >= 0
        assert k * t1 + (z.size - k) * t2 == pytest.approx(tr.s_n, rel=1e-12)


@given(series)
@settings(max_examples=100, deadline=None)
def test_reversal_symmetry(z):
    assume(np.sum(z * z) > 1e-6)
    tr = cusum_stats(z)
    d = np.abs(tr.d)
    assume(_unique_peak(d))
    fwd = estimate_changepoint(tr, 0.0)
    rev = estimate_changepoint(cusum_stats(z[::-1]), 0.0)
    assert rev.k_hat == z.size - fwd.k_hat


def test_fit_within_trim_under_null():
    model = brownian(1.0, 1.0, 0.5, n=1000)
    for seed in range(20):
        res = residuals_known(simulate_path(model, seed), model.drift, model.diffusion)
        fit = estimate_changepoint(cusum_stats(res), 0.1)
        assert 100 <= fit.k_hat <= 900


def test_location_accuracy_monte_carlo():
    model = brownian(1.0, 2.0, 0.3, n=5000)
    errors = []
    for seed in range(200):
        res = residuals_known(simulate_path(model, seed), model.drift, model.diffusion)
        errors.append(abs(estimate_changepoint(cusum_stats(res)).tau_hat - 0.3))
    assert np.median(errors) < 0.01
    assert math.isfinite(np.mean(errors))
