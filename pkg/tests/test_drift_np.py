import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from volcp.drift_np import (
    EPANECHNIKOV,
    GAUSSIAN,
    DriftEstimate,
    DriftEstimateError,
    get_kernel,
    kernel_eval,
    nw_drift,
    silverman_bandwidth,
)
from volcp.model_sim import ModelSpec, SamplePath, ornstein_uhlenbeck, simulate_path


def test_kernel_values():
    assert kernel_eval(GAUSSIAN, 0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert kernel_eval(EPANECHNIKOV, 0.0) == 0.75
    assert kernel_eval(EPANECHNIKOV, 1.5) == 0.0
    assert get_kernel("Gaussian") == GAUSSIAN


@pytest.mark.parametrize("kernel", [GAUSSIAN, EPANECHNIKOV])
def test_kernel_moments(kernel):
    for u in (0.3, 1.7):
        assert kernel(u) == kernel(-u)
    lim = math.inf if kernel is GAUSSIAN else 1.0
    mass = integrate.quad(lambda u: float(kernel(u)), -lim, lim)[0]
    first = integrate.quad(lambda u: u * float(kernel(u)), -lim, lim)[0]
    energy = integrate.quad(lambda u: float(kernel(u)) ** 2, -lim, lim)[0]
    assert abs(mass - 1.0) < 1e-6
    assert abs(first) < 1e-10
    assert math.isfinite(energy)
    assert np.all(kernel(np.linspace(-3, 3, 61)) >= 0)


def test_silverman_reference_value():
    x = np.linspace(0.0, 1.0, 100)
    x = x / x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    assert (q75 - q25) / 1.34 >= 1.0
    assert silverman_bandwidth(x) == pytest.approx(0.4220, abs=5e-5)


def test_silverman_scale_equivariant(rng):
    x = rng.standard_normal(300)
    assert silverman_bandwidth(4.0 * x) == pytest.approx(4.0 * silverman_bandwidth(x), rel=1e-12)


def test_silverman_edge_cases():
    assert 0 < silverman_bandwidth([0.0, 1.0]) < math.inf
    assert 0 < silverman_bandwidth([0.0] * 10 + [1.0]) < math.inf
    with pytest.raises(ValueError):
        silverman_bandwidth([2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        silverman_bandwidth([1.0])


def test_constant_slopes():
    path = SamplePath(0.5, np.arange(10) * 1.5)
    est = nw_drift(path)
    np.testing.assert_allclose(est(np.array([-3.0, 0.0, 4.2, 100.0])), 3.0, rtol=1e-14)


def test_small_bandwidth_picks_nearest_slope():
    path = SamplePath(1.0, [0.0, 1.0, 3.0, 2.0])
    slopes = np.diff(path.values)
    errors = []
    for h in (0.5, 0.25, 0.1):
        est = nw_drift(path, bandwidth=h)
        errors.append(np.max(np.abs(est(path.values[:-1]) - slopes)))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-6


def test_epanechnikov_empty_window_raises():
    est = nw_drift(SamplePath(1.0, [0.0, 0.1, 0.2, 0.3]), EPANECHNIKOV, bandwidth=0.5)
    with pytest.raises(DriftEstimateError) as err:
        est(np.array([0.1, 5.0]))
    assert err.value.x == 5.0


def test_gaussian_far_point_is_defined():
    est = nw_drift(SamplePath(1.0, [0.0, 1.0, 3.0, 2.0]), bandwidth=0.1)
    # weights underflow without rescaling; the nearest state (X=3, slope -1) dominates
    assert est(500.0) == pytest.approx(-1.0)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=40, unique=True),
    st.floats(0.05, 3.0),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=60, deadline=None)
def test_convex_combination_and_permutation(states, h, seed):
    rng = np.random.default_rng(seed)
    states = np.array(states)
    slopes = rng.standard_normal(states.size)
    est = DriftEstimate(states, slopes, h)
    perm = rng.permutation(states.size)
    shuffled = DriftEstimate(states[perm], slopes[perm], h)
    grid = np.linspace(-6, 6, 25)
    vals = est(grid)
    tol = 1e-12 * max(1.0, np.abs(slopes).max())
    assert np.all(vals >= slopes.min() - tol) and np.all(vals <= slopes.max() + tol)
    np.testing.assert_allclose(shuffled(grid), vals, rtol=1e-10, atol=1e-12)


def test_ou_drift_recovered_on_central_grid():
    model = ornstein_uhlenbeck(1.0, 1.0, 0.5, n=10_000, T=10.0)
    grid = np.linspace(-0.5, 0.5, 11)
    curves = np.array([nw_drift(simulate_path(model, s))(grid) for s in range(20)])
    assert np.max(np.abs(curves.mean(axis=0) + grid)) < 0.5


def test_translation_equivariance():
    # shifting the whole process by c (same noise) shifts the estimate by c
    c = 2.0
    base = ornstein_uhlenbeck(1.0, 1.0, 0.5, n=2000, T=5.0)
    moved = ModelSpec(lambda x: -(x - c), base.diffusion, 1.0, 1.0, 0.5, n=2000, T=5.0, x0=c)
    p0, p1 = simulate_path(base, 3), simulate_path(moved, 3)
    np.testing.assert_allclose(p1.values, p0.values + c, atol=1e-12)
    grid = np.linspace(-0.5, 0.5, 7)
    np.testing.assert_allclose(nw_drift(p1)(grid + c), nw_drift(p0)(grid), rtol=1e-6, atol=1e-8)


def test_slope_shift_is_additive():
    states = np.linspace(-1, 1, 30)
    slopes = np.sin(3 * states)
    grid = np.linspace(-1.2, 1.2, 9)
    a = DriftEstimate(states, slopes, 0.3)(grid)
    np.testing.assert_allclose(DriftEstimate(states, slopes + 0.7, 0.3)(grid), a + 0.7, rtol=1e-12)


def test_constant_drift_recovered():
    c = 1.5
    model = ModelSpec(lambda x: c + 0.0 * x, lambda x: 1.0 + 0.0 * x, 1.0, 1.0, 0.5, n=5000, T=10.0)
    errs = []
    for s in range(20):
        path = simulate_path(model, s)
        errs.append(nw_drift(path)(float(np.median(path.values))) - c)
    errs = np.array(errs)
    se = errs.std(ddof=1) / math.sqrt(errs.size)
    assert abs(errs.mean()) < 3 * se
