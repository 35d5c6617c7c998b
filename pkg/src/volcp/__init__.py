"""Least-squares estimation of a volatility change point in a discretely
observed diffusion, with simulated critical values and confidence intervals."""

__version__ = "0.1.0"

from .changepoint import ChangePointFit, CusumTrace, cusum_stats, estimate_changepoint, objective_u2
from .drift_np import EPANECHNIKOV, GAUSSIAN, DriftEstimate, Kernel, kernel_eval, nw_drift, silverman_bandwidth
from .inference import (
    IntervalEstimate,
    McConfig,
    QuantileTable,
    Target,
    TestReport,
    ci_changepoint,
    ci_thetas,
    h0_statistics,
    simulate_argmax_law,
    simulate_bridge_sup,
    test_no_change,
)
from .model_sim import (
    ModelSpec,
    QuadratureConfig,
    SamplePath,
    check_nonexplosion,
    make_model,
    simulate_path,
)
from .montecarlo import ExperimentConfig, McSummary, ks_distance, rate_check, run_replications
from .residuals import ResidualSeries, residuals_estimated, residuals_known
