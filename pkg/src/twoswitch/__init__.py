"""Estimation and control over two-switch cognitive-radio links.

A two-switch link gates the signal path with two correlated Bernoulli
switches: ``s_t`` at the transmitter (unknown to the receiver) and ``s_r``
at the receiver (known), so the received signal is ``y = s_r (s_t C x + w)``.
This package provides:

- the primary-user topology model and all conditional switch probabilities,
- the optimal linear estimator for the open-loop system,
- the closed-loop estimator whose error covariance depends on the control,
- linear controllers (fixed gain, LQR, availability-scaled LQR) and a
  scalar dynamic-programming oracle showing that the optimal controller
  is not a linear function of the state estimate,
- mean-stability and peak-covariance stability tests,
- a seeded Monte Carlo harness with a CLI and reproduction presets.
"""

from .channel import (
    ChannelProbabilities,
    ChannelSchedule,
    PuTopology,
    SwitchSample,
    probabilities,
    sample,
    sample_batch,
    step_probabilities,
)
from .closed_loop import (
    ClFilterState,
    ClosedLoopModel,
    LinearController,
    cl_predict,
    cl_update,
    control,
    dc_feedforward,
    scaled_lqr_gain,
)
from .estimator import FilterState, SystemModel, init, predict, run_filter, update
from .linalg import induced_two_norm, lqr_gain, solve_dare, spectral_radius
from .separation import DpDemoResult, separation_demo
from .stability import (
    ExpectedGain,
    MeanStabilityReport,
    PeakCovReport,
    PeakCovarianceSeries,
    StoppingTimes,
    d_coefficients,
    expected_gain,
    extract_peaks,
    indices,
    mean_stability,
    peak_cov_condition,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelProbabilities",
    "ChannelSchedule",
    "ClFilterState",
    "ClosedLoopModel",
    "DpDemoResult",
    "ExpectedGain",
    "FilterState",
    "LinearController",
    "MeanStabilityReport",
    "PeakCovReport",
    "PeakCovarianceSeries",
    "PuTopology",
    "StoppingTimes",
    "SwitchSample",
    "SystemModel",
    "cl_predict",
    "cl_update",
    "control",
    "d_coefficients",
    "dc_feedforward",
    "expected_gain",
    "extract_peaks",
    "indices",
    "induced_two_norm",
    "init",
    "lqr_gain",
    "mean_stability",
    "peak_cov_condition",
    "predict",
    "probabilities",
    "run_filter",
    "sample",
    "sample_batch",
    "scaled_lqr_gain",
    "separation_demo",
    "solve_dare",
    "spectral_radius",
    "step_probabilities",
    "update",
]
