"""Covariance steering of unknown linear stochastic systems from input/state data."""

from .estimate import NoiseEstimate, estimate_noise, mle_noise_analytic, mle_noise_dc
from .sdpcore import SdpProblem, SolverAdapter, solve
from .steer import (
    Policy,
    SteeringSpec,
    evaluate_policy,
    solve_ddcs,
    solve_mbcs,
    solve_mean,
    solve_rddcs,
)
from .sysdata import Dataset, GaussianMoments, LtiSystem, build_hankel, collect, double_integrator

__version__ = "0.1.0"
