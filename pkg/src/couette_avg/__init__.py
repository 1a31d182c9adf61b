"""Stochastic averaging for perturbations of Couette flow in a channel.

Spectral Galerkin solvers for the fast-slow vorticity system, its frozen
Gaussian invariant measure, the averaged slow equation, hypocoercive energy
diagnostics and an experiment harness.
"""

from .averaged import AveragedRun, holder_diagnostics, make_drift, solve_averaged
from .config import Coefficients, SimConfig, ValidationError
from .dynamics import (
    BlowUpError,
    FrozenInputs,
    ShearState,
    step_auxiliary,
    step_background,
    step_fast_slow,
    step_pseudo_linearized,
)
from .energy import (
    EnergyConstants,
    Monitor,
    dissipation,
    energy_neq,
    energy_zero,
    inequality_audit,
    monitor_step,
    sobolev_norm,
)
from .frozen import (
    FrozenOperator,
    FrozenOperatorUnstable,
    StationaryGaussian,
    assemble_frozen,
    estimate_bbar0,
    lyapunov_covariance,
    sample_stationary,
    simulate_frozen,
)
from .harness import ExperimentPlan, SweepResult, run_path, run_sweep
from .noise import NoiseSpec, RngStream, sample_dV, sample_dW, trace_norms
from .nonlinear import nonlin_B0, nonlin_b0, nonlin_bm, nonlin_bneq
from .spectral import (
    DomainError,
    Grid,
    SpectralField,
    biot_savart,
    dx,
    dy,
    frac_dy,
    heat_semigroup,
    inv_laplacian,
    laplacian,
    to_grid,
    to_spectral,
)

__version__ = "0.1.0"
