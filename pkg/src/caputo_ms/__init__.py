"""Simulation and mean-square verification toolkit for Volterra dynamics
with a tempered power-law memory kernel driven by tempered fractional
Gaussian noise over a compact driving system."""

__version__ = "0.1.0"

from .core import SamplePath, TimeGrid
from .driving import BasePoint, DrivingSystem, dist
from .errors import (
    CaputoMsError,
    ConfigError,
    DivergenceError,
    DomainError,
    GridError,
    NumericsError,
    ParameterError,
)
from .frac_kernel import (
    FracParams,
    KernelWeights,
    build_weights,
    kernel_eval,
    kernel_mass,
    reg_lower_gamma,
    series_bound,
    series_ratio,
)
from .solver import (
    CocycleState,
    VectorField,
    cocycle_apply,
    constant_field,
    exp_decay_state,
    linear_decay_field,
    rotation_forced_field,
    skew_product,
    solve_fsde,
    solve_volterra,
    zero_field,
)
from .tfbm import (
    IncrementCovariance,
    NoiseParams,
    convolution_variance,
    increment_cov,
    m_rho_alpha_h,
    phi_eval,
    phi_upper_bound,
    sample_increments,
    sample_paths,
)
from .diagnostics import (
    BoundReport,
    MomentSeries,
    WeightedNorm,
    absorbing_scan,
    bound_constants,
    check_shift_bound,
    check_moment_bound,
    cocycle_test,
    estimate_moments,
    omega_limit_proxy,
    rho_metric,
    theta_equilipschitz,
    time_modulus,
    weighted_norm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
