"""Tensor neural networks: separable quadrature, interpolation and PDE solvers."""

from .errors import (
    ConsistencyError,
    DegenerateChannelError,
    DegenerateTargetError,
    DegenerateTrialError,
    DomainError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    ParseError,
    SingularSystemError,
    TnnError,
)
from .grid import (
    SeparableGrid,
    energy_inner,
    gradient_of_inner,
    grid_from_separable,
    grid_from_tnn,
    integral,
    laplacian_cross,
    laplacian_inner,
    mass_inner,
    residual_norm_sq,
    stiffness_inner,
)
from .interp import FitReport, InterpConfig, train_interpolation
from .io import load_model, save_model
from .linalg import RidgePolicy, solve_spd
from .model import PointEvaluation, TnnModel, init_tnn, tnn_eval
from .optim import AdamState, LbfgsState, adam_step, lbfgs_step
from .pde import (
    Eig2dConfig,
    PoissonConfig,
    PoissonProblem,
    SolveReport,
    pinn_eig_loss,
    poisson_residual_loss,
    rayleigh_quotient,
    solve_poisson,
    train_eig2d,
)
from .quad import BoxDomain, Interval, composite_rule, gauss_legendre, integrate_1d, monte_carlo_integral
from .targets import builtin_target, parse_expression

__version__ = "0.1.0"
