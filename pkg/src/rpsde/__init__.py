"""Random periodic solutions of semilinear SDEs with additive noise.

Y = Z + Y1 where Y1 is the stochastic convolution against the hyperbolic
semigroup and Z is the Picard fixed point of the drift integral equation.
"""
from .config import ExperimentConfig, load_config, parse_config
from .convolution import (
    DiffusionSpec, GridFunction, default_horizon, malliavin_y1, stationary_covariance_oracle,
    y1_at, y1_grid, y1_periodicity_defect, y1_tail_bound,
)
from .drift import (
    BoundsLedger, ConditionM, DriftSpec, check_condition_m, choose_cutoff_N, condition_m_ledger,
    cutoff, eval_F, eval_gradF,
)
from .errors import *  # noqa: F401,F403
from .solver import SolverConfig, SolveReport, contraction_constant, solve, solve_ensemble
from .spectral import HyperbolicSplitting, decompose, project, semigroup_apply, semigroup_matrix
from .stats import aggregate_moments
from .verifier import (
    IdentityReport, check_random_periodicity, check_stationary, integrate_forward,
    stationary_oracle,
)
from .wiener import ShiftedView, TimeGrid, WienerPath, coarsen, evaluate, increment_sum, sample, shift

__version__ = "0.1.0"
