"""Semi-implicit Rothe method for parabolic variational inequalities with a
Navier-Stokes type convection term, with numerical certificates of the
discrete a priori estimates."""

from .core import (
    ConstantsLedger,
    ConvectionOperator,
    ConvexFunctional,
    DiscreteGelfand,
    convection_apply,
    norm_triple,
    phi_eval,
    prox_phi_node,
    young_constants,
)
from .oseen import StationarySolve, brute_force_vi, solve_stationary_vi, vi_residual
from .problems import Problem, ProblemSpec, build, make_problem, preset, preset_problem
from .rothe import (
    ConvergenceReport,
    RotheConfig,
    Trajectory,
    admissible_dt_bound,
    average_load,
    compute_beta,
    compute_T_star,
    convergence_study,
    interpolant_eval,
    rothe_run,
    traj_distance_L2V,
)

__version__ = "0.1.0"
