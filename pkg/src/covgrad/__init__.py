"""Covariance gradients for extended Kalman filters and uncertainty-aware planning.

The package runs a filter forward over a control horizon, differentiates a
scalar loss on the final error covariance with respect to every input of
the recursion in a single closed-form backward sweep, and uses those
gradients inside a constrained first-order trajectory optimizer. Finite
difference oracles and Monte Carlo studies validate both layers.
"""

from .backprop import BackpropIntermediates, GradientSet, backward_pass, gradient_of_loss
from .ekf import (
    BeliefState,
    EKFStepRecord,
    EKFTrace,
    forward_pass,
    information_update,
    kalman_update,
    propagate,
    update,
)
from .errors import (
    ConfigError,
    ContractError,
    CovgradError,
    DomainError,
    LineSearchError,
    ModelContractError,
    NotPSDError,
    NumericalError,
    SingularInnovationError,
    SingularNoiseError,
    SingularPriorError,
)
from .losses import LossKind, LossSpec, evaluate, seed_gradient
from .models import BicycleModel, BicycleParams, LinearModel, ScalarToyModel, SystemModel
from .montecarlo import ErrorSummary, TrialRecord, aggregate, rollout, run_trial, run_trials
from .planner import (
    CorridorSpec,
    OptimizerOptions,
    PlanProblem,
    PlanResult,
    Termination,
    line_search,
    optimize,
    project_constraints,
    sample_initial_controls,
)

__version__ = "0.1.0"
