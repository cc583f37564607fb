"""Monte Carlo lab: replicated experiments, diagnostics, and re-randomization."""

from .generators import (
    AdditionalCovariate,
    CategoricalGenerator,
    ContinuousGenerator,
    analytic_oracle_parameter,
    make_generator,
)
from .experiment import (
    ExperimentResult,
    normality_check,
    run_discrete_shift_study,
    run_experiment,
    shift_statistic,
)
from .diagnostics import (
    drift_check,
    drift_model_complete,
    drift_model_minimization,
    drift_model_pocock_simon,
    drift_model_shift_free,
    rho_tilde_estimate,
)
from .redesign import redesign_from_csv

__all__ = [
    "AdditionalCovariate",
    "CategoricalGenerator",
    "ContinuousGenerator",
    "ExperimentResult",
    "analytic_oracle_parameter",
    "drift_check",
    "drift_model_complete",
    "drift_model_minimization",
    "drift_model_pocock_simon",
    "drift_model_shift_free",
    "make_generator",
    "normality_check",
    "redesign_from_csv",
    "rho_tilde_estimate",
    "run_discrete_shift_study",
    "run_experiment",
    "shift_statistic",
]
