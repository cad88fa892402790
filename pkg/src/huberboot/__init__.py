"""Adaptive Huber regression with multiplier-bootstrap inference.

The package fits Huber regressions with a damped semismooth Newton solver. It builds
bootstrap confidence sets, calibrates the robustification parameter from data, runs
large-scale intercept tests with FDP control and ships a seeded simulation harness.
"""

from .bootstrap import (
    BootstrapConfig,
    ConfidenceSet,
    WeightScheme,
    bootstrap_excess_samples,
    bootstrap_threshold,
    confidence_set_contains,
    draw_weights,
    run_ci,
)
from .calibration import (
    CalibrationConfig,
    LepskiConfig,
    huber_proposal2,
    irls_fit,
    lepski_select,
    mom_fourth_moment,
    simple_tau_rule,
    solve_censored_equation,
    truncated_mean,
    two_step_calibrate,
)
from .core import (
    Dataset,
    FitResult,
    SolverConfig,
    catoni_loss,
    catoni_score,
    fit_catoni,
    fit_huber,
    fit_huber_batch,
    fit_ols,
    generalized_hessian,
    huber_loss,
    huber_score,
    weighted_gradient,
    weighted_objective,
)
from .exceptions import (
    BootstrapFailureError,
    CalibrationError,
    ConfigurationError,
    DegenerateDataError,
    DegenerateDataWarning,
    DomainError,
    HuberbootError,
    NumericalError,
    ShapeError,
)
from .multitest import (
    MTestConfig,
    MTestResult,
    PanelData,
    bh_threshold,
    bootstrap_pvalues,
    fdp,
    fit_all,
    run_mtest,
    storey_threshold,
    tau_rule_theorem41,
)
from .simulation import (
    DesignModel,
    ExperimentSpec,
    NoiseModel,
    coverage_experiment,
    gen_design,
    gen_noise,
    mtest_experiment,
    preset_specs,
)

__version__ = "0.1.0"
