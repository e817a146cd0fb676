"""Two-step frequentist calibration of computer models.

The parameter is estimated by minimising the empirical L2 distance between
field observations and the simulator (or a kernel ridge emulator of it);
the remaining discrepancy is then smoothed with penalized splines, and a
residual bootstrap gives percentile intervals and pointwise bands.
"""

from .bootstrap import (
    BootstrapConfig,
    BootstrapEnsemble,
    ConfidenceInterval,
    percentile_interval,
    pointwise_band,
    prediction_grid,
    run_bootstrap,
)
from .calibrate import (
    CalibrationResult,
    Objective,
    OptimizerConfig,
    TwoStepCalibrator,
    minimize,
    objective_eval,
    predict_reality,
    two_step,
    vectorize_simulator,
)
from .core import (
    ExperimentalDataset,
    ParameterSpace,
    ScalingMap,
    SimulatorDataset,
    UnitBoxScaler,
    parse_parameter_space,
    read_experimental_csv,
    read_simulator_csv,
    scale_inputs,
    validate_dataset,
)
from .emulator import KernelConfig, KernelRidgeEmulator, emulator_predict, fit_emulator, loocv_rmse
from .exceptions import (
    CalibrationError,
    ClippedInputWarning,
    ConvergenceWarning,
    DataError,
    NumericalFailure,
)
from .nonparam import (
    AdditiveModel,
    AdditiveSplineRegressor,
    PenalizedSplineRegressor,
    build_spline_basis,
    fit_additive,
    fit_penalized,
    gcv_score,
    select_lambda,
    spline_predict,
)
from .problems import (
    StudyReport,
    SyntheticProblem,
    coverage_study,
    generate_data,
    make_linear_problem,
    make_nonlinear_problem,
    rate_study,
)

__version__ = "0.1.0"

__all__ = [
    "AdditiveModel",
    "AdditiveSplineRegressor",
    "BootstrapConfig",
    "BootstrapEnsemble",
    "build_spline_basis",
    "CalibrationError",
    "CalibrationResult",
    "ClippedInputWarning",
    "ConfidenceInterval",
    "ConvergenceWarning",
    "coverage_study",
    "DataError",
    "emulator_predict",
    "ExperimentalDataset",
    "fit_additive",
    "fit_emulator",
    "fit_penalized",
    "gcv_score",
    "generate_data",
    "KernelConfig",
    "KernelRidgeEmulator",
    "loocv_rmse",
    "make_linear_problem",
    "make_nonlinear_problem",
    "minimize",
    "NumericalFailure",
    "Objective",
    "objective_eval",
    "OptimizerConfig",
    "ParameterSpace",
    "parse_parameter_space",
    "PenalizedSplineRegressor",
    "percentile_interval",
    "pointwise_band",
    "predict_reality",
    "prediction_grid",
    "rate_study",
    "read_experimental_csv",
    "read_simulator_csv",
    "run_bootstrap",
    "scale_inputs",
    "ScalingMap",
    "select_lambda",
    "SimulatorDataset",
    "spline_predict",
    "StudyReport",
    "SyntheticProblem",
    "two_step",
    "TwoStepCalibrator",
    "UnitBoxScaler",
    "validate_dataset",
    "vectorize_simulator",
]
