"""Ridge-penalized Mallows and jackknife model averaging for linear regression."""

from .criteria import (
    LABELS,
    METHODS,
    CriterionConfig,
    WeightVector,
    compute_weights,
    gcv_value,
    jackknife_value,
    kkt_residual,
    mallows_value,
    simplex_qp,
)
from .estimator import ModelAveragingRegressor, nested_specs
from .exceptions import (
    ModelAveragingError,
    DimensionMismatch,
    SingularDesign,
    LeverageOverflow,
    DegenerateVariance,
    SingularGram,
    NotPSD,
    NonConvergence,
    GCVDenominatorVanishes,
    DegenerateRSS,
    SingularMoment,
    BenchmarkAborted,
    ParseError,
    MissingResponse,
    ConstantColumn,
)
from .model_space import (
    CriterionMatrices,
    Dataset,
    FitBundle,
    ModelSpec,
    build_criterion_matrices,
    fit_models,
    fit_ols,
)
from .tuning import TuningConfig, TuningTrace, tuning_average, lambda_grid

__version__ = "0.1.0"
