"""Survival analysis with neural-network-parameterized time-basis models."""

from ._kernels import BACKEND
from .basis import BasisSet, KnotGrid, make_basis
from .data import ColumnSpec, Dataset, DatasetSchema, SurvivalRecord, read_csv, write_csv
from .errors import (
    ConfigError,
    DataError,
    DatasetNotFoundError,
    DomainError,
    EstimationError,
    MetasurvError,
    StateError,
    UsageError,
)
from .estimation import (
    FitRecipe,
    TrainConfig,
    cox_partial_loglik,
    fit_recipe,
    full_loglik,
    kalbfleisch_prentice_baseline,
    kaplan_meier,
    train,
)
from .evaluation import (
    ChrSpec,
    EvalReport,
    cross_validate,
    integrated_squared_error,
    marginal_chr,
    rmse_urmse_bias,
)
from .models import (
    BaselineHazard,
    DhMnnModel,
    MnnModel,
    PhMnnModel,
    PositivityMap,
    QrMnnModel,
    StepFunction,
    dh_cumulative_hazard,
    dh_hazard,
    ph_cumulative_hazard,
    ph_hazard_ratio,
    qr_cumulative_hazard,
    qr_hazard,
    qr_quantile,
    survival,
    survival_curve,
)
from .modelio import load_model, save_model
from .network import GradientBuffer, NetworkParams, NetworkSpec, backward, forward, init_params
from .synthetic import SyntheticSpec, sample_dataset, true_hazards, true_survival

__version__ = "0.1.0"
