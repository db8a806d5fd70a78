"""Kernel varying-coefficient decomposition of longitudinal group disparities.

Estimates how an outcome gap between a majority and a minority group evolves
over time and splits it into an unexplained part, a part explained by
covariates, and a part explained by a distinguished modifier variable, with
bootstrap simultaneous confidence bands.
"""

from .bandwidth import BandwidthGrid, CVResult, select_bandwidths_cv
from .data import (
    ColumnSchema,
    LongitudinalDataset,
    ModifierSpec,
    Subject,
    canonical_schema,
    load_dataset,
    summarize,
    write_dataset,
    write_datasets,
)
from .decomposition import (
    Bandwidths,
    DecompositionCurve,
    GroupBandwidths,
    TimeGrid,
    estimate_cmldd,
    estimate_decomposition,
    estimate_ldd,
    estimate_mldd,
)
from .errors import (
    ConfigError,
    DataError,
    EmptyLevelError,
    EmptyWindowError,
    EstimationError,
    GridTooNarrowError,
    LongdispError,
    SingularFitError,
)
from .estimators import (
    CoefficientEstimate,
    CondMeanEstimate,
    FlatGroup,
    fit_beta_continuous,
    fit_beta_discrete,
    fit_cond_mean,
    fit_intercept_only_time,
)
from .inference import SCBResult, bootstrap_scb
from .kernels import EPANECHNIKOV, TRIWEIGHT, UNIFORM, KernelSpec, kernel_eval, weight_vector
from .simulation import DGPConfig, GroupConfig, generate, scenario, true_decomposition

__version__ = "0.1.0"

__all__ = [
    "BandwidthGrid",
    "Bandwidths",
    "CVResult",
    "CoefficientEstimate",
    "ColumnSchema",
    "CondMeanEstimate",
    "ConfigError",
    "DGPConfig",
    "DataError",
    "DecompositionCurve",
    "EPANECHNIKOV",
    "EmptyLevelError",
    "EmptyWindowError",
    "EstimationError",
    "FlatGroup",
    "GridTooNarrowError",
    "GroupBandwidths",
    "GroupConfig",
    "KernelSpec",
    "LongitudinalDataset",
    "LongdispError",
    "ModifierSpec",
    "SCBResult",
    "SingularFitError",
    "Subject",
    "TRIWEIGHT",
    "TimeGrid",
    "UNIFORM",
    "bootstrap_scb",
    "canonical_schema",
    "estimate_cmldd",
    "estimate_decomposition",
    "estimate_ldd",
    "estimate_mldd",
    "fit_beta_continuous",
    "fit_beta_discrete",
    "fit_cond_mean",
    "fit_intercept_only_time",
    "generate",
    "kernel_eval",
    "load_dataset",
    "scenario",
    "select_bandwidths_cv",
    "summarize",
    "true_decomposition",
    "weight_vector",
    "write_dataset",
    "write_datasets",
    "__version__",
]
