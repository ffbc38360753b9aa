"""Exact sampling and variation functionals for the fixed-point solution of the stochastic heat equation."""

__version__ = "0.1.0"

from . import _backend
from .errors import (
    AssumptionCheckError,
    DomainError,
    FactorizationError,
    HeatVarError,
    ResourceError,
    UsageError,
)
from .kernel import (
    GammaSeq,
    KappaConstant,
    KappaVariant,
    Partition,
    cov_F,
    cross_increment_cov,
    gamma,
    increment_variance,
    k_function,
    kappa_sq,
    uniform_increment_cov,
)
from .sampler import (
    Factor,
    IncrementCovariance,
    PathBatch,
    PathSample,
    SeedSpec,
    build_increment_covariance,
    factorize,
    sample_batch,
    sample_path,
)
from .variations import (
    HFamily,
    StepSeries,
    alternating_raw,
    b_n,
    centered_sum_constant,
    cor48_residual,
    midpoint_riemann,
    quartic_variation,
    signed_cubic,
)

backend = _backend.current
