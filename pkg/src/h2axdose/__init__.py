"""Bayesian radiation-dose estimation from foci counts per cell."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BoundaryError,
    CalibrationError,
    DomainError,
    GridError,
    H2AXDoseError,
    NotPositiveDefiniteError,
    NumericError,
    OptimizationError,
    ParseError,
)
from .model import (  # noqa: E402
    CalibrationDataset,
    ComponentParams,
    FociRecord,
    MixtureParams,
    Parametrization,
    PriorSpec,
    lambda_surface,
    log_likelihood,
    log_perks,
    sample_synthetic,
)
from .calibrate import CalibrationResult, FitConfig, calibrate, fit_map, laplace_approx, select_model  # noqa: E402
from .surface import LinearCoeffs, linear_coeffs, mean_surface, surface_grid  # noqa: E402
from .priors import TimePrior, time_prior_density, time_prior_sample  # noqa: E402
from .estimate import (  # noqa: E402
    DosePosterior,
    TestSummary,
    marginal_dose_density_quadrature,
    marginal_dose_samples_mc,
    summarize,
)
from .artifact import CalibrationArtifact, ingest_calibration_csv, read_artifact, write_artifact  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
