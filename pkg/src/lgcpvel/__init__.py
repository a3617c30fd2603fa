"""Spatio-temporal LGCP intensity estimation and minimal-velocity fields."""

from .covariance import ConditioningError, CovarianceSpec, ar1_rho2, cov, cov_matrices, matern_rho1
from .grid import (
    PointPattern,
    ScalarField,
    SpatioTemporalGrid,
    VectorField,
    bin_counts,
    cell_centers,
)
from .oracle import SimIntensityParams
from .simulate import sample_gaussian_field, sample_lgcp, sample_poisson
from .spatial import Raster, adaptive_kernel_density, kernel_density, raster_offset
from .stfit import FitConfig, FitResult, fit, predict_intensity, profile_hyperparameters
from .temporal import TemporalBasisSpec, TemporalFit, design_row, eval_mu, fit_temporal
from .velocity import VelocityOptions, directional_velocity, gradient_norm, min_velocity, time_derivative

__version__ = "0.1.0"

__all__ = [
    "ConditioningError",
    "CovarianceSpec",
    "FitConfig",
    "FitResult",
    "PointPattern",
    "Raster",
    "ScalarField",
    "SimIntensityParams",
    "SpatioTemporalGrid",
    "TemporalBasisSpec",
    "TemporalFit",
    "VectorField",
    "VelocityOptions",
    "adaptive_kernel_density",
    "ar1_rho2",
    "bin_counts",
    "cell_centers",
    "cov",
    "cov_matrices",
    "design_row",
    "directional_velocity",
    "eval_mu",
    "fit",
    "fit_temporal",
    "gradient_norm",
    "kernel_density",
    "matern_rho1",
    "min_velocity",
    "predict_intensity",
    "profile_hyperparameters",
    "raster_offset",
    "sample_gaussian_field",
    "sample_lgcp",
    "sample_poisson",
    "time_derivative",
]
