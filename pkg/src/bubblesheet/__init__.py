"""Desk-scale spectral and ODE laboratory for ancient flows over the cylinder R^2 x S^1(sqrt 2)."""

__version__ = "0.1.0"

from .grid import FieldSample, GridSpec, WEIGHT_NORM
from .spectral import (
    SpectralSplit,
    apply_L,
    cutoff_profile,
    gradient_norm,
    inner_product,
    norm,
    project_modes,
    psi_basis,
    spectral_coeff,
    truncate,
)

__all__ = [
    "FieldSample",
    "GridSpec",
    "WEIGHT_NORM",
    "SpectralSplit",
    "apply_L",
    "cutoff_profile",
    "gradient_norm",
    "inner_product",
    "norm",
    "project_modes",
    "psi_basis",
    "spectral_coeff",
    "truncate",
]
