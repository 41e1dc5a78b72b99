"""Simulate 2D MR acquisitions from isotropic volumes and measure how
resolution and orientation affect an external harmonization model."""

__version__ = "0.1.0"

from .degrade import (
    DEFAULT_RESOLUTIONS,
    ResolutionSpec,
    resample_isotropic,
    resample_to_grid,
    simulate_acquisition,
)
from .metrics import SsimParams, psnr, ssim
from .nifti import read_nifti, write_nifti
from .sliceprofile import SliceDesign, SliceProfile, normalize_profile, slr_profile
from .volume import Orientation2D, Volume3, phantom, to_canonical

__all__ = [
    "DEFAULT_RESOLUTIONS",
    "Orientation2D",
    "ResolutionSpec",
    "SliceDesign",
    "SliceProfile",
    "SsimParams",
    "Volume3",
    "normalize_profile",
    "phantom",
    "psnr",
    "read_nifti",
    "resample_isotropic",
    "resample_to_grid",
    "simulate_acquisition",
    "slr_profile",
    "ssim",
    "to_canonical",
    "write_nifti",
]
