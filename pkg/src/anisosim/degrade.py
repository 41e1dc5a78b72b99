"""Simulated 2D acquisition: slice-profile blur, slice-spacing sampling, isotropic restore."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import bspline
from .sliceprofile import SliceDesign, SliceProfile, normalize_profile, slr_profile
from .volume import Orientation2D, Volume3

__all__ = [
    "ResolutionSpec",
    "DEFAULT_RESOLUTIONS",
    "parse_resolutions",
    "blur_axis",
    "downsample_axis",
    "simulate_acquisition",
    "resample_isotropic",
    "resample_to_grid",
    "profile_for",
]


@dataclass(frozen=True, order=False)
class ResolutionSpec:
    """Slice thickness and gap in mm; printed as ``T||G``."""

    thickness: float
    gap: float = 0.0

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError("slice thickness must be positive")
        if not self.gap >= 0:
            raise ValueError("slice gap must be non-negative")

    @property
    def spacing(self) -> float:
        return self.thickness + self.gap

    @classmethod
    def parse(cls, text: str) -> "ResolutionSpec":
        parts = str(text).replace("∥", "||").split("||")
        if len(parts) != 2:
            raise ValueError(f"resolution must look like 'T||G', got {text!r}")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError:
            raise ValueError(f"resolution must look like 'T||G', got {text!r}") from None

    def __str__(self) -> str:
        return f"{self.thickness:g}||{self.gap:g}"


DEFAULT_RESOLUTIONS = tuple(
    ResolutionSpec(t, g)
    for t, g in [(3, 0), (3, 1), (4, 0), (4, 1), (4, 1.2), (5, 0), (5, 1), (5, 1.5)]
)


def parse_resolutions(items) -> list:
    return [r if isinstance(r, ResolutionSpec) else ResolutionSpec.parse(r) for r in items]


@functools.lru_cache(maxsize=64)
def _cached_raw_profile(design: SliceDesign) -> SliceProfile:
    return slr_profile(
        design.n, design.tb, design.d1, design.d2, design.grid, design.ptype, design.max_b
    )


@functools.lru_cache(maxsize=256)
def profile_for(design: SliceDesign, thickness: float, dz: float) -> SliceProfile:
    """Normalized SLR kernel for ``thickness`` mm sampled at ``dz`` mm (memoized)."""
    return normalize_profile(_cached_raw_profile(design), thickness, dz)


def _check_axis(axis):
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")


def blur_axis(vol: Volume3, p: SliceProfile, axis: int) -> Volume3:
    """Convolve every line along ``axis`` with the profile, mirror boundary."""
    _check_axis(axis)
    if abs(p.dz - vol.spacing[axis]) > 1e-6:
        raise ValueError(
            f"profile step {p.dz} mm does not match volume spacing {vol.spacing[axis]} mm"
        )
    kernel = np.asarray(p.samples, dtype=np.float64) * p.dz
    if len(kernel) == 1:
        return vol.replace(data=vol.data * np.float32(kernel[0]))
    out = ndimage.convolve1d(
        np.asarray(vol.data, dtype=np.float64), kernel, axis=axis, mode="mirror"
    )
    return vol.replace(data=out.astype(np.float32))


def _grid_count(extent: float, step: float) -> int:
    return int(math.floor(extent / step + 1e-9)) + 1


def downsample_axis(vol: Volume3, spacing_out: float, axis: int) -> Volume3:
    """Sample every ``spacing_out`` mm along ``axis``, starting at the first voxel center."""
    _check_axis(axis)
    spacing_in = vol.spacing[axis]
    if spacing_out < spacing_in - 1e-9:
        raise ValueError("downsample_axis cannot upsample; use resample_isotropic")
    n = vol.dims[axis]
    count = _grid_count((n - 1) * spacing_in, spacing_out)
    positions = np.arange(count) * (spacing_out / spacing_in)
    out = bspline.resample_volume(vol, axis, positions)
    spacing = list(out.spacing)
    spacing[axis] = float(spacing_out)
    return out.replace(spacing=tuple(spacing))


def simulate_acquisition(
    vol: Volume3,
    res: ResolutionSpec,
    orient: Orientation2D,
    design: SliceDesign | None = None,
    profile: SliceProfile | None = None,
) -> Volume3:
    """Blur along the through-plane axis of ``orient`` with a slice profile of
    FWHM ``res.thickness``, then sample at ``res.spacing``.

    ``profile`` overrides the SLR design (it must already be sampled at the
    volume's through-plane spacing).
    """
    if not vol.is_canonical():
        raise ValueError("simulate_acquisition expects a canonical volume")
    if not np.allclose(vol.spacing, vol.spacing[0], atol=1e-6):
        raise ValueError("simulate_acquisition expects an isotropic volume")
    axis = orient.axis
    if profile is None:
        profile = profile_for(design or SliceDesign(), float(res.thickness), float(vol.spacing[axis]))
    blurred = blur_axis(vol, profile, axis)
    return downsample_axis(blurred, res.spacing, axis)


def resample_isotropic(vol: Volume3, target: float = 1.0) -> Volume3:
    """Resample onto a ``target``-mm grid over the same world extent, origin kept."""
    if not target > 0:
        raise ValueError("target spacing must be positive")
    out = vol
    for axis in range(3):
        n, s = vol.dims[axis], vol.spacing[axis]
        count = _grid_count((n - 1) * s, target)
        if count == n and abs(s - target) <= 1e-9:
            continue
        out = bspline.resample_volume(out, axis, np.arange(count) * (target / s))
        spacing = list(out.spacing)
        spacing[axis] = float(target)
        out = out.replace(spacing=tuple(spacing))
    return out


def resample_to_grid(vol: Volume3, like: Volume3) -> Volume3:
    """Resample canonical ``vol`` onto the voxel grid of canonical ``like``.

    Grid points past the sampled extent are filled by the spline's mirror
    extension.
    """
    if not (vol.is_canonical() and like.is_canonical()):
        raise ValueError("resample_to_grid expects canonical volumes")
    out = vol
    for axis in range(3):
        target = like.origin[axis] + np.arange(like.dims[axis]) * like.spacing[axis]
        positions = (target - vol.origin[axis]) / vol.spacing[axis]
        if vol.dims[axis] == like.dims[axis] and np.allclose(
            positions, np.arange(like.dims[axis]), atol=1e-9
        ):
            continue
        out = bspline.resample_volume(out, axis, positions)
    return Volume3(out.data, spacing=like.spacing, origin=like.origin, orientation=like.orientation)
