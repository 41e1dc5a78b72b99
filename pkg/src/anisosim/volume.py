"""3D volume value type, canonical reorientation and synthetic phantoms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Volume3",
    "Orientation2D",
    "to_canonical",
    "phantom",
    "ellipsoid_phantom",
    "grating_phantom",
    "contrast_phantoms",
    "CONTRASTS",
]

CONTRASTS = ("t1w", "t2w", "flair")


class Orientation2D(enum.Enum):
    """2D acquisition orientation; the value is the canonical through-plane axis."""

    AXIAL = "axial"
    SAGITTAL = "sagittal"
    CORONAL = "coronal"

    @property
    def axis(self) -> int:
        return _THROUGH_PLANE[self]

    @classmethod
    def parse(cls, text: str) -> "Orientation2D":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown orientation {text!r}") from None


_THROUGH_PLANE = {
    Orientation2D.SAGITTAL: 0,
    Orientation2D.CORONAL: 1,
    Orientation2D.AXIAL: 2,
}


@dataclass(frozen=True, eq=False)
class Volume3:
    """Scalar 3D image on a regular grid.

    Parameters
    ----------
    data : ndarray
        Intensities, indexed ``[i, j, k]``; stored as float32.
    spacing : tuple of float
        Voxel size in mm along each array axis.
    origin : tuple of float
        World (RAS, mm) position of the center of voxel ``(0, 0, 0)``.
    orientation : ndarray
        3x3 direction cosines; column ``j`` is the world direction of array axis ``j``.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError("volume dims must be positive")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin need three components")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        orient = np.array(self.orientation, dtype=np.float64, copy=True)
        if orient.shape != (3, 3):
            raise ValueError("orientation must be 3x3")
        if abs(abs(np.linalg.det(orient)) - 1.0) > 1e-6 or not np.allclose(
            orient.T @ orient, np.eye(3), atol=1e-6
        ):
            raise ValueError("orientation columns must be orthonormal")
        data.flags.writeable = False
        orient.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "orientation", orient)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def affine(self) -> np.ndarray:
        """4x4 voxel-index to world transform."""
        aff = np.eye(4)
        aff[:3, :3] = self.orientation * np.asarray(self.spacing)
        aff[:3, 3] = self.origin
        return aff

    def world(self, index) -> np.ndarray:
        """World coordinates of voxel centers; ``index`` has shape (..., 3)."""
        index = np.asarray(index, dtype=np.float64)
        return index @ self.affine[:3, :3].T + np.asarray(self.origin)

    def replace(self, **changes) -> "Volume3":
        kwargs = dict(
            data=self.data, spacing=self.spacing, origin=self.origin, orientation=self.orientation
        )
        kwargs.update(changes)
        return Volume3(**kwargs)

    def same_grid(self, other: "Volume3", tol: float = 1e-6) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.orientation, other.orientation, atol=tol)
        )

    def is_canonical(self) -> bool:
        return bool(np.array_equal(self.orientation, np.eye(3)))


def to_canonical(vol: Volume3, tol: float = 1e-3) -> Volume3:
    """Permute and flip array axes so the orientation becomes the identity.

    Only signed-permutation orientations are accepted; world positions of
    every voxel center are preserved.
    """
    orient = vol.orientation
    world_axis = np.argmax(np.abs(orient), axis=0)
    signs = np.sign(orient[world_axis, np.arange(3)])
    perm = np.zeros((3, 3))
    perm[world_axis, np.arange(3)] = signs
    if sorted(world_axis) != [0, 1, 2] or np.max(np.abs(orient - perm)) > tol:
        raise ValueError("oblique orientation is not supported")
    if vol.is_canonical():
        return vol

    start = np.where(signs > 0, 0, np.asarray(vol.dims) - 1)
    origin = vol.origin + (orient * np.asarray(vol.spacing)) @ start

    data = np.asarray(vol.data)
    flip_axes = tuple(int(j) for j in np.flatnonzero(signs < 0))
    if flip_axes:
        data = np.flip(data, axis=flip_axes)
    # new axis w takes old axis j with world_axis[j] == w
    order = np.argsort(world_axis)
    data = np.transpose(data, order)
    spacing = tuple(vol.spacing[j] for j in order)
    return Volume3(data, spacing=spacing, origin=tuple(origin), orientation=np.eye(3))


# Head-like ellipsoids in normalized [-1, 1] coordinates:
# (center, semi-axes, rotation about z in degrees, tissue label).
_ELLIPSOIDS = [
    ((0.0, 0.0, 0.0), (0.72, 0.90, 0.82), 0.0, "scalp"),
    ((0.0, 0.0, 0.0), (0.66, 0.84, 0.76), 0.0, "csf"),
    ((0.0, -0.02, 0.02), (0.62, 0.80, 0.72), 0.0, "gm"),
    ((0.0, -0.02, 0.05), (0.50, 0.68, 0.55), 0.0, "wm"),
    ((-0.17, 0.05, 0.12), (0.07, 0.28, 0.16), -15.0, "csf"),
    ((0.17, 0.05, 0.12), (0.07, 0.28, 0.16), 15.0, "csf"),
    ((-0.28, -0.10, -0.05), (0.11, 0.14, 0.10), 20.0, "gm"),
    ((0.28, -0.10, -0.05), (0.11, 0.14, 0.10), -20.0, "gm"),
    ((0.05, 0.35, 0.30), (0.06, 0.05, 0.07), 0.0, "lesion"),
    ((-0.30, 0.30, 0.25), (0.04, 0.06, 0.05), 30.0, "lesion"),
    ((0.25, -0.40, 0.20), (0.05, 0.04, 0.08), 0.0, "lesion"),
]

_TISSUE_INTENSITY = {
    "t1w": {"background": 0.0, "scalp": 0.55, "csf": 0.12, "gm": 0.50, "wm": 0.80, "lesion": 0.30},
    "t2w": {"background": 0.0, "scalp": 0.35, "csf": 1.00, "gm": 0.60, "wm": 0.40, "lesion": 0.85},
    "flair": {"background": 0.0, "scalp": 0.40, "csf": 0.08, "gm": 0.55, "wm": 0.42, "lesion": 0.95},
}


def _normalized_coords(dims, spacing):
    # isotropic normalization: the largest extent maps to [-1, 1]
    half = max((n - 1) * s for n, s in zip(dims, spacing)) / 2.0
    axes = [((np.arange(n) - (n - 1) / 2.0) * s) / half for n, s in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij", sparse=True), half


def _centered_origin(dims, spacing):
    return tuple(-(n - 1) / 2.0 * s for n, s in zip(dims, spacing))


def ellipsoid_phantom(
    dims=(64, 64, 64),
    spacing=(1.0, 1.0, 1.0),
    seed: int = 0,
    contrast: str = "t1w",
    edge_mm: float = 1.5,
    jitter: float = 0.03,
) -> Volume3:
    """Smooth nested-ellipsoid head phantom.

    Ellipsoids are painted in order with a logistic edge of width ``edge_mm``,
    so every voxel is a convex combination of tissue intensities in [0, 1].
    ``seed`` jitters centers and semi-axes; ``contrast`` selects the tissue
    intensity table.
    """
    dims = tuple(int(n) for n in dims)
    if min(dims) < 32:
        raise ValueError("phantom dims must be at least 32")
    if contrast not in _TISSUE_INTENSITY:
        raise ValueError(f"unknown contrast {contrast!r}")
    table = _TISSUE_INTENSITY[contrast]
    rng = np.random.default_rng(seed)
    (x, y, z), half = _normalized_coords(dims, spacing)
    edge = edge_mm / half

    out = np.full(dims, table["background"], dtype=np.float64)
    for center, axes, angle, tissue in _ELLIPSOIDS:
        c = np.asarray(center) + rng.uniform(-jitter, jitter, 3) * 0.5
        a = np.asarray(axes) * (1.0 + rng.uniform(-jitter, jitter, 3))
        theta = np.deg2rad(angle + rng.uniform(-5.0, 5.0))
        ct, st = np.cos(theta), np.sin(theta)
        dx, dy, dz = x - c[0], y - c[1], z - c[2]
        u = ct * dx + st * dy
        v = -st * dx + ct * dy
        # signed distance proxy in normalized units, scaled by the mean semi-axis
        r = np.sqrt((u / a[0]) ** 2 + (v / a[1]) ** 2 + (dz / a[2]) ** 2)
        dist = (r - 1.0) * a.mean()
        mask = 0.5 * (1.0 - np.tanh(dist / edge))
        out = out * (1.0 - mask) + table[tissue] * mask
    return Volume3(
        np.clip(out, 0.0, 1.0),
        spacing=spacing,
        origin=_centered_origin(dims, spacing),
    )


def grating_phantom(
    dims=(64, 64, 64),
    spacing=(1.0, 1.0, 1.0),
    axis: int = 2,
    period: float = 6.0,
) -> Volume3:
    """``0.5 + 0.5 sin(2 pi p / period)`` with ``p`` the mm offset from voxel 0 along ``axis``."""
    dims = tuple(int(n) for n in dims)
    if min(dims) < 32:
        raise ValueError("phantom dims must be at least 32")
    if axis not in (0, 1, 2):
        raise ValueError("grating axis must be 0, 1 or 2")
    if not period >= 2.0:
        raise ValueError("grating period must be at least 2 mm")
    p = np.arange(dims[axis]) * spacing[axis]
    profile = 0.5 + 0.5 * np.sin(2.0 * np.pi * p / period)
    shape = [1, 1, 1]
    shape[axis] = dims[axis]
    data = np.broadcast_to(profile.reshape(shape), dims)
    return Volume3(data, spacing=spacing, origin=_centered_origin(dims, spacing))


def phantom(kind: str, dims=(64, 64, 64), **params) -> Volume3:
    """Dispatch to :func:`ellipsoid_phantom` or :func:`grating_phantom`."""
    if kind == "ellipsoids":
        return ellipsoid_phantom(dims, **params)
    if kind == "grating":
        return grating_phantom(dims, **params)
    raise ValueError(f"unknown phantom kind {kind!r}")


def contrast_phantoms(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0), seed: int = 0) -> dict:
    """One synthetic subject: the same anatomy rendered as T1w, T2w and FLAIR."""
    return {
        c: ellipsoid_phantom(dims, spacing, seed=seed, contrast=c) for c in CONTRASTS
    }
