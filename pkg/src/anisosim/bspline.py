"""Cubic B-spline prefiltering and interpolation with mirror boundaries.

Coefficients come from the causal/anticausal recursive filter with pole
``sqrt(3) - 2`` and gain 6; evaluation sums four neighboring coefficients
weighted by the cubic B-spline kernel, with positions outside the line
folded back by mirror symmetry. Everything operates along one array axis at a
time, so a 3D resampling is the composition of three 1D passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Volume3

__all__ = [
    "POLE",
    "SplineLine",
    "bspline3",
    "prefilter",
    "prefilter_axis",
    "evaluate",
    "mirror_positions",
    "eval",
    "resample_line",
    "resample_axis",
    "resample_volume",
]

POLE = math.sqrt(3.0) - 2.0
GAIN = 6.0
HORIZON_TOL = 1e-12


def bspline3(x):
    """Centered cubic B-spline kernel."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(ax)
    inner = ax < 1.0
    outer = (ax >= 1.0) & (ax < 2.0)
    out[inner] = 2.0 / 3.0 - ax[inner] ** 2 + 0.5 * ax[inner] ** 3
    out[outer] = (2.0 - ax[outer]) ** 3 / 6.0
    return out


def _horizon(z=POLE, tol=HORIZON_TOL):
    return int(math.ceil(math.log(tol) / math.log(abs(z))))


HORIZON = _horizon()
# coefficients kept beyond each end so evaluation stencils never leave the array
MARGIN = 2


def _extrapolation_weights(n: int, pad: int) -> np.ndarray:
    """Lagrange weights continuing the first ``deg+1`` samples to positions -1..-pad."""
    deg = min(3, n - 1)
    nodes = np.arange(deg + 1, dtype=np.float64)
    targets = -np.arange(1, pad + 1, dtype=np.float64)
    w = np.ones((pad, deg + 1))
    for j in range(deg + 1):
        for m in range(deg + 1):
            if m != j:
                w[:, j] *= (targets - nodes[m]) / (nodes[j] - nodes[m])
    return w


def prefilter_axis(samples, axis: int = 0) -> np.ndarray:
    """Cubic spline coefficients of every line of ``samples`` along ``axis``.

    The returned array is longer than the input by ``MARGIN`` on each side:
    entry ``MARGIN + k`` is the coefficient of sample ``k``. Lines are
    continued past both ends by the cubic through the four boundary samples,
    which keeps polynomial reproduction exact up to the edges, and the
    recursion is started ``HORIZON`` samples outside the data.
    """
    s = np.moveaxis(np.asarray(samples, dtype=np.float64), axis, 0)
    n = s.shape[0]
    if n < 2:
        raise ValueError("spline lines need at least 2 samples")
    if not np.all(np.isfinite(s)):
        raise ValueError("spline input must be finite")
    z = POLE
    pad = HORIZON
    w = _extrapolation_weights(n, pad)
    deg = w.shape[1]
    left = np.tensordot(w, s[:deg], axes=(1, 0))[::-1]
    right = np.tensordot(w, s[::-1][:deg], axes=(1, 0))
    c = np.concatenate([left, s, right]) * GAIN

    total = c.shape[0]
    cp = np.empty_like(c)
    cp[0] = c[0] / (1.0 - z)
    for k in range(1, total):
        cp[k] = c[k] + z * cp[k - 1]

    cm = np.empty_like(c)
    cm[total - 1] = (z / (z * z - 1.0)) * (cp[total - 1] + z * cp[total - 2])
    for k in range(total - 2, -1, -1):
        cm[k] = z * (cm[k + 1] - cp[k])
    keep = cm[pad - MARGIN : pad + n + MARGIN]
    return np.moveaxis(keep, 0, axis)


@dataclass(frozen=True)
class SplineLine:
    """Cubic spline of one line of ``n`` samples.

    ``coefficients`` holds ``n + 2 * MARGIN`` values; positions outside
    ``[0, n - 1]`` are folded back by mirror symmetry before evaluation.
    """

    coefficients: np.ndarray

    @property
    def n(self) -> int:
        return len(self.coefficients) - 2 * MARGIN


def prefilter(samples) -> SplineLine:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("prefilter expects a 1D array")
    return SplineLine(prefilter_axis(samples))


def mirror_positions(x, n: int) -> np.ndarray:
    """Fold positions into ``[0, n - 1]`` by whole-sample symmetric extension."""
    period = 2.0 * (n - 1)
    x = np.mod(np.asarray(x, dtype=np.float64), period)
    return np.where(x > n - 1, period - x, x)


def _stencil(positions, n):
    """Coefficient indices (into the margin-padded array) and weights, shape (len, 4)."""
    x = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("spline positions must be finite")
    x = mirror_positions(x, n)
    base = np.minimum(np.floor(x).astype(np.int64), n - 1)
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    weights = bspline3(x[:, None] - idx)
    return idx + MARGIN, weights


def evaluate(coefficients, positions, axis: int = 0) -> np.ndarray:
    """Evaluate margin-padded spline ``coefficients`` along ``axis`` at sample-unit ``positions``."""
    c = np.moveaxis(np.asarray(coefficients, dtype=np.float64), axis, 0)
    positions = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    idx, w = _stencil(positions, c.shape[0] - 2 * MARGIN)
    extra = (slice(None),) + (None,) * (c.ndim - 1)
    out = np.zeros((len(positions),) + c.shape[1:])
    for j in range(4):
        out += w[:, j][extra] * c[idx[:, j]]
    return np.moveaxis(out, 0, axis)


def eval(line: SplineLine, x):
    """Value of ``line`` at position ``x`` (scalar or array, in sample units)."""
    scalar = np.ndim(x) == 0
    out = evaluate(line.coefficients, np.ravel(x))
    return float(out[0]) if scalar else out.reshape(np.shape(x))


def resample_line(samples, positions) -> np.ndarray:
    return evaluate(prefilter(samples).coefficients, positions)


def resample_axis(data, positions, axis: int) -> np.ndarray:
    """Prefilter and resample every line of ``data`` along ``axis``."""
    return evaluate(prefilter_axis(data, axis), positions, axis)


def resample_volume(vol: Volume3, axis: int, positions) -> Volume3:
    """Resample ``vol`` along one axis at uniformly spaced sample-unit ``positions``.

    The output grid step is ``spacing * (positions[1] - positions[0])`` and the
    origin moves to the first position; other axes are untouched.
    """
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    positions = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    if positions.ndim != 1 or len(positions) == 0:
        raise ValueError("positions must be a non-empty 1D array")
    step = 1.0
    if len(positions) > 1:
        diffs = np.diff(positions)
        step = float(diffs.mean())
        if step <= 0 or np.max(np.abs(diffs - step)) > 1e-9 * max(1.0, abs(step)):
            raise ValueError("positions must be uniformly increasing")

    data = resample_axis(vol.data, positions, axis)
    spacing = list(vol.spacing)
    spacing[axis] = vol.spacing[axis] * step
    origin = np.asarray(vol.origin) + vol.orientation[:, axis] * vol.spacing[axis] * positions[0]
    return vol.replace(data=data.astype(np.float32), spacing=tuple(spacing), origin=tuple(origin))
