"""Shinnar-Le Roux slice-selection profiles used as through-plane PSFs.

The beta polynomial is a linear-phase least-squares FIR, the alpha
polynomial its minimum-phase complement, and the excitation profile is the
transverse magnetization ``2 conj(A) B`` evaluated on the unit circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bspline

__all__ = [
    "SliceDesign",
    "SliceProfile",
    "dinf",
    "ripples_for",
    "design_b_poly",
    "b_to_a",
    "freq_response",
    "slr_profile",
    "normalize_profile",
    "fwhm",
    "delta_profile",
]

# dinf polynomial coefficients for linear-phase filters
_DINF_COEFFS = (5.309e-3, 7.114e-2, -4.761e-1, -2.66e-3, -5.941e-1, -4.278e-1)

TRUNCATE_REL = 1e-4


@dataclass(frozen=True)
class SliceDesign:
    """SLR design parameters; ``max_b`` is sin(flip / 2)."""

    n: int = 64
    tb: float = 4.0
    d1: float = 0.01
    d2: float = 0.01
    ptype: str = "ex"
    grid: int = 4096
    max_b: float = math.sin(math.pi / 4)


@dataclass(frozen=True, eq=False)
class SliceProfile:
    """Sampled, symmetric point-spread function centered on the middle sample."""

    samples: np.ndarray
    dz: float
    fwhm: float
    meta: dict = field(default_factory=dict)

    @property
    def positions(self) -> np.ndarray:
        n = len(self.samples)
        return (np.arange(n) - (n - 1) / 2.0) * self.dz

    @property
    def area(self) -> float:
        return float(np.sum(self.samples) * self.dz)

    @property
    def support(self) -> float:
        return len(self.samples) * self.dz


def dinf(d1: float, d2: float) -> float:
    """Transition-width constant of a linear-phase filter with ripples ``d1``, ``d2``."""
    if not (0 < d1 < 1 and 0 < d2 < 1):
        raise ValueError("ripples must lie in (0, 1)")
    a1, a2, a3, a4, a5, a6 = _DINF_COEFFS
    l1 = math.log10(d1)
    l2 = math.log10(d2)
    return (a1 * l1 * l1 + a2 * l1 + a3) * l2 + (a4 * l1 * l1 + a5 * l1 + a6)


def ripples_for(ptype: str, d1: float, d2: float):
    """Convert magnetization ripples into beta-polynomial ripples."""
    if ptype == "ex":
        return math.sqrt(d1 / 2.0), d2 / math.sqrt(2.0)
    if ptype == "st":
        return d1, d2
    raise ValueError(f"unsupported pulse type {ptype!r}")


def band_edges(n: int, tb: float, d1: float, d2: float, ptype: str = "ex"):
    """Passband and stopband edges as fractions of Nyquist."""
    bd1, bd2 = ripples_for(ptype, d1, d2)
    w = dinf(bd1, bd2) / tb
    if w >= 1:
        raise ValueError(f"infeasible band edges: transition fraction {w:.3f} >= 1")
    half = n / 2.0
    return (tb / 2.0 - w * tb / 2.0) / half, (tb / 2.0 + w * tb / 2.0) / half


def freq_response(h, npoints: int = 4096) -> np.ndarray:
    """DFT of ``h`` on ``npoints`` equispaced frequencies in [0, 2 pi)."""
    return np.fft.fft(np.asarray(h), npoints)


def design_b_poly(
    n: int = 64,
    tb: float = 4.0,
    d1: float = 0.01,
    d2: float = 0.01,
    ptype: str = "ex",
    max_b: float = math.sin(math.pi / 4),
) -> np.ndarray:
    """Linear-phase beta polynomial of ``n`` taps by weighted least squares.

    Even-length symmetric FIR fitted on a dense grid over [0, pi]: target 1 in
    the passband, 0 in the stopband, transition band unweighted, squared-error
    weights ``1/d1'`` and ``1/d2'``. The result is scaled so its peak
    magnitude response equals ``max_b``.
    """
    if n < 16 or n % 2:
        raise ValueError("number of taps must be even and at least 16")
    if tb < 2 or tb >= n / 2:
        raise ValueError("time-bandwidth must satisfy 2 <= tb < n/2")
    if not (0 < max_b < 1):
        raise ValueError("max_b must lie in (0, 1)")
    bd1, bd2 = ripples_for(ptype, d1, d2)
    f_pass, f_stop = band_edges(n, tb, d1, d2, ptype)

    omega = np.linspace(0.0, np.pi, 16 * n + 1)
    in_pass = omega <= f_pass * np.pi
    in_stop = omega >= f_stop * np.pi
    keep = in_pass | in_stop
    omega = omega[keep]
    target = in_pass[keep].astype(np.float64)
    weight = np.where(in_pass[keep], 1.0 / bd1, 1.0 / bd2)

    # amplitude of a symmetric even-length filter: sum_m 2 h_m cos(omega (m + 1/2))
    half = n // 2
    basis = 2.0 * np.cos(np.outer(omega, np.arange(half) + 0.5))
    sw = np.sqrt(weight)
    h, *_ = np.linalg.lstsq(basis * sw[:, None], target * sw, rcond=None)
    b = np.concatenate([h[::-1], h])

    peak = np.max(np.abs(freq_response(b, max(4096, 16 * n))))
    return b * (max_b / peak)


def b_to_a(b, oversample: int = 16) -> np.ndarray:
    """Minimum-phase alpha polynomial with ``|A|^2 + |B|^2 = 1`` on the unit circle.

    Uses the real cepstrum of ``sqrt(1 - |B|^2)`` on a grid zero-padded to
    ``oversample`` times the filter length (at least 4096 points).
    """
    b = np.atleast_1d(np.asarray(b, dtype=np.complex128))
    n = len(b)
    if np.max(np.abs(freq_response(b, 4096))) >= 1.0:
        raise ValueError("|B| reaches 1: profile is not physically realizable")
    npad = max(4096, oversample * n)
    npad += npad % 2
    bf = freq_response(b, npad)
    mag = np.sqrt(np.maximum(1.0 - np.abs(bf) ** 2, 1e-9))
    cep = np.fft.ifft(np.log(mag))
    fold = np.zeros(npad, dtype=np.complex128)
    fold[0] = cep[0]
    fold[1 : npad // 2] = 2.0 * cep[1 : npad // 2]
    fold[npad // 2] = cep[npad // 2]
    a = np.fft.ifft(np.exp(np.fft.fft(fold)))
    return a[:n]


def _dtft(h, omega):
    return np.exp(-1j * np.outer(omega, np.arange(len(h)))) @ np.asarray(h, dtype=np.complex128)


def fwhm(p) -> float:
    """Full width at half maximum, in the units of ``p.dz``.

    Crossings of half the peak are located by linear interpolation between
    the bracketing samples on each side. A single nonzero sample with no
    neighbors reports one sample width.
    """
    samples = np.asarray(p.samples, dtype=np.float64)
    peak_idx = int(np.argmax(samples))
    peak = samples[peak_idx]
    if not peak > 0:
        raise ValueError("profile peak must be positive")
    if len(samples) == 1:
        return float(p.dz)
    half = peak / 2.0

    below = np.flatnonzero(samples[:peak_idx] < half)
    if len(below) == 0:
        raise ValueError("no half-maximum crossing on the left")
    i = below[-1]
    left = i + (half - samples[i]) / (samples[i + 1] - samples[i])

    below = np.flatnonzero(samples[peak_idx + 1 :] < half)
    if len(below) == 0:
        raise ValueError("no half-maximum crossing on the right")
    j = peak_idx + 1 + below[0]
    right = j - 1 + (samples[j - 1] - half) / (samples[j - 1] - samples[j])
    return float((right - left) * p.dz)


def slr_profile(
    n: int = 64,
    tb: float = 4.0,
    d1: float = 0.01,
    d2: float = 0.01,
    grid: int = 4096,
    ptype: str = "ex",
    max_b: float = math.sin(math.pi / 4),
) -> SliceProfile:
    """Unnormalized excitation profile ``|2 conj(A) B|`` over the full frequency axis.

    ``grid + 1`` samples span [-pi, pi] symmetrically. The abscissa is in
    slice widths: the passband of the design spans one unit.
    """
    if grid < 512:
        raise ValueError("profile grid needs at least 512 points")
    b = design_b_poly(n, tb, d1, d2, ptype, max_b)
    a = b_to_a(b)
    omega = 2.0 * np.pi * (np.arange(grid + 1) - grid / 2.0) / grid
    bw = _dtft(b, omega)
    aw = _dtft(a, omega)
    mxy = np.abs(2.0 * np.conj(aw) * bw)
    mxy = 0.5 * (mxy + mxy[::-1])
    dz = n / (tb * grid)
    meta = {"n": n, "tb": tb, "d1": d1, "d2": d2, "ptype": ptype, "ftype": "ls", "max_b": max_b}
    profile = SliceProfile(mxy, dz, 0.0, meta)
    return replace(profile, fwhm=fwhm(profile))


def _place(p: SliceProfile, scale: float, dz: float) -> np.ndarray:
    """Resample ``p`` with its abscissa stretched by ``scale`` onto a centered step-``dz`` grid."""
    half_extent = (len(p.samples) - 1) / 2.0 * p.dz * scale
    k = int(math.floor(half_extent / dz + 1e-9))
    out_pos = np.arange(-k, k + 1) * dz
    src = out_pos / (scale * p.dz) + (len(p.samples) - 1) / 2.0
    vals = bspline.resample_line(p.samples, src)
    vals = 0.5 * (vals + vals[::-1])
    return np.clip(vals, 0.0, None)


def _truncate(vals: np.ndarray) -> np.ndarray:
    keep = np.flatnonzero(vals >= TRUNCATE_REL * vals.max())
    # symmetric trim keeps the peak on the middle sample
    m = len(vals) // 2
    r = max(m - keep[0], keep[-1] - m)
    return vals[m - r : m + r + 1]


def normalize_profile(p: SliceProfile, thickness: float, dz: float, tol: float = 1e-4) -> SliceProfile:
    """Stretch ``p`` to FWHM ``thickness`` mm and sample it at step ``dz`` mm.

    The stretch factor is refined until the FWHM measured on the sampled
    kernel matches ``thickness``; tails below 1e-4 of the peak are dropped
    and the result has unit area.
    """
    if not thickness > 0 or not dz > 0:
        raise ValueError("thickness and dz must be positive")
    width = fwhm(p)
    scale = thickness / width
    vals = None
    for _ in range(50):
        vals = _place(p, scale, dz)
        measured = fwhm(SliceProfile(vals, dz, 0.0))
        if abs(measured - thickness) <= tol * thickness:
            break
        scale *= thickness / measured
    vals = _truncate(vals)
    vals = vals / (vals.sum() * dz)
    meta = dict(p.meta, thickness=thickness)
    out = SliceProfile(vals, dz, 0.0, meta)
    return replace(out, fwhm=fwhm(out))


def delta_profile(dz: float) -> SliceProfile:
    """Identity kernel: a single unit-area sample."""
    return SliceProfile(np.array([1.0 / dz]), dz, dz, {"ftype": "delta"})
