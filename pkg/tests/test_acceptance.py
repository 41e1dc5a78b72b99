"""Acceptance criteria; each test reports a PASS/FAIL line in the terminal summary."""

import math
import time

import numpy as np
import pytest
from oracles import brute_ssim

from anisosim import bspline
from anisosim.degrade import (
    DEFAULT_RESOLUTIONS,
    ResolutionSpec,
    downsample_axis,
    resample_isotropic,
    resample_to_grid,
    simulate_acquisition,
)
from anisosim.harness import RunConfig, builtin_experiments, run_plan
from anisosim.metrics import SsimParams, psnr, ssim
from anisosim.nifti import write_nifti
from anisosim.sliceprofile import (
    b_to_a,
    delta_profile,
    design_b_poly,
    fwhm,
    normalize_profile,
    slr_profile,
)
from anisosim.volume import (
    CONTRASTS,
    Orientation2D,
    contrast_phantoms,
    ellipsoid_phantom,
    grating_phantom,
)


def _report(record_property, criterion, detail):
    record_property("criterion", criterion)
    record_property("detail", detail)


def test_1_spline_correctness(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_interp = worst_cubic = 0.0
    for _ in range(100):
        n = int(rng.integers(8, 200))
        s = rng.normal(size=n)
        got = bspline.resample_line(s, np.arange(n, dtype=float))
        worst_interp = max(worst_interp, np.abs(got - s).max())

        coeffs = rng.uniform(-1, 1, 4)
        k = np.arange(n, dtype=float) / (n - 1)
        x = rng.uniform(2, n - 3, 50)
        got = bspline.resample_line(np.polyval(coeffs, k), x)
        worst_cubic = max(worst_cubic, np.abs(got - np.polyval(coeffs, x / (n - 1))).max())
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        "#1 spline correctness",
        f"interp {worst_interp:.1e}, cubic {worst_cubic:.1e} (tol 1e-6), {elapsed:.2f} s",
    )
    assert worst_interp <= 1e-6
    assert worst_cubic <= 1e-6
    assert elapsed < 5


def test_2_slr_profile(record_property):
    t0 = time.perf_counter()
    b = design_b_poly()
    a = b_to_a(b)
    energy = np.abs(np.fft.fft(a, 4096)) ** 2 + np.abs(np.fft.fft(b, 4096)) ** 2
    energy_err = np.abs(energy - 1).max()
    raw = slr_profile()
    worst_fwhm = worst_area = worst_sym = 0.0
    for res in DEFAULT_RESOLUTIONS:
        p = normalize_profile(raw, res.thickness, 1.0)
        worst_fwhm = max(worst_fwhm, abs(fwhm(p) - res.thickness) / res.thickness)
        worst_area = max(worst_area, abs(p.samples.sum() * p.dz - 1))
        worst_sym = max(worst_sym, np.abs(p.samples - p.samples[::-1]).max())
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        "#2 SLR profile",
        f"|A|^2+|B|^2 err {energy_err:.1e}, FWHM err {100 * worst_fwhm:.2f}%, "
        f"area err {worst_area:.1e}, asym {worst_sym:.1e}, {elapsed:.2f} s",
    )
    assert energy_err <= 1e-4
    assert worst_fwhm <= 0.02
    assert worst_area <= 1e-9
    assert worst_sym <= 1e-9
    assert elapsed < 10


def test_3_degradation_identity(record_property):
    vol = ellipsoid_phantom((128, 128, 128), seed=0)
    t0 = time.perf_counter()
    out = simulate_acquisition(
        vol, ResolutionSpec(1.0, 0.0), Orientation2D.AXIAL, profile=delta_profile(1.0)
    )
    score = psnr(vol, out)
    elapsed = time.perf_counter() - t0
    _report(record_property, "#3 degradation identity", f"PSNR {score:.1f} dB (>= 150), {elapsed:.2f} s on 128^3")
    assert score >= 150
    assert elapsed < 5


def test_4_aliasing_oracle(record_property):
    t0 = time.perf_counter()
    vol = grating_phantom((32, 32, 181), (1.0, 1.0, 1.0), axis=2, period=3.0)
    restored = resample_isotropic(downsample_axis(vol, 2.0, 2), 1.0)
    line = restored.data[7, 9].astype(np.float64)
    spec = np.abs(np.fft.rfft(line - line.mean()))
    freqs = np.fft.rfftfreq(len(line), 1.0)
    peak = freqs[np.argmax(spec[1:]) + 1]
    elapsed = time.perf_counter() - t0
    _report(
        record_property,
        "#4 aliasing oracle",
        f"peak {peak:.4f} cyc/mm vs 1/6 = {1 / 6:.4f} (bin {freqs[1]:.4f}), {elapsed:.2f} s",
    )
    assert abs(peak - 1 / 6) <= freqs[1]
    assert elapsed < 10


SPACING_ORDER = sorted(DEFAULT_RESOLUTIONS, key=lambda r: r.spacing)


@pytest.fixture(scope="module")
def partial_volume_curves():
    """PSNR of degrade-then-restore per orientation for every default resolution (96^3 phantom)."""
    vol = ellipsoid_phantom((96, 96, 96), seed=0)
    curves, seconds = {}, {}
    for orient in Orientation2D:
        for res in SPACING_ORDER:
            t0 = time.perf_counter()
            lr = simulate_acquisition(vol, res, orient)
            curves[orient, str(res)] = psnr(vol, resample_to_grid(lr, vol))
            seconds[orient, str(res)] = time.perf_counter() - t0
    return curves, seconds


def test_5_partial_volume_monotonicity(record_property, partial_volume_curves):
    curves, seconds = partial_volume_curves
    worst_rise = -math.inf
    for orient in Orientation2D:
        values = [curves[orient, str(r)] for r in SPACING_ORDER]
        worst_rise = max(worst_rise, max(b - a for a, b in zip(values, values[1:])))
    elapsed = sum(seconds.values())
    axial = ", ".join(f"{curves[Orientation2D.AXIAL, str(r)]:.1f}" for r in SPACING_ORDER)
    _report(
        record_property,
        "#5 partial-volume monotonicity",
        f"max adjacent rise {worst_rise:+.2f} dB (<= 0.5); axial {axial} dB; {elapsed:.1f} s",
    )
    assert worst_rise <= 0.5
    assert elapsed < 120


def test_6_equal_spacing_equivalence(record_property, partial_volume_curves):
    curves, seconds = partial_volume_curves
    pairs = [("3||1", "4||0"), ("4||1", "5||0")]
    gaps = {
        (o, a, b): abs(curves[o, a] - curves[o, b]) for o in Orientation2D for a, b in pairs
    }
    elapsed = sum(seconds[o, r] for o in Orientation2D for pair in pairs for r in pair)
    worst = max(gaps.values())
    _report(
        record_property,
        "#6 equal-spacing equivalence",
        f"max |dPSNR| {worst:.2f} dB over 3 orientations (<= 1.0), {elapsed:.1f} s",
    )
    assert worst <= 1.0
    assert elapsed < 60


def test_7_metrics_oracle(record_property):
    ref = np.zeros((12, 12, 12))
    ref[0, 0, 0] = 1.0
    p20 = psnr(ref, ref + 0.1, 1.0)
    p_half = psnr(ref, ref + 0.05, 1.0)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(3):
        a = rng.random((32, 32, 32))
        b = np.clip(a + 0.15 * rng.normal(size=a.shape), 0, 1)
        worst = max(worst, abs(ssim(a, b) - brute_ssim(a, b, a.max() - a.min())))
    flat = ssim(np.full((16,) * 3, 0.5), np.full((16,) * 3, 0.6), SsimParams(dynamic_range=1.0))
    _report(
        record_property,
        "#7 metrics oracle",
        f"PSNR {p20:.12g} dB, halving +{p_half - p20:.6f} dB, SSIM vs brute {worst:.1e}, flat {flat:.5f}",
    )
    assert abs(p20 - 20.0) <= 1e-9
    assert abs(p_half - p20 - 20 * math.log10(2)) <= 1e-9
    assert abs((p_half - p20) - 6.0206) <= 1e-4
    assert worst <= 1e-5
    assert abs(flat - 0.98361) <= 1e-4


@pytest.fixture(scope="module")
def phantom_study(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_study")
    subjects = {}
    for i in range(3):
        sid = f"sub-{i + 1:02d}"
        vols = contrast_phantoms((64, 64, 64), seed=100 + i)
        subjects[sid] = {}
        for c in CONTRASTS:
            write_nifti(vols[c], root / f"{sid}_{c}.nii.gz")
            subjects[sid][c] = root / f"{sid}_{c}.nii.gz"
    return root, subjects


def test_8_end_to_end_determinism(record_property, phantom_study):
    root, subjects = phantom_study
    t0 = time.perf_counter()
    results = []
    for run in ("first", "second"):
        cfg = RunConfig(subjects=subjects, output_dir=root / run)
        results.append(run_plan(cfg))
    elapsed = time.perf_counter() - t0
    first, second = ((root / r / "results.csv").read_bytes() for r in ("first", "second"))
    res = results[0]
    _report(
        record_property,
        "#8 end-to-end determinism",
        f"{res.cells} cells, {len(res.records)} records, {len(res.failures)} failed, "
        f"identical={first == second}, {elapsed:.0f} s for two runs",
    )
    assert res.cells == 3 * 8 * 8
    assert len(res.records) == res.cells * 3 == 576
    assert not res.failures and not results[1].failures
    assert first == second
    assert elapsed < 15 * 60


def test_9_table_fidelity(record_property):
    table = [
        ("1a", "2D Axial", "2D Axial", "2D Axial"),
        ("1b", "2D Sagittal", "2D Sagittal", "2D Sagittal"),
        ("1c", "2D Coronal", "2D Coronal", "2D Coronal"),
        ("2", "2D Axial", "2D Sagittal", "2D Coronal"),
        ("3", "3D", "2D Axial", "2D Axial"),
        ("4", "3D", "2D Sagittal", "2D Coronal"),
        ("5", "2D Axial", "2D Axial", "3D"),
        ("6", "2D Sagittal", "2D Coronal", "3D"),
    ]

    def render(acq):
        return "3D" if acq.is_3d else f"2D {acq.orientation.value.capitalize()}"

    got = [(e.id, render(e.t1w), render(e.t2w), render(e.flair)) for e in builtin_experiments()]
    matches = sum(g == t for g, t in zip(got, table))
    _report(record_property, "#9 experiment table fidelity", f"{matches}/8 rows match")
    assert got == table
