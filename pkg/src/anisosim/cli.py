"""Command-line entry point: ``anisosim <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 batch run finished with failed cells.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("anisosim")


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _non_negative(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (value >= 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _ripple(text):
    value = _positive(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"ripple must be below 1, got {text}")
    return value


def _add_design_flags(p):
    g = p.add_argument_group("slice profile design")
    g.add_argument("--taps", type=int, default=64, help="number of filter taps (default 64)")
    g.add_argument("--tb", type=_positive, default=4.0, help="time-bandwidth product (default 4)")
    g.add_argument("--d1", type=_ripple, default=0.01, help="passband ripple (default 0.01)")
    g.add_argument("--d2", type=_ripple, default=0.01, help="stopband ripple (default 0.01)")


def _design(args):
    from .sliceprofile import SliceDesign

    return SliceDesign(n=args.taps, tb=args.tb, d1=args.d1, d2=args.d2)


def cmd_profile(args):
    from .sliceprofile import normalize_profile, slr_profile

    d = _design(args)
    p = slr_profile(d.n, d.tb, d.d1, d.d2, grid=args.grid)
    unit = "slice widths"
    if args.thickness is not None:
        p = normalize_profile(p, args.thickness, args.dz)
        unit = "mm"
    lines = [f"# fwhm={p.fwhm:.6g} {unit} dz={p.dz:.6g} taps={d.n} tb={d.tb:g}"]
    lines += [f"{x:.6f} {y:.9g}" for x, y in zip(p.positions, p.samples)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_phantom(args):
    from .nifti import write_nifti
    from .volume import CONTRASTS, contrast_phantoms, phantom

    dims = (args.size,) * 3
    spacing = (args.spacing,) * 3
    if args.study:
        root = Path(args.study)
        root.mkdir(parents=True, exist_ok=True)
        subjects = {}
        for i in range(args.subjects):
            sid = f"sub-{i + 1:02d}"
            vols = contrast_phantoms(dims, spacing, seed=args.seed + i)
            subjects[sid] = {}
            for c in CONTRASTS:
                name = f"{sid}_{c}.nii.gz"
                write_nifti(vols[c], root / name)
                subjects[sid][c] = name
        config = {
            "data_root": ".",
            "subjects": subjects,
            "resolutions": ["3||0", "3||1", "4||0", "4||1", "4||1.2", "5||0", "5||1", "5||1.5"],
            "harmonizer": {"identity": True},
            "output_dir": "results",
        }
        (root / "config.json").write_text(json.dumps(config, indent=2) + "\n")
        print(root / "config.json")
        return EXIT_OK
    if not args.out:
        raise argparse.ArgumentTypeError("phantom needs --out or --study")
    if args.kind == "grating":
        vol = phantom("grating", dims, spacing=spacing, axis=args.axis, period=args.period)
    else:
        vol = phantom("ellipsoids", dims, spacing=spacing, seed=args.seed, contrast=args.contrast)
    write_nifti(vol, args.out)
    return EXIT_OK


def cmd_degrade(args):
    from .degrade import ResolutionSpec, resample_isotropic, simulate_acquisition
    from .nifti import read_nifti, write_nifti
    from .volume import Orientation2D, to_canonical

    vol = to_canonical(read_nifti(args.input))
    res = ResolutionSpec(args.thickness, args.gap)
    out = simulate_acquisition(vol, res, Orientation2D.parse(args.orientation), _design(args))
    if args.restore_isotropic:
        out = resample_isotropic(out, args.target)
    write_nifti(out, args.out)
    log.info("wrote %s dims=%s spacing=%s", args.out, out.dims, out.spacing)
    return EXIT_OK


def cmd_resample(args):
    from .degrade import resample_isotropic, resample_to_grid
    from .nifti import read_nifti, write_nifti
    from .volume import to_canonical

    vol = to_canonical(read_nifti(args.input))
    if args.like:
        out = resample_to_grid(vol, to_canonical(read_nifti(args.like)))
    else:
        out = resample_isotropic(vol, args.target)
    write_nifti(out, args.out)
    return EXIT_OK


def cmd_metrics(args):
    from .metrics import SsimParams, psnr, ssim
    from .nifti import read_nifti
    from .volume import to_canonical

    ref = to_canonical(read_nifti(args.ref))
    test = to_canonical(read_nifti(args.test))
    if not ref.same_grid(test):
        raise ValueError("reference and test volumes are on different grids")
    mask = to_canonical(read_nifti(args.mask)).data > 0 if args.mask else None
    p = psnr(ref, test, args.range, mask)
    s = ssim(ref, test, SsimParams(dynamic_range=args.range), mask)
    print(f"psnr_db={'inf' if math.isinf(p) else f'{p:.6g}'} ssim={s:.6g}")
    return EXIT_OK


def cmd_run(args):
    from .harness import ConfigError, HarmonizerCmd, RunConfig, run_plan

    try:
        config = RunConfig.load(args.config)
    except ConfigError as exc:
        print(f"anisosim run: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.identity_harmonizer:
        config.harmonizer = HarmonizerCmd.identity_mode()
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    result = run_plan(config, jobs=args.jobs)
    print(
        f"{result.cells} cells, {len(result.records)} records, {len(result.failures)} failed"
        f" -> {config.output_dir}"
    )
    return EXIT_OK if result.ok else EXIT_PARTIAL


def cmd_report(args):
    from .harness import read_csv, summarize, write_summary_csv
    from .plotting import write_report_figures

    try:
        records = read_csv(args.results)
    except (OSError, ValueError) as exc:
        print(f"anisosim report: cannot parse {args.results}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not records:
        print(f"anisosim report: {args.results} has no records", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summarize(records), out / "summary.csv")
    paths = write_report_figures(records, out)
    print(f"wrote {len(paths)} figures and summary.csv to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anisosim",
        description="Simulate 2D MR acquisitions and score harmonization across resolutions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="print an SLR slice profile as 'position amplitude' rows")
    _add_design_flags(p)
    p.add_argument("--grid", type=int, default=4096, help="frequency grid size (default 4096)")
    p.add_argument("--thickness", type=_positive, help="normalize to this FWHM in mm")
    p.add_argument("--dz", type=_positive, default=1.0, help="sample step in mm (default 1)")
    p.add_argument("--out", help="write to file instead of stdout")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("phantom", help="write a synthetic phantom or a phantom study")
    p.add_argument("--kind", choices=["ellipsoids", "grating"], default="ellipsoids")
    p.add_argument("--size", type=int, default=64, help="grid points per axis (>= 32)")
    p.add_argument("--spacing", type=_positive, default=1.0, help="voxel size in mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", choices=["t1w", "t2w", "flair"], default="t1w")
    p.add_argument("--axis", type=int, choices=[0, 1, 2], default=2, help="grating axis")
    p.add_argument("--period", type=_positive, default=6.0, help="grating period in mm")
    p.add_argument("--out", help="output NIfTI path")
    p.add_argument("--study", help="write a multi-contrast phantom study and config.json here")
    p.add_argument("--subjects", type=int, default=3, help="subjects in a study (default 3)")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", help="simulate a 2D acquisition of a NIfTI volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thickness", type=_positive, required=True, help="slice thickness in mm")
    p.add_argument("--gap", type=_non_negative, default=0.0, help="slice gap in mm")
    p.add_argument(
        "--orientation", choices=["axial", "sagittal", "coronal"], required=True
    )
    _add_design_flags(p)
    p.add_argument(
        "--restore-isotropic", action="store_true", help="resample the result back to --target mm"
    )
    p.add_argument("--target", type=_positive, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("resample", help="cubic B-spline resampling to an isotropic grid")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=_positive, default=1.0, help="voxel size in mm (default 1)")
    p.add_argument("--like", help="resample onto the grid of this volume instead")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("metrics", help="PSNR and SSIM of a test volume against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--range", type=_positive, help="fixed dynamic range (default: reference max-min)")
    p.add_argument("--mask", help="score only voxels where this volume is > 0")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("run", help="run the experiment matrix from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: CPU count)")
    p.add_argument("--identity-harmonizer", action="store_true")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summary table and SVG box plots from results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"anisosim {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
