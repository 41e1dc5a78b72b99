"""Experiment matrix, external harmonizer adapter, scoring and result files."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shlex
import shutil
import string
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degrade import (
    DEFAULT_RESOLUTIONS,
    ResolutionSpec,
    parse_resolutions,
    resample_to_grid,
    simulate_acquisition,
)
from .metrics import psnr, ssim
from .nifti import read_nifti, write_nifti
from .sliceprofile import SliceDesign
from .volume import CONTRASTS, Orientation2D, Volume3, to_canonical

log = logging.getLogger(__name__)

__all__ = [
    "AcqSpec",
    "ExperimentConfig",
    "HarmonizerCmd",
    "HarmonizerError",
    "ConfigError",
    "RunCell",
    "MetricsRecord",
    "CellFailure",
    "RunConfig",
    "RunResult",
    "ReferenceStore",
    "builtin_experiments",
    "plan_runs",
    "run_cell",
    "run_plan",
    "write_csv",
    "read_csv",
    "summarize",
    "write_summary_csv",
    "write_failures_csv",
    "CSV_HEADER",
    "CONTRAST_LABELS",
]

CONTRAST_LABELS = {"t1w": "T1w", "t2w": "T2w", "flair": "FLAIR"}
_LABEL_TO_KEY = {v.lower(): k for k, v in CONTRAST_LABELS.items()}

CSV_HEADER = [
    "subject",
    "experiment",
    "contrast",
    "orientation",
    "thickness_mm",
    "gap_mm",
    "spacing_mm",
    "psnr_db",
    "ssim",
]


class ConfigError(ValueError):
    """Invalid run configuration or harmonizer template."""


class HarmonizerError(RuntimeError):
    """External harmonizer failed, timed out or produced no output."""


@dataclass(frozen=True)
class AcqSpec:
    """3D acquisition when ``orientation`` is None, else 2D in that orientation."""

    orientation: Orientation2D | None = None

    @property
    def is_3d(self) -> bool:
        return self.orientation is None

    @property
    def label(self) -> str:
        return "3D" if self.orientation is None else self.orientation.value

    @classmethod
    def parse(cls, text: str) -> "AcqSpec":
        if str(text).strip().upper() == "3D":
            return cls(None)
        return cls(Orientation2D.parse(text))


THREE_D = AcqSpec(None)
AXIAL = AcqSpec(Orientation2D.AXIAL)
SAGITTAL = AcqSpec(Orientation2D.SAGITTAL)
CORONAL = AcqSpec(Orientation2D.CORONAL)


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    t1w: AcqSpec
    t2w: AcqSpec
    flair: AcqSpec

    def acq(self, contrast: str) -> AcqSpec:
        return getattr(self, contrast)

    @property
    def all_3d(self) -> bool:
        return all(self.acq(c).is_3d for c in CONTRASTS)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls(str(d["id"]), *(AcqSpec.parse(d[c]) for c in CONTRASTS))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad experiment definition {d!r}: {exc}") from exc


def builtin_experiments() -> list:
    """The eight acquisition combinations evaluated for harmonization."""
    return [
        ExperimentConfig("1a", AXIAL, AXIAL, AXIAL),
        ExperimentConfig("1b", SAGITTAL, SAGITTAL, SAGITTAL),
        ExperimentConfig("1c", CORONAL, CORONAL, CORONAL),
        ExperimentConfig("2", AXIAL, SAGITTAL, CORONAL),
        ExperimentConfig("3", THREE_D, AXIAL, AXIAL),
        ExperimentConfig("4", THREE_D, SAGITTAL, CORONAL),
        ExperimentConfig("5", AXIAL, AXIAL, THREE_D),
        ExperimentConfig("6", SAGITTAL, CORONAL, THREE_D),
    ]


_REQUIRED_PLACEHOLDERS = ("t1w", "t2w", "flair", "outdir")
_KNOWN_PLACEHOLDERS = set(_REQUIRED_PLACEHOLDERS) | {"contrast", "target"}


@dataclass(frozen=True)
class HarmonizerCmd:
    """Command template for an external harmonization model.

    Placeholders ``{t1w} {t2w} {flair} {outdir}`` are required; ``{contrast}``
    (the requested output) and ``{target}`` are optional. The command must
    write ``<outdir>/harmonized_<contrast>.nii.gz`` and exit 0. ``identity``
    skips the subprocess and returns the requested input unchanged.
    """

    template: str = ""
    target: str | None = None
    timeout_s: float = 3600.0
    exclusive: bool = False
    identity: bool = False

    def __post_init__(self):
        if self.identity:
            return
        try:
            names = {f for _, f, _, _ in string.Formatter().parse(self.template) if f is not None}
        except ValueError as exc:
            raise ConfigError(f"malformed harmonizer template: {exc}") from exc
        missing = [p for p in _REQUIRED_PLACEHOLDERS if p not in names]
        if missing:
            raise ConfigError(f"harmonizer template lacks placeholders: {', '.join(missing)}")
        unknown = names - _KNOWN_PLACEHOLDERS
        if unknown:
            raise ConfigError(f"unknown harmonizer placeholders: {', '.join(sorted(unknown))}")
        if not self.timeout_s > 0:
            raise ConfigError("harmonizer timeout must be positive")

    @classmethod
    def identity_mode(cls) -> "HarmonizerCmd":
        return cls(identity=True)

    @classmethod
    def from_dict(cls, d) -> "HarmonizerCmd":
        if d in (None, "identity") or (isinstance(d, dict) and d.get("identity")):
            return cls.identity_mode()
        if not isinstance(d, dict) or "template" not in d:
            raise ConfigError("harmonizer needs a 'template'")
        return cls(
            template=str(d["template"]),
            target=d.get("target"),
            timeout_s=float(d.get("timeout_s", 3600.0)),
            exclusive=bool(d.get("exclusive", False)),
        )

    def command(self, inputs: dict, outdir, contrast: str) -> list:
        values = {c: shlex.quote(str(inputs[c])) for c in CONTRASTS}
        values["outdir"] = shlex.quote(str(outdir))
        values["contrast"] = contrast
        values["target"] = shlex.quote(str(self.target)) if self.target else ""
        return shlex.split(self.template.format(**values))


class _Harmonizer:
    """Runs a :class:`HarmonizerCmd`, serializing calls when it is exclusive."""

    def __init__(self, cmd: HarmonizerCmd):
        self.cmd = cmd
        self._lock = threading.Lock()
        self.calls = 0
        self._count_lock = threading.Lock()

    def __call__(self, volumes: dict, contrast: str, workdir: Path) -> Volume3:
        with self._count_lock:
            self.calls += 1
        if self.cmd.identity:
            return volumes[contrast]
        workdir.mkdir(parents=True, exist_ok=True)
        inputs = {}
        for c in CONTRASTS:
            inputs[c] = workdir / f"input_{c}.nii.gz"
            write_nifti(volumes[c], inputs[c])
        outdir = workdir / "out"
        outdir.mkdir(exist_ok=True)
        argv = self.cmd.command(inputs, outdir, contrast)
        if self.cmd.exclusive:
            with self._lock:
                proc = self._run(argv)
        else:
            proc = self._run(argv)
        if proc.returncode != 0:
            tail = (proc.stderr or "").strip().splitlines()[-1:] or [""]
            raise HarmonizerError(f"harmonizer exited with {proc.returncode}: {tail[0]}")
        out = outdir / f"harmonized_{contrast}.nii.gz"
        if not out.exists():
            raise HarmonizerError(f"harmonizer wrote no {out.name}")
        return to_canonical(read_nifti(out))

    def _run(self, argv):
        try:
            return subprocess.run(
                argv, capture_output=True, text=True, timeout=self.cmd.timeout_s, check=False
            )
        except subprocess.TimeoutExpired:
            raise HarmonizerError(f"harmonizer timed out after {self.cmd.timeout_s:g} s") from None
        except OSError as exc:
            raise HarmonizerError(f"cannot launch harmonizer: {exc}") from exc


@dataclass(frozen=True)
class RunCell:
    index: int
    subject: str
    experiment: ExperimentConfig
    resolution: ResolutionSpec

    @property
    def key(self) -> str:
        return f"{self.subject}/exp{self.experiment.id}/{self.resolution}"


@dataclass(frozen=True)
class MetricsRecord:
    subject: str
    experiment: str
    contrast: str
    orientation: str
    thickness_mm: float
    gap_mm: float
    spacing_mm: float
    psnr_db: float
    ssim: float

    def row(self) -> list:
        return [
            self.subject,
            self.experiment,
            self.contrast,
            self.orientation,
            _fmt(self.thickness_mm),
            _fmt(self.gap_mm),
            _fmt(self.spacing_mm),
            _fmt(self.psnr_db),
            _fmt(self.ssim),
        ]

    @property
    def resolution(self) -> ResolutionSpec:
        return ResolutionSpec(self.thickness_mm, self.gap_mm)


@dataclass(frozen=True)
class CellFailure:
    subject: str
    experiment: str
    resolution: str
    reason: str


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def plan_runs(subjects, experiments, resolutions) -> list:
    """Cartesian product ordered by subject, experiment, then slice spacing."""
    subjects = list(subjects)
    experiments = list(experiments)
    resolutions = parse_resolutions(resolutions)
    if not subjects or not experiments or not resolutions:
        raise ValueError("plan_runs needs at least one subject, experiment and resolution")
    ordered = sorted(enumerate(resolutions), key=lambda ir: (ir[1].spacing, ir[0]))
    cells = []
    for s in subjects:
        for e in experiments:
            for _, r in ordered:
                cells.append(RunCell(len(cells), str(s), e, r))
    return cells


class _SubjectCache:
    """Loads each subject's canonical volumes once."""

    def __init__(self, subjects: dict):
        self.subjects = subjects
        self._cache = {}
        self._lock = threading.Lock()

    def get(self, subject: str) -> dict:
        with self._lock:
            if subject not in self._cache:
                paths = self.subjects[subject]
                vols = {}
                for c in CONTRASTS:
                    if c not in paths:
                        raise FileNotFoundError(f"subject {subject} has no {c} image")
                    vols[c] = to_canonical(read_nifti(paths[c]))
                self._cache[subject] = vols
            return self._cache[subject]


class ReferenceStore:
    """Harmonized outputs from all-3D inputs, one per (subject, contrast).

    Each reference is computed once, written under ``root`` and reused by
    every cell of that subject.
    """

    def __init__(self, root, harmonizer: _Harmonizer, subjects: _SubjectCache):
        self.root = Path(root)
        self.harmonizer = harmonizer
        self.subjects = subjects
        self._refs = {}
        self._errors = {}
        self._lock = threading.Lock()

    def materialize(self, subject: str) -> None:
        with self._lock:
            if subject in self._refs or subject in self._errors:
                return
            try:
                vols = self.subjects.get(subject)
                refs = {}
                for c in CONTRASTS:
                    out = self.harmonizer(vols, c, self.root / subject / c)
                    if not self.harmonizer.cmd.identity:
                        write_nifti(out, self.root / subject / f"reference_{c}.nii.gz")
                    refs[c] = out
                self._refs[subject] = refs
            except (OSError, ValueError, HarmonizerError) as exc:
                self._errors[subject] = f"reference run failed: {exc}"

    def get(self, subject: str, contrast: str) -> Volume3:
        self.materialize(subject)
        if subject in self._errors:
            raise HarmonizerError(self._errors[subject])
        return self._refs[subject][contrast]


def run_cell(
    cell: RunCell,
    subjects: _SubjectCache,
    harmonizer: _Harmonizer,
    refs: ReferenceStore,
    scratch,
    design: SliceDesign = SliceDesign(),
    data_range: float | None = None,
):
    """Degrade, restore, harmonize and score one cell.

    Returns ``(records, None)`` on success or ``([], CellFailure)``.
    """
    exp = cell.experiment
    res = cell.resolution
    try:
        pristine = subjects.get(cell.subject)
        inputs = {}
        for c in CONTRASTS:
            acq = exp.acq(c)
            vol = pristine[c]
            if acq.is_3d:
                inputs[c] = vol
            else:
                lr = simulate_acquisition(vol, res, acq.orientation, design)
                inputs[c] = resample_to_grid(lr, vol)
        records = []
        workdir = Path(scratch) / cell.subject / f"exp{exp.id}" / str(res).replace("||", "_")
        for c in CONTRASTS:
            out = harmonizer(inputs, c, workdir / c)
            ref = refs.get(cell.subject, c)
            if not out.same_grid(ref):
                raise HarmonizerError(f"harmonized {c} is not on the reference grid")
            records.append(
                MetricsRecord(
                    subject=cell.subject,
                    experiment=exp.id,
                    contrast=CONTRAST_LABELS[c],
                    orientation=exp.acq(c).label,
                    thickness_mm=res.thickness,
                    gap_mm=res.gap,
                    spacing_mm=res.spacing,
                    psnr_db=psnr(ref, out, data_range),
                    ssim=ssim(ref, out),
                )
            )
        return records, None
    except (OSError, ValueError, HarmonizerError) as exc:
        log.warning("cell %s failed: %s", cell.key, exc)
        return [], CellFailure(cell.subject, exp.id, str(res), str(exc))


@dataclass
class RunConfig:
    subjects: dict
    experiments: list = field(default_factory=builtin_experiments)
    resolutions: list = field(default_factory=lambda: list(DEFAULT_RESOLUTIONS))
    harmonizer: HarmonizerCmd = field(default_factory=HarmonizerCmd.identity_mode)
    output_dir: Path = Path("results")
    design: SliceDesign = SliceDesign()
    data_range: float | None = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base=Path(".")) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        base = Path(base)
        data_root = base / doc.get("data_root", ".")
        raw_subjects = doc.get("subjects")
        if not isinstance(raw_subjects, dict) or not raw_subjects:
            raise ConfigError("config needs a non-empty 'subjects' mapping")
        subjects = {}
        for sid, paths in raw_subjects.items():
            if not isinstance(paths, dict):
                raise ConfigError(f"subject {sid!r} must map contrasts to paths")
            subjects[str(sid)] = {
                _contrast_key(c): data_root / p for c, p in paths.items()
            }
        try:
            experiments = (
                [ExperimentConfig.from_dict(e) for e in doc["experiments"]]
                if doc.get("experiments")
                else builtin_experiments()
            )
            resolutions = parse_resolutions(doc.get("resolutions") or DEFAULT_RESOLUTIONS)
            design = SliceDesign(**doc.get("design", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        ids = [e.id for e in experiments]
        if len(set(ids)) != len(ids):
            raise ConfigError("experiment ids must be unique")
        return cls(
            subjects=subjects,
            experiments=experiments,
            resolutions=resolutions,
            harmonizer=HarmonizerCmd.from_dict(doc.get("harmonizer")),
            output_dir=base / doc.get("output_dir", "results"),
            design=design,
            data_range=doc.get("data_range"),
        )


def _contrast_key(name: str) -> str:
    key = str(name).lower()
    key = _LABEL_TO_KEY.get(key, key)
    if key in ("t2w-flair", "t2flair"):
        key = "flair"
    if key not in CONTRASTS:
        raise ConfigError(f"unknown contrast {name!r}")
    return key


@dataclass
class RunResult:
    records: list
    failures: list
    cells: int
    harmonizer_calls: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def _scratch_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    base = os.environ.get("ANISOSIM_TMPDIR") or None
    return Path(tempfile.mkdtemp(prefix="anisosim-", dir=base))


def _execute(config, cells, scratch, jobs):
    subjects = _SubjectCache(config.subjects)
    harmonizer = _Harmonizer(config.harmonizer)
    refs = ReferenceStore(scratch / "reference", harmonizer, subjects)
    for sid in config.subjects:
        refs.materialize(sid)

    def work(cell):
        return run_cell(
            cell, subjects, harmonizer, refs, scratch / "cells", config.design, config.data_range
        )

    jobs = jobs or os.cpu_count() or 1
    if jobs == 1:
        outcomes = [work(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, cells))
    return outcomes, harmonizer.calls


def run_plan(config: RunConfig, jobs: int | None = None, scratch=None, write: bool = True) -> RunResult:
    """Execute every cell of ``config`` and write the three result files.

    References are materialized before the worker pool starts; cell results
    are collected in plan order, so the output does not depend on ``jobs``.
    """
    cells = plan_runs(config.subjects, config.experiments, config.resolutions)
    owned = scratch is None
    scratch = _scratch_root(scratch)
    try:
        outcomes, calls = _execute(config, cells, scratch, jobs)
    finally:
        if owned:
            shutil.rmtree(scratch, ignore_errors=True)

    records = [r for recs, _ in outcomes for r in recs]
    failures = [f for _, f in outcomes if f is not None]
    result = RunResult(records, failures, len(cells), calls)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(records, out / "results.csv")
        write_summary_csv(summarize(records), out / "summary.csv")
        write_failures_csv(failures, out / "failures.csv")
    return result


def write_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(r.row())


def read_csv(path) -> list:
    """Parse a results file written by :func:`write_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected results header: {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
            try:
                records.append(
                    MetricsRecord(
                        row[0], row[1], row[2], row[3], *(float(v) for v in row[4:])
                    )
                )
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    return records


def _five_numbers(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"median": med, "q1": q1, "q3": q3, "min": v.min(), "max": v.max()}


_EXPERIMENT_ORDER = {e.id: i for i, e in enumerate(builtin_experiments())}
_CONTRAST_ORDER = {label: i for i, label in enumerate(CONTRAST_LABELS.values())}


def summarize(records) -> list:
    """Box-plot statistics per (experiment, contrast, resolution).

    Quantiles interpolate linearly between order statistics. Infinite PSNR
    values are left out of the PSNR statistics and counted in ``inf_count``.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.experiment, r.contrast, r.thickness_mm, r.gap_mm), []).append(r)

    def order(key):
        exp, contrast, t, g = key
        return (
            _EXPERIMENT_ORDER.get(exp, len(_EXPERIMENT_ORDER)),
            exp,
            _CONTRAST_ORDER.get(contrast, len(_CONTRAST_ORDER)),
            contrast,
            t + g,
            t,
        )

    rows = []
    for key in sorted(groups, key=order):
        exp, contrast, t, g = key
        recs = groups[key]
        finite = [r.psnr_db for r in recs if math.isfinite(r.psnr_db)]
        row = {
            "experiment": exp,
            "contrast": contrast,
            "resolution": str(ResolutionSpec(t, g)),
            "spacing_mm": t + g,
            "n": len(recs),
            "inf_count": len(recs) - len(finite),
            "psnr": _five_numbers(finite) if finite else None,
            "ssim": _five_numbers([r.ssim for r in recs]),
        }
        rows.append(row)
    return rows


SUMMARY_HEADER = (
    ["experiment", "contrast", "resolution", "spacing_mm", "n", "inf_count"]
    + [f"psnr_{k}" for k in ("median", "q1", "q3", "min", "max")]
    + [f"ssim_{k}" for k in ("median", "q1", "q3", "min", "max")]
)


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            stats = []
            for metric in ("psnr", "ssim"):
                s = row[metric]
                keys = ("median", "q1", "q3", "min", "max")
                stats += [_fmt(s[k]) for k in keys] if s else [""] * 5
            writer.writerow(
                [
                    row["experiment"],
                    row["contrast"],
                    row["resolution"],
                    _fmt(row["spacing_mm"]),
                    row["n"],
                    row["inf_count"],
                ]
                + stats
            )


def write_failures_csv(failures, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "experiment", "resolution", "reason"])
        for f in failures:
            writer.writerow([f.subject, f.experiment, f.resolution, f.reason])
