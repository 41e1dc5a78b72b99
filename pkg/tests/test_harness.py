import math
import sys
import textwrap

import pytest

from anisosim import harness
from anisosim.degrade import DEFAULT_RESOLUTIONS, ResolutionSpec
from anisosim.harness import (
    AcqSpec,
    ConfigError,
    HarmonizerCmd,
    MetricsRecord,
    RunConfig,
    builtin_experiments,
    plan_runs,
    read_csv,
    run_plan,
    summarize,
    write_csv,
)
from anisosim.nifti import write_nifti
from anisosim.volume import CONTRASTS, contrast_phantoms

SIZE = 36


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    root = tmp_path_factory.mktemp("study")
    subjects = {}
    for i in range(2):
        sid = f"sub-{i + 1:02d}"
        vols = contrast_phantoms((SIZE,) * 3, seed=10 + i)
        subjects[sid] = {}
        for c in CONTRASTS:
            path = root / f"{sid}_{c}.nii.gz"
            write_nifti(vols[c], path)
            subjects[sid][c] = path
    return subjects


@pytest.fixture
def copier(tmp_path):
    """External harmonizer stand-in: copies the requested input contrast."""
    script = tmp_path / "copy_harmonizer.py"
    script.write_text(
        textwrap.dedent(
            """
            import shutil, sys, time
            t1w, t2w, flair, outdir, contrast, mode = sys.argv[1:7]
            if mode == "fail":
                sys.exit("model crashed")
            if mode == "sleep":
                time.sleep(30)
            if mode != "nothing":
                src = {"t1w": t1w, "t2w": t2w, "flair": flair}[contrast]
                shutil.copy(src, f"{outdir}/harmonized_{contrast}.nii.gz")
            """
        )
    )

    def make(mode="copy", **kw):
        template = (
            f'"{sys.executable}" "{script}" {{t1w}} {{t2w}} {{flair}} {{outdir}} {{contrast}} {mode}'
        )
        return HarmonizerCmd(template=template, **kw)

    return make


def test_builtin_experiments_match_table():
    expected = [
        ("1a", "axial", "axial", "axial"),
        ("1b", "sagittal", "sagittal", "sagittal"),
        ("1c", "coronal", "coronal", "coronal"),
        ("2", "axial", "sagittal", "coronal"),
        ("3", "3D", "axial", "axial"),
        ("4", "3D", "sagittal", "coronal"),
        ("5", "axial", "axial", "3D"),
        ("6", "sagittal", "coronal", "3D"),
    ]
    got = [(e.id, e.t1w.label, e.t2w.label, e.flair.label) for e in builtin_experiments()]
    assert got == expected


def test_acq_spec_parse():
    assert AcqSpec.parse("3d").is_3d
    assert AcqSpec.parse("Sagittal").orientation.axis == 0
    with pytest.raises(ValueError):
        AcqSpec.parse("oblique")


def test_plan_size_and_order():
    cells = plan_runs([f"s{i}" for i in range(10)], builtin_experiments(), DEFAULT_RESOLUTIONS)
    assert len(cells) == 640
    assert [c.index for c in cells] == list(range(640))
    first = cells[:8]
    assert {c.subject for c in first} == {"s0"} and {c.experiment.id for c in first} == {"1a"}
    spacings = [c.resolution.spacing for c in first]
    assert spacings == sorted(spacings)
    # equal spacing keeps the configured order: 4||1 before 5||0
    assert [str(c.resolution) for c in first][3:5] == ["4||1", "5||0"]
    one = plan_runs(["s"], builtin_experiments()[:1], ["3||0"])
    assert len(one) == 1


def test_plan_rejects_empty():
    with pytest.raises(ValueError):
        plan_runs([], builtin_experiments(), DEFAULT_RESOLUTIONS)


@pytest.mark.parametrize(
    "template",
    [
        "harmonize {t1w} {flair} {outdir}",
        "harmonize {t1w} {t2w} {flair}",
        "harmonize {t1w} {t2w} {flair} {outdir} {gpu}",
        "harmonize {t1w {t2w} {flair} {outdir}",
    ],
)
def test_bad_templates_rejected(template):
    with pytest.raises(ConfigError):
        HarmonizerCmd(template=template)


def test_command_expansion_quotes_paths():
    cmd = HarmonizerCmd(template="h --t1 {t1w} --t2 {t2w} --fl {flair} -o {outdir} --c {contrast} {target}", target="site A.nii")
    argv = cmd.command({"t1w": "a b.nii", "t2w": "t2", "flair": "f"}, "out dir", "t2w")
    assert argv == ["h", "--t1", "a b.nii", "--t2", "t2", "--fl", "f", "-o", "out dir", "--c", "t2w", "site A.nii"]


def _config(study, **kw):
    kw.setdefault("harmonizer", HarmonizerCmd.identity_mode())
    return RunConfig(subjects=dict(study), **kw)


def test_identity_all_3d_is_perfect(study, tmp_path):
    exp = harness.ExperimentConfig("3d", harness.THREE_D, harness.THREE_D, harness.THREE_D)
    cfg = _config(study, experiments=[exp], resolutions=[ResolutionSpec(3, 0)], output_dir=tmp_path)
    result = run_plan(cfg, jobs=1)
    assert len(result.records) == 6
    for r in result.records:
        assert math.isinf(r.psnr_db)
        assert r.ssim == pytest.approx(1.0, abs=1e-9)
    assert "inf" in (tmp_path / "results.csv").read_text()


def test_exp_1a_thin_beats_thick(study, tmp_path):
    cfg = _config(
        study,
        experiments=builtin_experiments()[:1],
        resolutions=[ResolutionSpec(3, 0), ResolutionSpec(5, 1.5)],
        output_dir=tmp_path,
    )
    result = run_plan(cfg, jobs=2)
    assert result.ok and result.cells == 4
    by = {(r.subject, r.contrast, str(r.resolution)): r for r in result.records}
    for sid in study:
        for c in ("T1w", "T2w", "FLAIR"):
            thin, thick = by[(sid, c, "3||0")], by[(sid, c, "5||1.5")]
            assert thin.psnr_db > thick.psnr_db
            assert thin.ssim > thick.ssim
            assert thin.orientation == "axial"


def test_jobs_do_not_change_results(study, tmp_path):
    base = dict(experiments=builtin_experiments()[3:5], resolutions=[ResolutionSpec(4, 1)])
    run_plan(_config(study, output_dir=tmp_path / "a", **base), jobs=1)
    run_plan(_config(study, output_dir=tmp_path / "b", **base), jobs=3)
    for name in ("results.csv", "summary.csv", "failures.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_external_harmonizer_matches_identity(study, copier, tmp_path):
    base = dict(experiments=builtin_experiments()[4:5], resolutions=[ResolutionSpec(5, 0)])
    ext = run_plan(_config(study, harmonizer=copier(), output_dir=tmp_path / "ext", **base), jobs=2)
    ident = run_plan(_config(study, output_dir=tmp_path / "id", **base), jobs=1)
    assert ext.ok
    # 2 subjects x 3 contrasts for the references, then again for the one cell each
    assert ext.harmonizer_calls == 12
    for a, b in zip(ext.records, ident.records):
        assert a == b


def test_reference_computed_once_per_subject(study, tmp_path):
    cfg = _config(study, experiments=builtin_experiments()[:2], resolutions=DEFAULT_RESOLUTIONS[:3], output_dir=tmp_path)
    result = run_plan(cfg, jobs=2)
    cells = 2 * 2 * 3
    assert result.harmonizer_calls == 3 * (cells + len(study))


@pytest.mark.parametrize("mode, reason", [("fail", "exited with 1"), ("nothing", "wrote no"), ("sleep", "timed out")])
def test_harmonizer_failures_are_recorded(study, copier, tmp_path, mode, reason):
    sub = {"sub-01": study["sub-01"]}
    cfg = RunConfig(
        subjects=sub,
        experiments=builtin_experiments()[:1],
        resolutions=[ResolutionSpec(3, 0)],
        harmonizer=copier(mode, timeout_s=2.0),
        output_dir=tmp_path,
    )
    result = run_plan(cfg, jobs=1)
    assert not result.ok and result.records == []
    assert len(result.failures) == 1
    assert reason in result.failures[0].reason
    text = (tmp_path / "failures.csv").read_text().splitlines()
    assert text[0] == "subject,experiment,resolution,reason" and len(text) == 2


def test_missing_subject_file_fails_only_its_cells(study, tmp_path):
    subjects = dict(study)
    subjects["sub-99"] = {c: tmp_path / f"missing_{c}.nii.gz" for c in CONTRASTS}
    cfg = RunConfig(
        subjects=subjects,
        experiments=builtin_experiments()[:1],
        resolutions=[ResolutionSpec(3, 0)],
        output_dir=tmp_path / "out",
    )
    result = run_plan(cfg, jobs=1)
    assert len(result.records) == 6
    assert [f.subject for f in result.failures] == ["sub-99"]


def test_scratch_cleaned_up(study, tmp_path, monkeypatch):
    monkeypatch.setenv("ANISOSIM_TMPDIR", str(tmp_path / "tmp"))
    (tmp_path / "tmp").mkdir()
    cfg = _config(study, experiments=builtin_experiments()[:1], resolutions=[ResolutionSpec(3, 0)], output_dir=tmp_path / "o")
    run_plan(cfg, jobs=1)
    assert list((tmp_path / "tmp").iterdir()) == []


def _rec(psnr, ssim=0.9, contrast="T1w", exp="1a", res=(3.0, 0.0), subject="s"):
    t, g = res
    return MetricsRecord(subject, exp, contrast, "axial", t, g, t + g, psnr, ssim)


def test_csv_empty_and_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    write_csv([], path)
    assert path.read_text() == ",".join(harness.CSV_HEADER) + "\n"
    assert read_csv(path) == []
    recs = [_rec(31.25), _rec(math.inf, 1.0, res=(4.0, 1.2)), _rec(12.5, -0.25, "FLAIR")]
    write_csv(recs, path)
    assert read_csv(path) == recs
    assert path.read_text().splitlines()[2].endswith(",inf,1")


def test_read_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(path)
    path.write_text(",".join(harness.CSV_HEADER) + "\ns,1a,T1w,axial,3,0,3,abc,0.9\n")
    with pytest.raises(ValueError, match="line 2"):
        read_csv(path)


def test_summarize_quantiles():
    rows = summarize([_rec(10, subject="a"), _rec(30, subject="c"), _rec(20, subject="b")])
    assert len(rows) == 1
    s = rows[0]["psnr"]
    assert (s["median"], s["q1"], s["q3"], s["min"], s["max"]) == (20, 15, 25, 10, 30)
    single = summarize([_rec(7.0)])[0]["psnr"]
    assert single["median"] == single["q1"] == single["q3"] == 7.0


def test_summarize_all_inf_group():
    rows = summarize([_rec(math.inf, 1.0), _rec(math.inf, 1.0)])
    assert rows[0]["psnr"] is None and rows[0]["inf_count"] == 2 and rows[0]["n"] == 2
    assert rows[0]["ssim"]["median"] == 1.0


def test_summarize_order():
    recs = [
        _rec(1, exp="2", contrast="FLAIR"),
        _rec(1, exp="1a", contrast="FLAIR", res=(5.0, 0.0)),
        _rec(1, exp="1a", contrast="T1w", res=(4.0, 1.0)),
        _rec(1, exp="1a", contrast="T1w", res=(3.0, 1.0)),
    ]
    keys = [(r["experiment"], r["contrast"], r["resolution"]) for r in summarize(recs)]
    assert keys == [("1a", "T1w", "3||1"), ("1a", "T1w", "4||1"), ("1a", "FLAIR", "5||0"), ("2", "FLAIR", "3||0")]


def test_config_from_json(tmp_path):
    (tmp_path / "cfg.json").write_text(
        """{"data_root": "data", "subjects": {"s1": {"T1w": "a.nii", "T2w": "b.nii", "T2w-FLAIR": "c.nii"}},
        "experiments": [{"id": "x", "t1w": "3D", "t2w": "axial", "flair": "coronal"}],
        "resolutions": ["3||0", "5||1.5"],
        "harmonizer": {"template": "h {t1w} {t2w} {flair} {outdir}", "timeout_s": 60, "exclusive": true},
        "output_dir": "out"}"""
    )
    cfg = RunConfig.load(tmp_path / "cfg.json")
    assert cfg.subjects["s1"]["flair"] == tmp_path / "data" / "c.nii"
    assert cfg.experiments[0].flair.label == "coronal"
    assert [str(r) for r in cfg.resolutions] == ["3||0", "5||1.5"]
    assert cfg.harmonizer.exclusive and cfg.harmonizer.timeout_s == 60
    assert cfg.output_dir == tmp_path / "out"


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"subjects": {}},
        {"subjects": {"s": {"pd": "x"}}},
        {"subjects": {"s": {"t1w": "x"}}, "resolutions": ["3|0"]},
        {"subjects": {"s": {"t1w": "x"}}, "harmonizer": {"template": "h {t1w}"}},
        {"subjects": {"s": {"t1w": "x"}}, "experiments": [{"id": "a"}]},
    ],
)
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)
