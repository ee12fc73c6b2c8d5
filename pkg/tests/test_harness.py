import hashlib
import json
import math

import numpy as np
import pytest

from ricci_lab import harness
from ricci_lab.errors import ConfigError, MemberFailure
from ricci_lab.grid import MetricField, PeriodicGrid, write_field
from ricci_lab.harness import (
    ExperimentConfig,
    RunRecord,
    audit_trajectory,
    compare_runs,
    emit_report,
    load_trajectory,
    plot_script_links,
    run_experiment,
    save_trajectory,
)

FLAT_INI = """
[experiment]
name = flat
out = {out}
metric_path = flat.bin

[grid]
n = 3
points = 12
side = 4.0

[flow]
t_end = 0.02
tracker_stride = 2
schedule = 0.005 0.01

[audit:monotonicity]
[audit:prop31]
t_fixed = 0.01
[audit:prop41]
delta = 0.25
[audit:ball_inclusion]
[audit:gaussian_bound]
"""

SPIKE_INI = """
[experiment]
name = spikes
out = {out}

[grid]
points = 16

[family]
kind = Lp
amplitude = 0.5
width = 1.5
indices = 1 2 3

[flow]
t_end = 0.01
tracker_stride = 4
schedule = 0.005

[audit:monotonicity]
[audit:prop31]
t_fixed = 0.01
"""


def flat_config(tmp_path, out="runs"):
    write_field(tmp_path / "flat.bin", MetricField.euclidean(PeriodicGrid.cubic(3, 12, 4.0)))
    return ExperimentConfig.from_text(FLAT_INI.format(out=out), base_dir=tmp_path)


def spike_config(tmp_path, out="runs"):
    return ExperimentConfig.from_text(SPIKE_INI.format(out=out), base_dir=tmp_path)


# -- configuration ---------------------------------------------------------


def test_ini_and_json_parse_to_the_same_config(tmp_path):
    ini = spike_config(tmp_path)
    js = ExperimentConfig.from_dict(json.loads(ini.canonical_json()), base_dir=tmp_path)
    assert js.data == ini.data
    assert js.hash == ini.hash
    nested = {
        "experiment": {"name": "spikes", "out": "runs"},
        "grid": {"points": 16},
        "family": {"kind": "Lp", "amplitude": 0.5, "width": 1.5, "indices": [1, 2, 3]},
        "flow": {"t_end": 0.01, "tracker_stride": 4, "schedule": [0.005]},
        "audits": {"monotonicity": {}, "prop31": {"t_fixed": 0.01}},
    }
    assert ExperimentConfig.from_dict(nested, base_dir=tmp_path).hash == ini.hash


def test_config_file_roundtrip(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SPIKE_INI.format(out="runs"))
    q = tmp_path / "c.json"
    q.write_text(ExperimentConfig.load(p).canonical_json())
    assert ExperimentConfig.load(q).hash == ExperimentConfig.load(p).hash


@pytest.mark.parametrize("patch", [
    ("[grid]", "[gird]"),
    ("points = 16", "points = sixteen"),
    ("points = 16", "points = 16\nspacing = 2"),
    ("name = spikes", ""),
    ("kind = Lp", "kind = Lq"),
    ("tracker_stride = 4", "tracker_stride = 0"),
    ("[audit:prop31]", "[audit:prop41]\nsigma = 0\n[audit:prop31]"),
    ("out = {out}", "out = {out}\njobs = 0"),
])
def test_invalid_configs_are_rejected(tmp_path, patch):
    text = SPIKE_INI.replace(*patch).format(out="runs")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text, base_dir=tmp_path)


def test_missing_metric_path_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(FLAT_INI.format(out="runs"), base_dir=tmp_path)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.ini")


def test_overrides_revalidate(tmp_path):
    cfg = spike_config(tmp_path)
    assert cfg.with_overrides(grid_points=24).grid.shape == (24, 24, 24)
    assert cfg.with_overrides(grid_points=24).hash != cfg.hash
    with pytest.raises(ConfigError):
        cfg.with_overrides(jobs=0)


# -- runs --------------------------------------------------------------------


def test_empty_family_gives_empty_record(tmp_path):
    text = SPIKE_INI.replace("indices = 1 2 3", "indices =").format(out="runs")
    cfg = ExperimentConfig.from_text(text, base_dir=tmp_path)
    rec = run_experiment(cfg)
    assert rec.ok and rec.members == []
    assert rec.tables["members"]["rows"] == []
    csv = (cfg.run_dir / "report.csv").read_text().splitlines()
    assert len(csv) == 1 and csv[0].startswith("member,index")


@pytest.fixture(scope="module")
def flat_record(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("flat")
    cfg = flat_config(tmp)
    return cfg, run_experiment(cfg)


def test_flat_member_passes_with_zero_constants(flat_record):
    cfg, rec = flat_record
    assert rec.ok
    # every configured audit has exactly one verdict entry
    assert sorted(rec.verdicts) == sorted(cfg.audits)
    assert all(v["pass"] for v in rec.verdicts.values())
    fit = rec.members[0]["fitted"]
    for c in ("A_deriv", "A_rm", "C0_dist", "C6", "C7", "L_barrier"):
        assert fit[c] == 0.0
    # the Gaussian constant of the exact flat kernel is not a defect constant
    assert 0 < fit["C_gauss"] <= 4 * math.pi * 1.1


def test_record_hash_matches_stored_config(flat_record):
    cfg, rec = flat_record
    stored = (cfg.run_dir / "config.json").read_text()
    assert hashlib.sha256(stored.encode()).hexdigest() == rec.config_hash
    assert RunRecord.load(cfg.run_dir).config_hash == rec.config_hash


def test_output_tree(flat_record):
    cfg, rec = flat_record
    d = cfg.run_dir
    for name in ("record.json", "members.csv", "report.md", "report.csv", "report.gp"):
        assert (d / name).exists()
    m = d / "metric"
    for name in ("manifest.json", "series.csv", "prop31.csv", "prop41.csv", "gaussian.csv",
                 "trajectory.npz", "fields/g_initial.bin", "fields/g_final.bin"):
        assert (m / name).exists()
    assert not any(p.name.startswith(".") for p in d.iterdir())


def test_plot_script_references_exactly_present_csvs(flat_record):
    cfg, rec = flat_record
    links = plot_script_links(cfg.run_dir / "report.gp")
    present = {str(p.relative_to(cfg.run_dir)) for p in cfg.run_dir.glob("*/*.csv")}
    assert links and set(links) <= present
    # every plotted table kind that exists is referenced
    plotted = {"series.csv", "prop31.csv", "prop41.csv", "gaussian.csv"}
    assert {p for p in present if p.split("/")[-1] in plotted} == set(links)


def test_audits_reproducible_from_stored_trajectory(flat_record):
    cfg, rec = flat_record
    mdir = cfg.run_dir / "metric"
    manifest = json.loads((mdir / "manifest.json").read_text())
    traj = load_trajectory(mdir)
    verdicts, _ = audit_trajectory(cfg, traj, manifest["certificate"])
    again = json.loads(json.dumps(verdicts, default=harness._json_default))
    assert again == manifest["verdicts"]


def test_trajectory_roundtrip(flat_record, tmp_path):
    cfg, rec = flat_record
    traj = load_trajectory(cfg.run_dir / "metric")
    save_trajectory(traj, tmp_path / "t.npz")
    back = load_trajectory(tmp_path / "t.npz")
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.sources, traj.sources)
    for a, b in zip(back.snapshots, traj.snapshots):
        assert np.array_equal(a.g_values, b.g_values)
        assert np.array_equal(a.scalar, b.scalar)


def test_report_reemission_is_stable(flat_record, tmp_path):
    cfg, rec = flat_record
    before = (cfg.run_dir / "report.csv").read_bytes()
    emit_report(RunRecord.load(cfg.run_dir), cfg.run_dir)
    assert (cfg.run_dir / "report.csv").read_bytes() == before


def test_compare_identical_and_incomparable(flat_record, tmp_path):
    cfg, rec = flat_record
    diff = compare_runs(rec, rec)
    assert diff["stable"]
    assert all(d["relative"] == 0 for m in diff["members"].values() for d in m.values())
    other = RunRecord(**{**rec.__dict__, "name": "other"})
    with pytest.raises(ValueError):
        compare_runs(rec, other)


def test_flat_runs_at_two_resolutions_compare_to_zero(tmp_path):
    recs = []
    for N in (12, 16):
        write_field(tmp_path / f"flat{N}.bin", MetricField.euclidean(PeriodicGrid.cubic(3, N, 4.0)))
        text = (FLAT_INI.replace("flat.bin", f"flat{N}.bin").replace("points = 12", f"points = {N}")
                .replace("[audit:gaussian_bound]", ""))
        cfg = ExperimentConfig.from_text(text.format(out=f"runs{N}"), base_dir=tmp_path)
        recs.append(run_experiment(cfg))
    diff = compare_runs(*recs)
    assert diff["stable"] and diff["members"]["metric"]
    assert all(d["a"] == 0 and d["b"] == 0 for d in diff["members"]["metric"].values())


def test_identical_runs_give_identical_csvs(tmp_path):
    dirs = []
    for out in ("a", "b"):
        cfg = spike_config(tmp_path, out)
        cfg = cfg.with_overrides()
        cfg.data["family"]["indices"] = [1]
        run_experiment(cfg)
        dirs.append(cfg.run_dir)
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
    assert files
    for f in files:
        assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes()


def _failing_member(monkeypatch, bad_index):
    real = harness.spike_member

    def fake(spec, i, **kw):
        if i == bad_index:
            raise RuntimeError("injected failure")
        return real(spec, i, **kw)

    monkeypatch.setattr(harness, "spike_member", fake)


def test_member_failure_is_isolated(tmp_path, monkeypatch):
    _failing_member(monkeypatch, 2)
    cfg = spike_config(tmp_path)
    rec = run_experiment(cfg)
    assert [f["member"] for f in rec.failures] == ["member_002"]
    assert "injected failure" in rec.failures[0]["error"]
    for m in ("member_001", "member_003"):
        man = json.loads((cfg.run_dir / m / "manifest.json").read_text())
        assert man["status"] == "ok" and (cfg.run_dir / m / "series.csv").exists()
    bad = json.loads((cfg.run_dir / "member_002" / "manifest.json").read_text())
    assert bad["status"] == "failed" and not (cfg.run_dir / "member_002" / "series.csv").exists()
    assert "member_002" in (cfg.run_dir / "report.md").read_text()


def test_strict_mode_stops_at_first_failure(tmp_path, monkeypatch):
    _failing_member(monkeypatch, 1)
    cfg = spike_config(tmp_path).with_overrides(strict=True)
    with pytest.raises(MemberFailure):
        run_experiment(cfg)
    assert not (cfg.run_dir / "member_002").exists()
