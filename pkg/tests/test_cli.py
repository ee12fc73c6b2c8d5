import json

import pytest

from ricci_lab import harness
from ricci_lab.cli import EXIT_CONFIG, EXIT_INTERNAL, EXIT_MEMBERS, EXIT_OK, main

CONFIG = """
[experiment]
name = tiny
out = runs

[grid]
points = 16

[family]
kind = Lp
amplitude = 0.5
width = 1.5
indices = 1 2

[flow]
t_end = 0.005
tracker_stride = 4

[audit:monotonicity]
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(CONFIG)
    return p


def test_every_verb_is_registered():
    for verb in ("generate", "flow", "audit", "experiment", "report", "compare"):
        assert main([verb, "--help"]) == EXIT_OK


def test_unknown_verb_and_missing_config(tmp_path):
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["experiment"]) == EXIT_CONFIG
    assert main(["experiment", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


def test_invalid_config_exits_before_running(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text(CONFIG.replace("points = 16", "points = many"))
    assert main(["experiment", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_generate_writes_members(cfg_path, tmp_path):
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
    fam = json.loads((out / "tiny" / "family" / "family.json").read_text())
    assert [m["index"] for m in fam["members"]] == [1, 2]
    assert (out / "tiny" / "family" / "fields" / "member_002.bin").exists()


def test_flow_audit_experiment_report_compare(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    args = ["--config", str(cfg_path), "--out", str(out)]
    assert main(["flow", *args, "--member", "member_002"]) == EXIT_OK
    assert main(["flow", *args, "--member", "member_009"]) == EXIT_CONFIG
    mdir = out / "tiny" / "member_002"
    assert main(["audit", *args, str(mdir)]) == EXIT_OK
    assert main(["audit", *args, str(tmp_path)]) == EXIT_CONFIG
    assert main(["experiment", *args, "--jobs", "2"]) == EXIT_OK
    run = out / "tiny"
    (run / "report.md").unlink()
    assert main(["report", str(run)]) == EXIT_OK and (run / "report.md").exists()
    capsys.readouterr()
    assert main(["compare", str(run), str(run)]) == EXIT_OK
    diff = json.loads(capsys.readouterr().out)
    assert diff["stable"] and set(diff["members"]) == {"member_001", "member_002"}
    assert main(["compare", str(run), str(tmp_path)]) == EXIT_CONFIG


def test_grid_and_dim_overrides(cfg_path, tmp_path):
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg_path), "--out", str(out), "--grid", "20"]) == EXIT_OK
    fam = json.loads((out / "tiny" / "family" / "family.json").read_text())
    assert fam["spec"]["points"] == 20
    # spikes narrower than four cells at the requested grid are a config problem
    assert main(["generate", "--config", str(cfg_path), "--out", str(out), "--grid", "8"]) == EXIT_CONFIG


def test_member_failures_exit_code(cfg_path, tmp_path, monkeypatch):
    real = harness.spike_member

    def fake(spec, i, **kw):
        if i == 2:
            raise RuntimeError("injected")
        return real(spec, i, **kw)

    monkeypatch.setattr(harness, "spike_member", fake)
    out = tmp_path / "out"
    args = ["experiment", "--config", str(cfg_path), "--out", str(out)]
    assert main(args) == EXIT_MEMBERS
    assert (out / "tiny" / "member_001" / "series.csv").exists()
    assert main([*args, "--strict"]) == EXIT_MEMBERS


def test_internal_error_exit_code(cfg_path, tmp_path, monkeypatch):
    def boom(cfg, progress=None):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(harness, "run_experiment", boom)
    assert main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path)]) == EXIT_INTERNAL


def test_dim_override(cfg_path, tmp_path):
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg_path), "--out", str(out), "--dim", "4", "--grid", "16"]) == EXIT_OK
    fam = json.loads((out / "tiny" / "family" / "family.json").read_text())
    assert fam["spec"]["n"] == 4
