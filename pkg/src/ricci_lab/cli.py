"""Command-line entry point: ricci-lab <verb> [options].

Exit codes: 0 success, 1 configuration error, 2 member failures present,
3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, MemberFailure, ResolutionError

EXIT_OK, EXIT_CONFIG, EXIT_MEMBERS, EXIT_INTERNAL = 0, 1, 2, 3


def _load_config(args):
    from .harness import ExperimentConfig

    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    return cfg.with_overrides(
        grid_points=getattr(args, "grid", None),
        dim=getattr(args, "dim", None),
        out=getattr(args, "out", None),
        jobs=getattr(args, "jobs", None),
        strict=getattr(args, "strict", False),
    )


def cmd_generate(args):
    from .grid import write_field
    from .harness import _json_default

    cfg = _load_config(args)
    spec = cfg.family_spec()
    if spec is None:
        raise ConfigError("generate needs a [family] section")
    from .generators import spike_member

    out = cfg.run_dir / "family"
    (out / "fields").mkdir(parents=True, exist_ok=True)
    certs = []
    for i in spec.indices:
        g, cert = spike_member(spec, i)
        write_field(out / "fields" / f"member_{i:03d}.bin", g)
        certs.append(cert)
    manifest = {"spec": asdict(spec), "config_hash": cfg.hash, "members": certs}
    (out / "family.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    print(f"wrote {len(certs)} members to {out}")
    return EXIT_OK


def cmd_flow(args):
    from .harness import run_member

    cfg = _load_config(args)
    members = cfg.members()
    if not members:
        raise ConfigError("nothing to flow: give a family or experiment.metric_path")
    member = args.member or members[0]
    if member not in members:
        raise ConfigError(f"unknown member {member}; choose from {', '.join(members)}")
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    man = run_member(cfg, member)
    print(f"{member}: {man['status']} ({cfg.run_dir / member})")
    return EXIT_OK if man["status"] != "failed" else EXIT_MEMBERS


def cmd_audit(args):
    from .harness import _json_default, audit_trajectory, load_trajectory, write_csv

    cfg = _load_config(args)
    member_dir = Path(args.member_dir)
    manifest_path = member_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{member_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    traj = load_trajectory(member_dir)
    verdicts, tables = audit_trajectory(cfg, traj, manifest.get("certificate") or {})
    for stem, (header, rows) in tables.items():
        write_csv(member_dir / f"{stem}.csv", header, rows)
    manifest["verdicts"] = verdicts
    manifest["fitted"] = traj.fitted.as_dict()
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    for name, v in verdicts.items():
        print(f"{name}: {'pass' if v.get('pass') else 'FAIL'}")
    return EXIT_OK


def cmd_experiment(args):
    from .harness import run_experiment

    cfg = _load_config(args)

    def progress(man):
        print(f"{man['member']}: {man['status']} ({man.get('wall_seconds', 0):.1f} s)", flush=True)

    try:
        record = run_experiment(cfg, progress=progress)
    except MemberFailure as exc:
        print(f"strict mode: {exc}", file=sys.stderr)
        return EXIT_MEMBERS
    for name, v in record.verdicts.items():
        print(f"{name}: {'pass' if v.get('pass') else 'FAIL'}")
    print(f"report: {cfg.run_dir / 'report.md'}")
    return EXIT_MEMBERS if record.failures else EXIT_OK


def cmd_report(args):
    from .harness import RunRecord, emit_report

    path = Path(args.run_dir)
    if not (path / "record.json").exists():
        raise ConfigError(f"{path} has no record.json")
    record = RunRecord.load(path)
    for p in emit_report(record, path):
        print(p)
    return EXIT_OK


def cmd_compare(args):
    from .harness import RunRecord, _json_default, compare_runs

    paths = [Path(p) for p in (args.run_a, args.run_b)]
    for p in paths:
        if not (p / "record.json").exists():
            raise ConfigError(f"{p} has no record.json")
    a, b = (RunRecord.load(p) for p in paths)
    try:
        diff = compare_runs(a, b, band=args.band)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps(diff, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON experiment config")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes, one member each")
    common.add_argument("--strict", action="store_true", help="stop at the first member failure")
    common.add_argument("--grid", type=int, help="points per axis (overrides the config)")
    common.add_argument("--dim", type=int, help="dimension n (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ricci-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("generate", parents=[common], help="build family members and certificates")
    fl = sub.add_parser("flow", parents=[common], help="flow and audit one metric")
    fl.add_argument("--member", help="member name, e.g. member_001")
    au = sub.add_parser("audit", parents=[common], help="re-run audits on a stored member")
    au.add_argument("member_dir")
    sub.add_parser("experiment", parents=[common], help="full pipeline over a family")
    rp = sub.add_parser("report", parents=[common], help="re-emit report files for a run")
    rp.add_argument("run_dir")
    cp = sub.add_parser("compare", parents=[common], help="compare fitted constants of two runs")
    cp.add_argument("run_a")
    cp.add_argument("run_b")
    cp.add_argument("--band", type=float, default=0.25)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "flow": cmd_flow,
    "audit": cmd_audit,
    "experiment": cmd_experiment,
    "report": cmd_report,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, ResolutionError) as exc:
        # an unresolvable spike is a property of the requested grid
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported with exit code 3
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
