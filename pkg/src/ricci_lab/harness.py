"""Experiment configuration, member orchestration, persistence and reports.

Layout of a run directory::

    out/<name>/config.json            canonical config (its sha256 is the config hash)
    out/<name>/record.json            RunRecord
    out/<name>/members.csv            one row per member
    out/<name>/report.{md,csv,gp}
    out/<name>/<member>/manifest.json
    out/<name>/<member>/series.csv
    out/<name>/<member>/{prop31,prop41,gaussian}.csv   when the audit ran
    out/<name>/<member>/trajectory.npz
    out/<name>/<member>/fields/*.bin

CSV files carry no timestamps and print floats with repr, so identical
configs give byte-identical tables.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import shutil
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ConfigError, FlowDegeneracyError, MemberFailure
from .flow import (
    SERIES_COLUMNS,
    FittedConstants,
    FlowParams,
    FlowTrajectory,
    Snapshot,
    grid_sources,
    run,
)
from .generators import SpikeFamilySpec, spike_member, certificate
from .grid import MetricField, PeriodicGrid, ScalarField, read_field, write_field

AUDITS = ("monotonicity", "prop31", "prop41", "ball_inclusion", "gaussian_bound")

# section -> key -> type
_SCHEMA = {
    "experiment": {"name": str, "out": str, "jobs": int, "seed": int, "strict": bool,
                   "metric_path": str},
    "grid": {"n": int, "points": int, "side": float},
    "family": {"kind": str, "amplitude": float, "amplitude_power": float, "width": float,
               "width_power": float, "center": "floats", "target": float, "delta": float,
               "core": float, "indices": "ints", "ball_radius": float},
    "glue": {"inner": float, "outer": float},
    "flow": {"t_end": float, "cfl_safety": float, "dt_max": float, "integrator": str,
             "monitor_every": int, "stencil": int, "tracker_interp_order": int,
             "bilipschitz_bound": float, "with_riemann": bool, "schedule": "floats",
             "tracker_stride": int},
    "audit.monotonicity": {},
    "audit.prop31": {"sigma": float, "r_scale": float, "t_fixed": float, "slack": float,
                     "energy_K": float},
    "audit.prop41": {"sigma": float, "delta": float, "window": "floats", "Lambda": float,
                     "L_band": float, "slope_band": float},
    "audit.ball_inclusion": {"r0": float},
    "audit.gaussian_bound": {"width": float, "threshold": float},
}

_DEFAULTS = {
    "experiment": {"out": "runs", "jobs": 1, "seed": 0, "strict": False},
    "grid": {"n": 3, "points": 32, "side": 4.0},
    "flow": {"t_end": 0.05, "cfl_safety": 0.4, "monitor_every": 20, "tracker_stride": 2},
}


def _coerce(kind, value, where):
    try:
        if kind == "floats":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return [float(v) for v in value]
        if kind == "ints":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return [int(v) for v in value]
        if kind is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: cannot read {value!r} as {getattr(kind, '__name__', kind)}") from exc


def normalize(raw: dict) -> dict:
    """Type-check a nested dict (from INI or JSON) against the schema."""
    out = {}
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section}] must be a table")
        schema = _SCHEMA[section]
        sec = {}
        for key, value in body.items():
            if key not in schema:
                raise ConfigError(f"unknown key {section}.{key}")
            sec[key] = _coerce(schema[key], value, f"{section}.{key}")
        out[section] = sec
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        merged.update(out.get(section, {}))
        out[section] = merged
    if "name" not in out["experiment"]:
        raise ConfigError("experiment.name is required")
    return {k: out[k] for k in sorted(out)}


def parse_ini(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = {}
    for section in cp.sections():
        key = section.replace(":", ".").strip()
        raw[key] = dict(cp[section])
    return raw


def parse_json(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level of a JSON config must be an object")
    raw = {}
    for section, body in data.items():
        if section == "audits":
            for name, params in body.items():
                raw[f"audit.{name}"] = params or {}
        else:
            raw[section] = body
    return raw


@dataclass
class ExperimentConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_text(cls, text, fmt="ini", base_dir=None):
        raw = parse_json(text) if fmt == "json" else parse_ini(text)
        cfg = cls(normalize(raw), Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        fmt = "json" if path.suffix.lower() == ".json" else "ini"
        return cls.from_text(path.read_text(), fmt, path.parent)

    @classmethod
    def from_dict(cls, data, base_dir=None):
        """From the JSON-shaped dict (sections plus an optional 'audits' table)."""
        return cls.from_text(json.dumps(data), "json", base_dir)

    # -- accessors ---------------------------------------------------------
    @property
    def name(self):
        return self.data["experiment"]["name"]

    @property
    def out_dir(self):
        out = Path(self.data["experiment"]["out"])
        return out if out.is_absolute() else self.base_dir / out

    @property
    def run_dir(self):
        return self.out_dir / self.name

    @property
    def jobs(self):
        return self.data["experiment"]["jobs"]

    @property
    def strict(self):
        return self.data["experiment"]["strict"]

    @property
    def audits(self):
        return [a for a in AUDITS if f"audit.{a}" in self.data]

    def audit_params(self, name):
        return dict(self.data.get(f"audit.{name}", {}))

    @property
    def grid(self):
        g = self.data["grid"]
        return PeriodicGrid.cubic(g["n"], g["points"], g["side"])

    def family_spec(self):
        if "family" not in self.data:
            return None
        fam = dict(self.data["family"])
        g = self.data["grid"]
        if "center" in fam:
            fam["center"] = tuple(fam["center"])
        if "indices" in fam:
            fam["indices"] = tuple(fam["indices"])
        return SpikeFamilySpec(n=g["n"], points=g["points"], side=g["side"], **fam)

    def flow_params(self):
        fl = {k: v for k, v in self.data["flow"].items() if k not in ("schedule", "tracker_stride")}
        return FlowParams(**fl)

    @property
    def schedule(self):
        return self.data["flow"].get("schedule")

    def members(self):
        spec = self.family_spec()
        if spec is not None:
            return [f"member_{i:03d}" for i in spec.indices]
        if "metric_path" in self.data["experiment"]:
            return ["metric"]
        return []

    # -- validation and hashing -------------------------------------------
    def validate(self):
        exp = self.data["experiment"]
        if exp["jobs"] < 1:
            raise ConfigError("experiment.jobs must be >= 1")
        if "metric_path" in exp:
            p = Path(exp["metric_path"])
            p = p if p.is_absolute() else self.base_dir / p
            if not p.exists():
                raise ConfigError(f"metric_path {p} does not exist")
            if "family" in self.data:
                raise ConfigError("give either a family or a metric_path, not both")
        try:
            spec = self.family_spec()
            self.flow_params()
            self.grid
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if "audit.prop41" in self.data:
            p = self.data["audit.prop41"]
            if "delta" not in p:
                if spec is not None and spec.kind == "weightedL1":
                    p["delta"] = spec.delta
                else:
                    raise ConfigError("audit prop41 needs delta")
            if spec is not None and spec.kind == "weightedL1" and abs(p["delta"] - spec.delta) > 1e-12:
                raise ConfigError("audit prop41 delta differs from the family delta")
            if not p["delta"] > 0:
                raise ConfigError("audit prop41 delta must be positive")
        if "glue" in self.data:
            gl = self.data["glue"]
            if not 0 < gl.get("inner", 0) < gl.get("outer", 0) < self.data["grid"]["side"] / 2:
                raise ConfigError("glue needs 0 < inner < outer < side/2")
        for name in ("prop31", "ball_inclusion", "gaussian_bound"):
            if f"audit.{name}" in self.data and self.data["flow"].get("tracker_stride", 0) < 1:
                raise ConfigError(f"audit {name} needs a tracker (flow.tracker_stride >= 1)")

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    @property
    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, grid_points=None, dim=None, out=None, jobs=None, strict=None):
        data = json.loads(json.dumps(self.data))
        if grid_points is not None:
            data["grid"]["points"] = int(grid_points)
        if dim is not None:
            data["grid"]["n"] = int(dim)
        if out is not None:
            data["experiment"]["out"] = str(Path(out).resolve())
        if jobs is not None:
            data["experiment"]["jobs"] = int(jobs)
        if strict:
            data["experiment"]["strict"] = True
        cfg = ExperimentConfig(data, self.base_dir)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# trajectory persistence


def save_trajectory(traj: FlowTrajectory, path):
    arrays = {
        "times": traj.times,
        "sources": traj.sources,
        "background": traj.background_values,
        "shape": np.array(traj.grid.shape),
        "lengths": np.array(traj.grid.lengths),
    }
    for k, s in enumerate(traj.snapshots):
        arrays[f"g_{k}"] = s.g_values
        arrays[f"w_{k}"] = s.w_up
        arrays[f"R_{k}"] = s.scalar
        arrays[f"x_{k}"] = s.positions
        if s.rm_norm is not None:
            arrays[f"rm_{k}"] = s.rm_norm
    meta = {
        "params": asdict(traj.params),
        "fitted": traj.fitted.as_dict(),
        "dt_initial": traj.dt_initial,
        "steps": traj.steps,
        "failure": traj.failure,
        "monitors": [s.monitors for s in traj.snapshots],
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, default=_json_default).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_trajectory(path) -> FlowTrajectory:
    """Rebuild a FlowTrajectory from ``trajectory.npz`` (or a member directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "trajectory.npz"
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        grid = PeriodicGrid(tuple(int(v) for v in z["shape"]), tuple(float(v) for v in z["lengths"]))
        params = FlowParams(**meta["params"])
        snaps = []
        for k, t in enumerate(z["times"]):
            snaps.append(Snapshot(
                t=float(t),
                g_values=z[f"g_{k}"],
                w_up=z[f"w_{k}"],
                scalar=z[f"R_{k}"],
                positions=z[f"x_{k}"],
                monitors=meta["monitors"][k],
                rm_norm=z[f"rm_{k}"] if f"rm_{k}" in z else None,
            ))
        traj = FlowTrajectory(
            grid=grid,
            params=params,
            snapshots=snaps,
            sources=z["sources"],
            background_values=z["background"],
            fitted=FittedConstants(**meta["fitted"]),
            dt_initial=meta["dt_initial"],
            steps=meta["steps"],
            failure=meta["failure"],
        )
    return traj


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def _finite(x):
    return x is not None and isinstance(x, (int, float)) and math.isfinite(x)


# ---------------------------------------------------------------------------
# per-member pipeline


def member_metric(cfg: ExperimentConfig, member):
    """(metric, certificate, index) for a member name."""
    if member == "metric":
        p = Path(cfg.data["experiment"]["metric_path"])
        p = p if p.is_absolute() else cfg.base_dir / p
        return read_field(p, MetricField), {}, None
    spec = cfg.family_spec()
    i = int(member.split("_")[1])
    g, cert = spike_member(spec, i, with_certificate=True)
    if "glue" in cfg.data:
        from .generators import GlueSpec, glued_metric

        gl = cfg.data["glue"]
        g = glued_metric(GlueSpec(g, tuple(spec.x0), gl["inner"], gl["outer"]))
        cert = certificate(spec, i, g)
    return g, cert, i


def _x0(cfg, grid):
    spec = cfg.family_spec()
    x0 = spec.x0 if spec is not None else np.full(grid.n, grid.lengths[0] / 2)
    return grid.point(grid.nearest_index(x0))


def audit_trajectory(cfg: ExperimentConfig, traj: FlowTrajectory, cert: dict):
    """Run every configured audit on a stored trajectory.

    Returns (verdicts, tables) where tables maps a CSV stem to (header, rows).
    Pure function of the trajectory, certificate and config.
    """
    grid = traj.grid
    x0 = _x0(cfg, grid)
    verdicts, tables = {}, {}
    if "monotonicity" in cfg.audits:
        rmin = [s.monitors["R_min"] for s in traj.snapshots]
        tol = [s.monitors["tol_fd"] for s in traj.snapshots]
        worst = math.inf
        ks = [k for k, s in enumerate(traj.snapshots) if s.t > 0]
        for a_i, a in enumerate(ks):
            for b in ks[a_i + 1:]:
                worst = min(worst, rmin[b] - rmin[a] + max(tol[a], tol[b]))
        verdicts["monotonicity"] = {"pass": bool(worst >= 0) if ks else True,
                                    "worst_margin": worst if math.isfinite(worst) else None}
    if "prop31" in cfg.audits:
        p = cfg.audit_params("prop31")
        sigma = p.get("sigma", 0.0)
        r = p.get("r_scale", 1.0)
        K = p.get("energy_K", 1e4)
        et = analysis.energy_trace(traj, sigma, x0, scale=r, K=K)
        rep = analysis.localized_estimate_audit(traj, sigma, x0, r, C6=et.integrated_constant(),
                                                slack=p.get("slack", 1.05), K=K)
        t_fixed = p.get("t_fixed", 0.05) * r * r
        C0 = analysis.fit_distance_drop(traj, x0)
        traj.fitted.C0_dist = C0
        traj.fitted.C6, traj.fitted.C7 = rep.C6, rep.C7
        verdicts["prop31"] = {
            "pass": bool(rep.holds and _finite(rep.C6) and _finite(rep.C7)),
            "C6": rep.C6, "C7": rep.C7, "C5_differential": et.differential_constant(),
            "C0_dist": C0, "rhs0": rep.rhs0, "t_fixed": t_fixed,
            "lhs_t_fixed": rep.lhs_at(t_fixed), "slack": rep.slack, "measure": rep.measure,
            "csv": "prop31.csv",
        }
        tables["prop31"] = (
            ["t", "lhs", "bound", "energy", "dEdt"],
            [[t, lhs, b, e, de] for t, lhs, b, e, de in zip(rep.times, rep.lhs, rep.bound(), et.E, et.dEdt)],
        )
    if "prop41" in cfg.audits:
        p = cfg.audit_params("prop41")
        sigma = p.get("sigma", 0.0)
        delta = p["delta"]
        eps = cert.get("measured") if cert.get("functional") == "weightedL1" else None
        if eps is None:
            from .generators import default_radii

            D = analysis.distance_field(MetricField.euclidean(grid), grid.nearest_index(x0))
            eps = analysis.weighted_l1_sup(ScalarField(grid, traj.snapshots[0].scalar), sigma, delta,
                                           MetricField.euclidean(grid), [x0],
                                           default_radii(cfg.family_spec() or SpikeFamilySpec(), grid),
                                           distances=[D])
        window = tuple(p["window"]) if "window" in p else None
        br = analysis.barrier_audit(traj, sigma, delta, eps, p.get("Lambda"), window)
        traj.fitted.L_barrier = br.L_barrier
        target = delta - 1.0
        verdicts["prop41"] = {
            "pass": bool(_finite(br.L_barrier)),
            "epsilon": eps, "L_barrier": br.L_barrier, "slope": br.slope, "slope_target": target,
            "Lambda": br.Lambda, "first_violation_time": br.first_violation_time,
            "window": list(br.window) if br.window else None, "caveat": br.caveat,
            "csv": "prop41.csv",
        }
        tables["prop41"] = (
            ["t", "max_negative_part", "barrier"],
            [[t, v, br.Lambda * t ** (-br.alpha) if t > 0 else None]
             for t, v in zip(br.times, br.negativity)],
        )
    if "ball_inclusion" in cfg.audits:
        p = cfg.audit_params("ball_inclusion")
        r0 = p.get("r0", 1.0)
        rep = analysis.ball_inclusion_check(traj, x0, r0)
        verdicts["ball_inclusion"] = {"pass": rep.holds, "t": rep.t, "S": rep.S,
                                      "method": rep.method, "margin": rep.margin}
    if "gaussian_bound" in cfg.audits:
        from .heat_kernel import gaussian_bound_fit, green_function

        p = cfg.audit_params("gaussian_bound")
        kr = green_function(traj, x0, width=p.get("width"))
        fit = gaussian_bound_fit(kr, traj, threshold=p.get("threshold", 1e-12))
        traj.fitted.C_gauss = fit.C
        mass_err = float(np.max(np.abs(kr.mass - 1.0)))
        verdicts["gaussian_bound"] = {
            "pass": bool(_finite(fit.C) and mass_err <= 1e-3),
            "C_gauss": fit.C, "mass_error": mass_err, "A_rm": fit.A_rm, "A_vol": fit.A_vol,
            "verdict": fit.verdict, "width": kr.width, "csv": "gaussian.csv",
        }
        tables["gaussian"] = (
            ["t", "mass", "G_at_source"],
            [[t, m, float(v[tuple(grid.nearest_index(x0))])] for t, m, v in zip(kr.times, kr.mass, kr.values)],
        )
    return verdicts, tables


def run_member(cfg: ExperimentConfig, member: str):
    """Generate, flow and audit one member into its own directory (atomic rename)."""
    run_dir = cfg.run_dir
    final = run_dir / member
    tmp = run_dir / f".{member}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "fields").mkdir(parents=True)
    started = time.time()
    manifest = {"member": member, "config_hash": cfg.hash, "status": "ok"}
    try:
        g0, cert, index = member_metric(cfg, member)
        grid = g0.grid
        manifest.update(index=index, certificate=cert, grid={"shape": list(grid.shape),
                                                            "lengths": list(grid.lengths)})
        stride = cfg.data["flow"].get("tracker_stride", 0)
        tracker = grid_sources(grid, stride) if stride else None
        params = cfg.flow_params()
        try:
            traj = run(g0, MetricField.euclidean(grid), params, cfg.schedule, tracker)
        except FlowDegeneracyError as exc:
            manifest["status"] = "degenerate"
            manifest["failure"] = str(exc)
            traj = exc.trajectory
            if traj is None or len(traj.snapshots) < 3:
                raise
        verdicts, tables = audit_trajectory(cfg, traj, cert)
        manifest["params"] = asdict(params)
        manifest["steps"] = traj.steps
        manifest["fitted"] = traj.fitted.as_dict()
        manifest["verdicts"] = verdicts
        write_csv(tmp / "series.csv", SERIES_COLUMNS, traj.series())
        for stem, (header, rows) in tables.items():
            write_csv(tmp / f"{stem}.csv", header, rows)
        save_trajectory(traj, tmp / "trajectory.npz")
        write_field(tmp / "fields" / "g_initial.bin", g0)
        write_field(tmp / "fields" / "g_final.bin", traj.metric(len(traj.snapshots) - 1))
        write_field(tmp / "fields" / "R_final.bin", ScalarField(grid, traj.snapshots[-1].scalar))
    except Exception as exc:  # recorded, the orchestrator decides whether to stop
        manifest["status"] = "failed"
        manifest["failure"] = f"{type(exc).__name__}: {exc}"
        manifest["traceback"] = traceback.format_exc(limit=8)
    manifest["wall_seconds"] = time.time() - started
    with open(tmp / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return manifest


def _run_member_job(args):
    data, base_dir, member = args
    return run_member(ExperimentConfig(data, Path(base_dir)), member)


# ---------------------------------------------------------------------------
# records and aggregation


@dataclass
class RunRecord:
    name: str
    config_hash: str
    started: float
    finished: float
    members: list
    verdicts: dict
    tables: dict
    failures: list
    run_dir: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "record.json"
        data = json.loads(path.read_text())
        return cls(**{f.name: data[f.name] for f in fields(cls) if f.name in data})

    @property
    def ok(self):
        return not self.failures


def aggregate(cfg: ExperimentConfig, manifests):
    """Cross-member verdicts: one entry per configured audit."""
    good = [m for m in manifests if m["status"] != "failed"]
    good.sort(key=lambda m: (m.get("index") is None, m.get("index") or 0))
    verdicts = {}
    for audit in cfg.audits:
        per = {m["member"]: m["verdicts"].get(audit, {}) for m in good}
        entry = {"members": {k: v.get("pass") for k, v in per.items()},
                 "pass": all(v.get("pass") for v in per.values())}
        if audit == "prop31" and per:
            C6 = max(v["C6"] for v in per.values())
            # C7 is re-derived per member from stored traces given the shared C6
            C7 = 0.0
            for m in good:
                hdr, rows = read_csv(cfg.run_dir / m["member"] / "prop31.csv")
                t = np.array([float(r[0]) for r in rows])
                lhs = np.array([float(r[1]) for r in rows])
                v = per[m["member"]]
                r = cfg.audit_params("prop31").get("r_scale", 1.0)
                C7 = max(C7, analysis.minimal_c7(t, lhs, v["rhs0"], C6, r))
            lhs_fixed = [per[m["member"]]["lhs_t_fixed"] for m in good]
            decreasing = all(b < a for a, b in zip(lhs_fixed, lhs_fixed[1:]))
            entry.update(shared_C6=C6, shared_C7=C7, lhs_t_fixed=lhs_fixed,
                         lhs_decreasing=bool(decreasing),
                         floor=C7 * math.sqrt(next(iter(per.values()))["t_fixed"]) /
                         cfg.audit_params("prop31").get("r_scale", 1.0))
            entry["pass"] = bool(entry["pass"] and decreasing and _finite(C6) and _finite(C7))
        if audit == "prop41" and per:
            p = cfg.audit_params("prop41")
            Ls = [v["L_barrier"] for v in per.values()]
            slopes = [v["slope"] for v in per.values()]
            live = [L for L in Ls if L > 0]
            spread = max(live) / min(live) if live else 1.0
            band = p.get("slope_band", 0.15)
            target = p["delta"] - 1.0
            # a member whose negative part vanishes identically has no slope to fit
            slope_ok = all(s is not None and abs(s - target) <= band
                           for s, L in zip(slopes, Ls) if L > 0)
            entry.update(L=Ls, L_spread=spread, slopes=slopes, slope_target=target,
                         shared=bool(spread <= p.get("L_band", 3.0)), slopes_ok=bool(slope_ok))
            entry["pass"] = bool(entry["pass"] and entry["shared"] and slope_ok)
        if audit == "gaussian_bound" and per:
            entry["C_gauss"] = [v["C_gauss"] for v in per.values()]
        verdicts[audit] = entry
    return verdicts


MEMBER_COLUMNS = ("member", "index", "status", "amplitude", "width", "c0_distance", "min_R",
                  "functional", "A_deriv", "A_rm", "C0_dist", "C6", "C7", "L_barrier",
                  "C_gauss", "S", "margin", "lhs_t_fixed")


def member_row(m):
    cert = m.get("certificate") or {}
    fit = m.get("fitted") or {}
    v = m.get("verdicts") or {}
    return [
        m["member"], m.get("index"), m["status"], cert.get("amplitude"), cert.get("width"),
        cert.get("c0_distance"), cert.get("min_R"), cert.get("measured"),
        fit.get("A_deriv"), fit.get("A_rm"), fit.get("C0_dist"), fit.get("C6"), fit.get("C7"),
        fit.get("L_barrier"), fit.get("C_gauss"),
        v.get("ball_inclusion", {}).get("S"), v.get("ball_inclusion", {}).get("margin"),
        v.get("prop31", {}).get("lhs_t_fixed"),
    ]


def run_experiment(cfg: ExperimentConfig, progress=None) -> RunRecord:
    """generate -> flow -> audits for every member, then aggregate and report."""
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.canonical_json())
    started = time.time()
    members = cfg.members()
    manifests = []
    failures = []
    if cfg.jobs > 1 and len(members) > 1:
        jobs = [(cfg.data, str(cfg.base_dir), m) for m in members]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for man in pool.map(_run_member_job, jobs):
                manifests.append(man)
                if progress:
                    progress(man)
    else:
        for m in members:
            man = run_member(cfg, m)
            manifests.append(man)
            if progress:
                progress(man)
            if cfg.strict and man["status"] == "failed":
                break
    for man in manifests:
        if man["status"] == "failed":
            failures.append({"member": man["member"], "error": man.get("failure"),
                             "traceback": man.get("traceback")})
    verdicts = aggregate(cfg, manifests)
    rows = [member_row(m) for m in manifests]
    record = RunRecord(
        name=cfg.name,
        config_hash=cfg.hash,
        started=started,
        finished=time.time(),
        members=[{k: v for k, v in m.items() if k != "traceback"} for m in manifests],
        verdicts=verdicts,
        tables={"members": {"columns": list(MEMBER_COLUMNS), "rows": rows}},
        failures=failures,
        run_dir=str(run_dir),
    )
    write_csv(run_dir / "members.csv", MEMBER_COLUMNS, rows)
    (run_dir / "record.json").write_text(record.to_json())
    emit_report(record, run_dir)
    if cfg.strict and failures:
        raise MemberFailure(f"{len(failures)} member(s) failed: {failures[0]['error']}")
    return record


# ---------------------------------------------------------------------------
# reports


def emit_report(record: RunRecord, run_dir=None):
    """Write report.md, report.csv and report.gp next to the record."""
    run_dir = Path(run_dir or record.run_dir)
    try:
        cols = record.tables.get("members", {}).get("columns", list(MEMBER_COLUMNS))
        rows = record.tables.get("members", {}).get("rows", [])
        write_csv(run_dir / "report.csv", cols, rows)
        md = [f"# {record.name}", "", f"config hash `{record.config_hash}`", ""]
        if rows:
            md += ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
            md += ["| " + " | ".join(_fmt(v) for v in r) + " |" for r in rows]
            md.append("")
        if record.verdicts:
            md += ["## Verdicts", ""]
            for name, v in record.verdicts.items():
                extra = {k: val for k, val in v.items() if k not in ("members", "pass")}
                md.append(f"- **{name}**: {'pass' if v.get('pass') else 'FAIL'}"
                          + (f" {json.dumps(extra, default=_json_default)}" if extra else ""))
            md.append("")
        if record.failures:
            md += ["## Failures", ""]
            md += [f"- {f['member']}: {f['error']}" for f in record.failures]
            md.append("")
        (run_dir / "report.md").write_text("\n".join(md))
        (run_dir / "report.gp").write_text(plot_script(record, run_dir))
    except OSError as exc:
        raise OSError(f"writing report into {run_dir}: {exc}") from exc
    return [run_dir / f"report.{ext}" for ext in ("md", "csv", "gp")]


_PLOTS = (
    ("series.csv", "R_min(t)", 1, 2),
    ("prop31.csv", "E(t)", 1, 4),
    ("prop31.csv", "localized LHS", 1, 2),
    ("prop41.csv", "max (R - sigma)_-", 1, 2),
    ("gaussian.csv", "kernel mass", 1, 2),
)


def plot_script(record: RunRecord, run_dir: Path) -> str:
    """gnuplot script over the CSV files that exist in the run directory."""
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo",
             ""]
    for fname, title, xc, yc in _PLOTS:
        present = [m["member"] for m in record.members
                   if (run_dir / m["member"] / fname).exists()]
        if not present:
            continue
        stem = fname[:-4]
        lines.append(f"set output '{stem}_{yc}.png'")
        lines.append(f"set title '{title}'")
        if stem in ("prop41",):
            lines.append("set logscale xy")
        parts = [f"'{m}/{fname}' using {xc}:{yc} with linespoints title '{m}'" for m in present]
        lines.append("plot " + ", \\\n     ".join(parts))
        if stem in ("prop41",):
            lines.append("unset logscale")
        lines.append("")
    return "\n".join(lines)


def plot_script_links(gp_path):
    """Relative CSV paths referenced by a plot script."""
    import re

    text = Path(gp_path).read_text()
    return sorted(set(re.findall(r"'([^']+\.csv)'", text)))


# ---------------------------------------------------------------------------
# comparison


CONSTANTS = ("A_deriv", "A_rm", "C0_dist", "C_gauss", "C6", "C7", "L_barrier")


def compare_runs(a: RunRecord, b: RunRecord, band=0.25):
    """Per-member, per-constant relative differences and refinement verdicts."""
    if a.name != b.name:
        raise ValueError(f"runs of different experiments: {a.name!r} vs {b.name!r}")
    ma = {m["member"]: m for m in a.members if m.get("status") != "failed"}
    mb = {m["member"]: m for m in b.members if m.get("status") != "failed"}
    out = {"members": {}, "stable": True, "band": band}
    for name in sorted(set(ma) & set(mb)):
        fa, fb = ma[name].get("fitted", {}), mb[name].get("fitted", {})
        diffs = {}
        for c in CONSTANTS:
            x, y = fa.get(c), fb.get(c)
            if x is None or y is None:
                continue
            scale = max(abs(x), abs(y))
            rel = 0.0 if scale == 0 else abs(x - y) / scale
            diffs[c] = {"a": x, "b": y, "relative": rel, "stable": rel <= band}
            out["stable"] = out["stable"] and rel <= band
        out["members"][name] = diffs
    return out


__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "run_experiment",
    "run_member",
    "audit_trajectory",
    "emit_report",
    "compare_runs",
    "save_trajectory",
    "load_trajectory",
    "plot_script_links",
]
