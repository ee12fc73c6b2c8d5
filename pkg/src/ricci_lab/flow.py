"""Explicit time stepping of the Ricci-DeTurck flow and its DeTurck diffeomorphism.

The evolution is d_t g_ij = -2 Ric_ij + nabla_i W_j + nabla_j W_i with
W^k = g^pq (Gamma^k_pq - Gamma(h)^k_pq). Derivatives of W_j are expanded by
the product rule so that every second derivative of g comes from the same
discrete operator as in the Ricci tensor; the non-elliptic second-order terms
then cancel exactly and the principal part is g^ab d_a d_b g_ij.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .curvature import (
    christoffel_arrays,
    curvature_arrays,
    inverse_full,
    metric_derivatives,
    ricci_arrays,
)
from .errors import FlowDegeneracyError, GeometryError
from .grid import (
    MetricField,
    PeriodicGrid,
    ScalarField,
    VectorField,
    _D1,
    _D2,
    _check_order,
    d1,
    d2,
    pack_sym,
    sym_index,
    unpack_sym,
)

log = logging.getLogger(__name__)

INTEGRATORS = ("rk2", "rk4")


@dataclass(frozen=True)
class FlowParams:
    t_end: float
    cfl_safety: float = 0.2
    dt_max: float = math.inf
    integrator: str = "rk2"
    monitor_every: int = 10
    stencil: int = 4
    tracker_interp_order: int = 3
    bilipschitz_bound: float = 10.0
    with_riemann: bool = True
    kernel: str = "numba"

    def __post_init__(self):
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.tracker_interp_order not in (1, 3):
            raise ValueError("tracker_interp_order must be 1 (multilinear) or 3 (cubic spline)")
        if self.kernel not in ("numba", "numpy"):
            raise ValueError("kernel must be 'numba' or 'numpy'")
        _check_order(self.stencil)


# ---------------------------------------------------------------------------
# background metric


class Background:
    """Christoffel data of the fixed background metric h."""

    def __init__(self, h: MetricField, stencil=4):
        self.metric = h
        grid = h.grid
        n = grid.n
        flat_axes = tuple(range(1, n + 1))
        if np.all(np.ptp(h.values, axis=flat_axes) == 0):
            # constant coefficients: Christoffel symbols vanish identically
            self.gamma = None
            self.dgamma = None
            return
        dg = np.stack([d1(h.values, a, grid.spacing[a], stencil, ndim=n) for a in range(n)])
        dg = dg[:, sym_index(n)]
        self.gamma, _ = christoffel_arrays(h.inverse_full(), dg)
        self.dgamma = np.stack(
            [d1(self.gamma, a, grid.spacing[a], stencil, ndim=n) for a in range(n)]
        )

    @property
    def flat(self):
        return self.gamma is None


def deturck_vector(g: MetricField, h: MetricField, stencil=4) -> VectorField:
    """W^k = g^pq (Gamma^k_pq - Gamma(h)^k_pq)."""
    if g.grid != h.grid:
        raise ValueError("g and h live on different grids")
    grid = g.grid
    n = grid.n
    dg = np.stack([d1(g.values, a, grid.spacing[a], stencil, ndim=n) for a in range(n)])
    gamma, _ = christoffel_arrays(g.inverse_full(), dg[:, sym_index(n)])
    bg = Background(h, stencil)
    diff = gamma if bg.flat else gamma - bg.gamma
    return VectorField(grid, np.einsum("pq...,kpq...->k...", g.inverse_full(), diff))


def deturck_rhs(packed, spacing, background=None, stencil=4):
    """Right-hand side of the flow for a packed metric.

    Returns ``(rhs_packed, w_up, ginv)``.
    """
    n = len(spacing)
    g = unpack_sym(packed, n)
    ginv = inverse_full(packed, n)
    dg, ddg = metric_derivatives(packed, spacing, stencil)
    gamma, gamma_low = christoffel_arrays(ginv, dg)
    ric = ricci_arrays(ginv, ddg, gamma, gamma_low)

    w_up = np.einsum("pq...,kpq...->k...", ginv, gamma)
    w_low = np.einsum("pq...,jpq...->j...", ginv, gamma_low)
    dginv = -np.einsum("pa...,qb...,iab...->ipq...", ginv, ginv, dg, optimize=True)
    dw = np.einsum("ipq...,jpq...->ij...", dginv, gamma_low)
    dw += np.einsum("pq...,ipqj...->ij...", ginv, ddg)
    dw -= 0.5 * np.einsum("pq...,ijpq...->ij...", ginv, ddg)
    if background is not None and not background.flat:
        v = np.einsum("pq...,kpq...->k...", ginv, background.gamma)
        w_up = w_up - v
        w_low = w_low - np.einsum("jk...,k...->j...", g, v)
        dv = np.einsum("ipq...,kpq...->ik...", dginv, background.gamma)
        dv += np.einsum("pq...,ikpq...->ik...", ginv, background.dgamma)
        dw -= np.einsum("ijk...,k...->ij...", dg, v)
        dw -= np.einsum("jk...,ik...->ij...", g, dv)
    cov = dw - np.einsum("kij...,k...->ij...", gamma, w_low)
    rhs = -2.0 * ric + cov + np.swapaxes(cov, 0, 1)
    return pack_sym(rhs, n), w_up, ginv


_NEIGHBOURS = {}


def packed_derivatives_fast(packed, spacing, stencil=4):
    """Derivatives flattened over the grid, (n, npack, P) and (npairs, npack, P), compiled.

    Same values as :func:`packed_derivatives` up to rounding.
    """
    from ._kernels import derivative_kernel, neighbour_table

    n = len(spacing)
    shape = packed.shape[1:]
    w1, half = _D1[stencil]
    w2, _ = _D2[stencil]
    key = (tuple(shape), half)
    if key not in _NEIGHBOURS:
        _NEIGHBOURS.clear()
        _NEIGHBOURS[key] = neighbour_table(np.array(shape, dtype=np.int64), half)
    nbr = _NEIGHBOURS[key]
    P = int(np.prod(shape))
    m = packed.shape[0]
    dg = np.empty((n, m, P))
    ddg = np.empty((n * (n + 1) // 2, m, P))
    derivative_kernel(np.ascontiguousarray(packed.reshape(m, P)), nbr,
                      np.ascontiguousarray(w1[half + 1:]), np.ascontiguousarray(w2[half + 1:]),
                      1.0 / np.asarray(spacing, dtype=float), dg, ddg)
    return dg, ddg


def packed_derivatives(packed, spacing, stencil=4):
    """d_a g (n, npack, *S) and d_a d_b g for a <= b (npairs, npack, *S)."""
    n = len(spacing)
    dgp = np.stack([d1(packed, a, spacing[a], stencil, ndim=n) for a in range(n)])
    pairs = []
    for a in range(n):
        for b in range(a, n):
            if a == b:
                pairs.append(d2(packed, a, spacing[a], stencil, ndim=n))
            else:
                pairs.append(d1(dgp[a], b, spacing[b], stencil, ndim=n))
    return dgp, np.stack(pairs)


def deturck_rhs_fast(packed, spacing, background=None, stencil=4):
    """Same result as :func:`deturck_rhs` through the fused pointwise kernel.

    Returns ``(rhs_packed, w_up, scalar)``.
    """
    from ._kernels import deturck_rhs_kernel

    n = len(spacing)
    shape = packed.shape[1:]
    P = int(np.prod(shape))
    dgp, ddgp = packed_derivatives_fast(packed, spacing, stencil)
    has_bg = background is not None and not background.flat
    if has_bg:
        bg_g = np.ascontiguousarray(background.gamma.reshape(n, n, n, P))
        bg_dg = np.ascontiguousarray(background.dgamma.reshape(n, n, n, n, P))
    else:
        bg_g = np.zeros((n, n, n, 1))
        bg_dg = np.zeros((n, n, n, n, 1))
    rhs = np.empty((packed.shape[0], P))
    w_up = np.empty((n, P))
    scalar = np.empty(P)
    idx = sym_index(n)
    deturck_rhs_kernel(
        np.ascontiguousarray(packed.reshape(-1, P)), dgp, ddgp,
        idx, idx, bg_g, bg_dg, has_bg, rhs, w_up, scalar,
    )
    return rhs.reshape(packed.shape), w_up.reshape((n,) + shape), scalar.reshape(shape)


def stable_dt(packed, grid, cfl_safety, lam_min=None):
    """Parabolic step bound cfl * h^2 / (2n * max eigenvalue of g^-1).

    ``lam_min`` is the smallest eigenvalue of g over the grid when already known.
    """
    n = grid.n
    if lam_min is None:
        lam_min = float(_min_eigenvalues(packed, n).min())
    return cfl_safety * grid.h**2 / (2 * n * (1.0 / lam_min))


def _state_dt(state, cfl_safety):
    return stable_dt(state.g_values, state.grid, cfl_safety, state.diag.get("lam_min"))


def _min_eigenvalues(packed, n):
    full = unpack_sym(packed, n)
    mats = np.moveaxis(full.reshape(n, n, -1), -1, 0)
    return np.linalg.eigvalsh(mats)[:, 0]


def _degeneracy_check(packed, grid, t):
    n = grid.n
    if not np.all(np.isfinite(packed)):
        bad = np.argwhere(~np.isfinite(packed.sum(axis=0)))[0]
        raise FlowDegeneracyError(
            f"flow produced non-finite values at t={t:.6g}, point {tuple(bad)}", t=t,
            point=tuple(int(i) for i in bad),
        )
    lam = _min_eigenvalues(packed, n)
    worst = int(np.argmin(lam))
    if lam[worst] <= 1e-8:
        point = tuple(int(i) for i in np.unravel_index(worst, grid.shape))
        raise FlowDegeneracyError(
            f"metric lost positive-definiteness at t={t:.6g}, point {point}",
            t=t, point=point, min_eigenvalue=float(lam[worst]),
        )
    return float(lam[worst])


# ---------------------------------------------------------------------------
# diffeomorphism tracker


def sample_periodic(values, positions, grid, order=1):
    """Interpolate component-first ``values`` at physical positions (M, n)."""
    coords = (np.asarray(positions) / np.asarray(grid.spacing)).T
    lead = values.shape[: values.ndim - grid.n]
    flat = values.reshape((-1,) + grid.shape)
    out = np.stack(
        [ndimage.map_coordinates(c, coords, order=order, mode="grid-wrap") for c in flat]
    )
    return out.reshape(lead + (positions.shape[0],))


@dataclass
class Tracker:
    """Sample points x and their images Phi_t(x) (wrapped into the torus)."""

    sources: np.ndarray
    positions: np.ndarray

    @classmethod
    def identity(cls, points):
        pts = np.array(points, dtype=float).reshape(-1, np.shape(points)[-1])
        return cls(pts.copy(), pts.copy())

    def copy(self):
        return Tracker(self.sources.copy(), self.positions.copy())

    def __len__(self):
        return len(self.sources)


def grid_sources(grid, stride=2):
    """Physical positions of a strided sublattice of grid points."""
    axes = [grid.axis_coords(a)[::stride] for a in range(grid.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def patch_sources(grid, probes, radius=4, spacing=None):
    """Cubic patches of points around each probe, spacing defaulting to h."""
    s = grid.h if spacing is None else spacing
    offs = np.arange(-radius, radius + 1) * s
    mesh = np.meshgrid(*([offs] * grid.n), indexing="ij")
    stencil = np.stack([m.ravel() for m in mesh], axis=1)
    pts = [np.asarray(p, dtype=float)[None, :] + stencil for p in probes]
    return grid.wrap_position(np.concatenate(pts, axis=0))


def _advect_rhs(w_up, positions, grid, order):
    return -sample_periodic(w_up, positions, grid, order).T


def advect_diffeo(tracker, grid, w_up, dt, integrator="rk2", order=1):
    """Advance Phi along -W for a W field held fixed over the step.

    Inside :func:`step` the tracker is instead advanced stage by stage with the
    metric; this standalone form covers frozen or prescribed velocity fields.
    """
    if len(tracker) == 0:
        return tracker.copy()
    x = tracker.positions
    if integrator == "rk2":
        k1 = _advect_rhs(w_up, x, grid, order)
        k2 = _advect_rhs(w_up, grid.wrap_position(x + dt * k1), grid, order)
        new = x + 0.5 * dt * (k1 + k2)
    elif integrator == "rk4":
        k1 = _advect_rhs(w_up, x, grid, order)
        k2 = _advect_rhs(w_up, grid.wrap_position(x + 0.5 * dt * k1), grid, order)
        k3 = _advect_rhs(w_up, grid.wrap_position(x + 0.5 * dt * k2), grid, order)
        k4 = _advect_rhs(w_up, grid.wrap_position(x + dt * k3), grid, order)
        new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown integrator {integrator}")
    return Tracker(tracker.sources.copy(), grid.wrap_position(new))


# ---------------------------------------------------------------------------
# states and stepping


@dataclass
class FlowState:
    t: float
    g_values: np.ndarray
    grid: PeriodicGrid
    background: Background
    tracker: Tracker
    diag: dict = field(default_factory=dict)

    @property
    def g(self):
        if "_metric" not in self.diag:
            self.diag["_metric"] = MetricField.from_values(self.grid, self.g_values)
        return self.diag["_metric"]

    @property
    def background_h(self):
        return self.background.metric


def initial_state(g0: MetricField, h: MetricField, tracker_points=None, stencil=4):
    if g0.grid != h.grid:
        raise ValueError("g0 and h live on different grids")
    pts = np.zeros((0, g0.grid.n)) if tracker_points is None else tracker_points
    return FlowState(
        t=0.0,
        g_values=g0.values.copy(),
        grid=g0.grid,
        background=Background(h, stencil),
        tracker=Tracker.identity(pts),
    )


def step(state: FlowState, dt, params: FlowParams, check_cfl=True):
    """One explicit step of metric and tracker together."""
    grid = state.grid
    if dt <= 0:
        raise ValueError("dt must be positive")
    if check_cfl:
        limit = _state_dt(state, params.cfl_safety)
        if dt > limit * (1 + 1e-9):
            raise ValueError(f"dt={dt:.3e} violates the parabolic bound {limit:.3e}")
    order = params.tracker_interp_order
    sp = grid.spacing
    bg = state.background

    rhs_fn = deturck_rhs_fast if params.kernel == "numba" else deturck_rhs

    def f(gv, x):
        rhs, w_up, _ = rhs_fn(gv, sp, bg, params.stencil)
        vel = _advect_rhs(w_up, x, grid, order) if len(x) else x
        return rhs, vel

    g0, x0 = state.g_values, state.tracker.positions
    wrap = grid.wrap_position
    if params.integrator == "rk2":
        k1, v1 = f(g0, x0)
        k2, v2 = f(g0 + dt * k1, wrap(x0 + dt * v1))
        g_new = g0 + 0.5 * dt * (k1 + k2)
        x_new = x0 + 0.5 * dt * (v1 + v2)
    else:
        k1, v1 = f(g0, x0)
        k2, v2 = f(g0 + 0.5 * dt * k1, wrap(x0 + 0.5 * dt * v1))
        k3, v3 = f(g0 + 0.5 * dt * k2, wrap(x0 + 0.5 * dt * v2))
        k4, v4 = f(g0 + dt * k3, wrap(x0 + dt * v3))
        g_new = g0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x_new = x0 + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    t_new = state.t + dt
    lam_min = _degeneracy_check(g_new, grid, t_new)
    return FlowState(
        t=t_new,
        g_values=g_new,
        grid=grid,
        background=bg,
        tracker=Tracker(state.tracker.sources, wrap(x_new)),
        diag={"lam_min": lam_min},
    )


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class FittedConstants:
    A_deriv: float | None = None
    A_rm: float | None = None
    C0_dist: float | None = None
    C_gauss: float | None = None
    C6: float | None = None
    C7: float | None = None
    L_barrier: float | None = None
    displacement: float | None = None

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class Snapshot:
    """Stored flow state with derived fields used by the audits."""

    t: float
    g_values: np.ndarray
    w_up: np.ndarray
    scalar: np.ndarray
    positions: np.ndarray
    monitors: dict
    rm_norm: np.ndarray | None = None


SERIES_COLUMNS = (
    "t", "R_min", "R_max", "bilipschitz", "t_Dg2", "t_D2g", "t_Rm", "tol_fd", "volume",
)


@dataclass
class FlowTrajectory:
    grid: PeriodicGrid
    params: FlowParams
    snapshots: list
    sources: np.ndarray
    background_values: np.ndarray
    fitted: FittedConstants = field(default_factory=FittedConstants)
    dt_initial: float = 0.0
    steps: int = 0
    failure: str | None = None

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    def metric(self, k) -> MetricField:
        return MetricField.from_values(self.grid, self.snapshots[k].g_values)

    def snapshot_at(self, t, tol=1e-12):
        ts = self.times
        k = int(np.argmin(np.abs(ts - t)))
        if abs(ts[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        return k

    def metric_at(self, t) -> np.ndarray:
        """Packed metric linearly interpolated in time between snapshots."""
        ts = self.times
        if t <= ts[0]:
            return self.snapshots[0].g_values
        if t >= ts[-1]:
            return self.snapshots[-1].g_values
        k = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1 - w) * self.snapshots[k].g_values + w * self.snapshots[k + 1].g_values

    def positions_at(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.snapshots[0].positions
        if t >= ts[-1]:
            return self.snapshots[-1].positions
        k = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        a, b = self.snapshots[k].positions, self.snapshots[k + 1].positions
        return self.grid.wrap_position(a + w * self.grid.displacement(a, b))

    def fit_window(self):
        """Snapshots used for t^-1 type fits: t >= 4 dt_initial."""
        t_min = 4.0 * self.dt_initial
        return [k for k, s in enumerate(self.snapshots) if s.t >= t_min and s.t > 0]

    def series(self):
        return [[s.monitors[c] for c in SERIES_COLUMNS] for s in self.snapshots]

    def source_index(self, point, tol=1e-9):
        d = np.abs(self.grid.displacement(self.sources, np.asarray(point, dtype=float)[None, :]))
        hit = np.nonzero(np.all(d < tol, axis=1))[0]
        if len(hit) == 0:
            raise ValueError(f"point {point} is not tracked")
        return int(hit[0])


def _monitors(packed, grid, t, stencil, with_riemann):
    n = grid.n
    arrs = curvature_arrays(packed, grid.spacing, stencil, with_riemann=with_riemann)
    R = arrs["scalar"]
    dg = arrs["dg"]
    dg2 = float(np.max(np.sum(dg**2, axis=(0, 1, 2))))
    ddg = arrs["ddg"]
    d2g = float(np.max(np.sqrt(np.sum(ddg**2, axis=(0, 1, 2, 3)))))
    d4 = 0.0
    for a in range(n):
        fourth = d2(d2(packed, a, grid.spacing[a], stencil, ndim=n), a, grid.spacing[a], stencil, ndim=n)
        d4 = max(d4, float(np.abs(fourth).max()))
    lam = np.linalg.eigvalsh(np.moveaxis(unpack_sym(packed, n).reshape(n, n, -1), -1, 0))
    bilip = float(max(lam[:, -1].max(), 1.0 / lam[:, 0].min()))
    vol = float(np.sum(np.sqrt(np.prod(lam, axis=1))) * grid.cell_volume)
    rm = arrs.get("rm_norm")
    rm_max = float(rm.max()) if rm is not None else float("nan")
    mon = {
        "t": t,
        "R_min": float(R.min()),
        "R_max": float(R.max()),
        "bilipschitz": bilip,
        "Dg2": dg2,
        "D2g": d2g,
        "Rm_max": rm_max,
        "t_Dg2": t * dg2,
        "t_D2g": t * d2g,
        "t_Rm": t * rm_max,
        "tol_fd": 10.0 * grid.h**2 * d4,
        "volume": vol,
    }
    return R, rm, mon


def _snapshot(state, params):
    grid = state.grid
    R, rm, mon = _monitors(state.g_values, grid, state.t, params.stencil, params.with_riemann)
    _, w_up, _ = deturck_rhs_fast(state.g_values, grid.spacing, state.background, params.stencil)
    return Snapshot(
        t=state.t,
        g_values=state.g_values.copy(),
        w_up=w_up,
        scalar=R,
        positions=state.tracker.positions.copy(),
        monitors=mon,
        rm_norm=rm,
    )


def run(g0: MetricField, h: MetricField, params: FlowParams, schedule=None, tracker_points=None,
        progress=None):
    """Integrate the flow from g0 to params.t_end, recording snapshots.

    Snapshots are taken at t = 0, at every time in ``schedule`` (steps are
    shortened to land on them), every ``monitor_every`` steps and at t_end.
    On loss of positive-definiteness a FlowDegeneracyError is raised with the
    partial trajectory attached.
    """
    if g0.bilipschitz > params.bilipschitz_bound:
        raise GeometryError(
            f"initial metric bilipschitz factor {g0.bilipschitz:.3g} exceeds bound "
            f"{params.bilipschitz_bound}"
        )
    grid = g0.grid
    state = initial_state(g0, h, tracker_points, params.stencil)
    targets = sorted({float(t) for t in (schedule or []) if 0 < t < params.t_end} | {params.t_end})
    traj = FlowTrajectory(
        grid=grid,
        params=params,
        snapshots=[_snapshot(state, params)],
        sources=state.tracker.sources.copy(),
        background_values=h.values.copy(),
    )
    traj.dt_initial = min(params.dt_max, stable_dt(state.g_values, grid, params.cfl_safety))
    ti = 0
    since = 0
    try:
        while ti < len(targets):
            dt = min(params.dt_max, _state_dt(state, params.cfl_safety))
            remaining = targets[ti] - state.t
            hit = dt >= remaining * (1 - 1e-12)
            if hit:
                dt = remaining
            state = step(state, dt, params, check_cfl=False)
            traj.steps += 1
            since += 1
            if hit:
                state.t = targets[ti]
                ti += 1
            if hit or (params.monitor_every and since >= params.monitor_every):
                traj.snapshots.append(_snapshot(state, params))
                since = 0
                if progress:
                    progress(traj)
    except FlowDegeneracyError as exc:
        traj.failure = str(exc)
        exc.trajectory = traj
        _fit_monitor_constants(traj)
        raise
    _fit_monitor_constants(traj)
    return traj


def _fit_monitor_constants(traj):
    window = traj.fit_window()
    if not window:
        traj.fitted.A_deriv = 0.0
        traj.fitted.A_rm = 0.0
        return
    mons = [traj.snapshots[k].monitors for k in window]
    traj.fitted.A_deriv = float(max(max(m["t_Dg2"], m["t_D2g"]) for m in mons))
    rms = [m["t_Rm"] for m in mons if not math.isnan(m["t_Rm"])]
    traj.fitted.A_rm = float(max(rms)) if rms else None
    if len(traj.sources):
        disp = 0.0
        for k in window:
            s = traj.snapshots[k]
            d = np.linalg.norm(traj.grid.displacement(traj.sources, s.positions), axis=1)
            disp = max(disp, float(d.max()) / math.sqrt(s.t))
        traj.fitted.displacement = disp


# ---------------------------------------------------------------------------
# pullback to the Ricci flow


def _jacobian(traj_grid, sources, positions, index_of, p, s, dim):
    """4th-order central differences of Phi across tracked neighbours of p."""
    J = np.zeros((dim, dim))
    e = np.eye(dim)
    x0 = positions[index_of(p)]
    for a in range(dim):
        vals = {}
        for k in (-2, -1, 1, 2):
            q = p + k * s * e[a]
            vals[k] = traj_grid.displacement(x0, positions[index_of(q)])
        J[:, a] = (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * s)
    return J


class _SourceLookup:
    def __init__(self, grid, sources, scale):
        self.grid = grid
        self.scale = scale
        self.table = {}
        for i, x in enumerate(grid.wrap_position(sources)):
            self.table.setdefault(self._key(x), i)

    def _key(self, x):
        L = np.asarray(self.grid.lengths)
        y = np.mod(np.asarray(x, dtype=float), L)
        k = np.round(y / self.scale).astype(np.int64)
        m = np.round(L / self.scale).astype(np.int64)
        return tuple(int(v) for v in np.mod(k, m))

    def __call__(self, x):
        key = self._key(x)
        if key not in self.table:
            raise ValueError(f"probe point {tuple(np.round(x, 6))} is outside the tracked region")
        return self.table[key]


def pullback_metric(traj: FlowTrajectory, k, probes, spacing=None, interp_order=3):
    """Pulled-back metric (Phi_t^* g(t))_ab at each probe, shape (P, n, n).

    The Jacobian of Phi_t comes from tracked neighbours at distance ``spacing``
    (default h); g(t) is sampled at Phi_t(p) by cubic-spline interpolation.
    """
    grid = traj.grid
    n = grid.n
    s = grid.h if spacing is None else spacing
    snap = traj.snapshots[k]
    lookup = _SourceLookup(grid, traj.sources, s)
    gfull = unpack_sym(snap.g_values, n)
    out = []
    for p in np.atleast_2d(np.asarray(probes, dtype=float)):
        J = _jacobian(grid, traj.sources, snap.positions, lookup, p, s, n)
        x = snap.positions[lookup(p)][None, :]
        gx = sample_periodic(gfull, x, grid, interp_order)[..., 0]
        out.append(J.T @ gx @ J)
    return np.array(out)


def pullback_scalar(traj: FlowTrajectory, k, probe, spacing=None, stencil=4):
    """Scalar curvature of the pulled-back metric at a probe.

    Needs a tracked patch of radius 4 (in units of ``spacing``) around the probe.
    """
    grid = traj.grid
    n = grid.n
    s = grid.h if spacing is None else spacing
    offs = np.arange(-2, 3) * s
    mesh = np.meshgrid(*([offs] * n), indexing="ij")
    pts = np.asarray(probe, dtype=float)[None, :] + np.stack([m.ravel() for m in mesh], axis=1)
    ghat = pullback_metric(traj, k, grid.wrap_position(pts), s)
    packed = np.stack([ghat[:, i, j] for i in range(n) for j in range(i, n)]).reshape(
        (-1,) + (5,) * n
    )
    arrs = curvature_arrays(packed, (s,) * n, stencil, with_riemann=False)
    return float(arrs["scalar"][(2,) * n])


__all__ = [
    "FlowParams",
    "FlowState",
    "FlowTrajectory",
    "FittedConstants",
    "Snapshot",
    "Tracker",
    "deturck_vector",
    "deturck_rhs",
    "deturck_rhs_fast",
    "packed_derivatives",
    "step",
    "advect_diffeo",
    "pullback_metric",
    "pullback_scalar",
    "run",
    "initial_state",
    "stable_dt",
    "grid_sources",
    "patch_sources",
    "sample_periodic",
]
