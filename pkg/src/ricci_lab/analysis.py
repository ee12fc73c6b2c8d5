"""Distances, metric balls, integral norms and the audits built on them.

Distances are shortest paths on the periodic grid graph whose edges join each
point to the neighbours in the cube of offsets {-reach..reach}^n (primitive
offsets only). Edge lengths use the metric averaged over the two endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InconsistencyError
from .grid import MetricField, ScalarField, unpack_sym

# ---------------------------------------------------------------------------
# graph distances


def neighbour_offsets(n, reach=2):
    """Primitive integer offsets in {-reach..reach}^n, one per +/- pair."""
    out = []
    for o in product(range(-reach, reach + 1), repeat=n):
        if not any(o):
            continue
        if reduce(math.gcd, (abs(v) for v in o)) != 1:
            continue
        first = next(v for v in o if v != 0)
        if first > 0:
            out.append(o)
    return np.array(out, dtype=np.int64)


class MetricGraph:
    """Weighted neighbour graph of a metric on its grid (built once, reused)."""

    def __init__(self, g: MetricField, reach=2):
        grid = g.grid
        n = grid.n
        self.grid = grid
        self.metric = g
        self.reach = reach
        full = unpack_sym(g.values, n)
        spacing = np.asarray(grid.spacing)
        idx = np.arange(grid.size).reshape(grid.shape)
        rows, cols, wts = [], [], []
        for o in neighbour_offsets(n, reach):
            shift = tuple(int(-v) for v in o)
            other = np.roll(idx, shift, axis=tuple(range(n)))
            gm = 0.5 * (full + np.roll(full, shift, axis=tuple(range(2, n + 2))))
            v = o * spacing
            w = np.sqrt(np.einsum("i,j,ij...->...", v, v, gm))
            rows.append(idx.ravel())
            cols.append(other.ravel())
            wts.append(w.ravel())
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.weights = np.concatenate(wts)
        self._full = full

    def distances(self, x0) -> np.ndarray:
        """Distances from x0 (a grid index tuple or a physical point) to every grid point."""
        grid = self.grid
        P = grid.size
        x0 = np.asarray(x0)
        if x0.dtype.kind == "f":
            k = x0 / np.asarray(grid.spacing)
            if np.all(np.abs(k - np.round(k)) < 1e-9):
                x0 = np.round(k).astype(np.int64)
        if x0.dtype.kind in "iu":
            src = int(np.ravel_multi_index(tuple(int(v) for v in grid.wrap_index(x0)), grid.shape))
            mat = coo_matrix((self.weights, (self.rows, self.cols)), shape=(P, P)).tocsr()
            return dijkstra(mat, directed=False, indices=src).reshape(grid.shape)
        # fractional base point: a virtual node joined to the corners of its cell
        corners, lengths = self._cell_corners(np.asarray(x0, dtype=float))
        rows = np.concatenate([self.rows, np.full(len(corners), P)])
        cols = np.concatenate([self.cols, corners])
        wts = np.concatenate([self.weights, lengths])
        mat = coo_matrix((wts, (rows, cols)), shape=(P + 1, P + 1)).tocsr()
        d = dijkstra(mat, directed=False, indices=P)
        return d[:P].reshape(grid.shape)

    def _cell_corners(self, x):
        grid = self.grid
        n = grid.n
        h = np.asarray(grid.spacing)
        x = grid.wrap_position(x)
        base = np.floor(x / h).astype(np.int64)
        corners, lengths = [], []
        for c in product((0, 1), repeat=n):
            k = base + np.array(c)
            v = (k * h) - x
            kw = tuple(int(i) for i in grid.wrap_index(k))
            gk = self._full[(slice(None), slice(None)) + kw]
            corners.append(int(np.ravel_multi_index(kw, grid.shape)))
            # tiny floor keeps a corner that coincides with x as an explicit edge
            lengths.append(max(float(np.sqrt(v @ gk @ v)), 1e-300))
        return np.array(corners), np.array(lengths)


@dataclass
class DistanceField:
    base_point: np.ndarray
    metric_time: float
    values: ScalarField
    reach: int = 2

    @property
    def grid(self):
        return self.values.grid

    def ball(self, r):
        return self.values.values < r

    def at(self, index):
        return float(self.values.values[tuple(index)])


def distance_field(g: MetricField, x0, t=0.0, reach=2, graph: MetricGraph | None = None) -> DistanceField:
    """Graph distance d_g(., x0). ``x0`` is a grid index (ints) or a physical point."""
    graph = MetricGraph(g, reach) if graph is None else graph
    d = graph.distances(x0)
    return DistanceField(np.asarray(x0), float(t), ScalarField(g.grid, d), graph.reach)


# ---------------------------------------------------------------------------
# ball integrals and norms


def _values(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def ball_integral(f, g: MetricField, D: DistanceField, r) -> float:
    """Sum over grid points with D < r of f sqrt(det g) h^n.

    Radii are limited to half the torus side (scaled up by sqrt(lambda_min)
    when the metric only stretches) so balls never wrap onto themselves.
    """
    grid = g.grid
    if not r > 0:
        raise ValueError("ball radius must be positive")
    # a g-ball of radius r sits inside the coordinate ball of radius r / sqrt(lambda_min)
    safe = min(grid.lengths) / 2 * max(1.0, math.sqrt(g.lambda_min))
    if r > safe:
        raise ValueError(f"radius {r} exceeds the wrap-safe bound {safe}")
    mask = D.ball(r)
    vals = np.broadcast_to(_values(f), grid.shape)
    return float(np.sum(vals[mask] * g.volume_density()[mask]) * grid.cell_volume)


def negative_part(R, kappa):
    """(R - kappa)_- = max(kappa - R, 0) as an array."""
    return np.maximum(_values(kappa) - _values(R), 0.0)


def negative_part_norm(R, kappa, p, g: MetricField, D: DistanceField, r) -> float:
    """Integral over the ball of max(kappa - R, 0)^p."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return ball_integral(negative_part(R, kappa) ** p, g, D, r)


def weighted_l1_sup(R, sigma, delta, g: MetricField, centers, radii, distances=None,
                    return_argmax=False):
    """max over centers and radii of r^(2 - n - 2 delta) int_{B(x, r)} (R - sigma)_-."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    centers = list(centers)
    radii = list(radii)
    if not centers or not radii:
        raise ValueError("centers and radii must be non-empty")
    n = g.grid.n
    if distances is None:
        graph = MetricGraph(g)
        distances = [distance_field(g, c, graph=graph) for c in centers]
    neg = negative_part(R, sigma)
    best, arg = -math.inf, None
    for c, D in zip(centers, distances):
        for r in radii:
            v = r ** (2 - n - 2 * delta) * ball_integral(neg, g, D, r)
            if v > best:
                best, arg = v, (c, r)
    return (best, arg) if return_argmax else best


# ---------------------------------------------------------------------------
# cutoff


def _smoothstep(x):
    return x**3 * (10 - 15 * x + 6 * x * x)


class CutoffProfile:
    """phi = 1 on [0, 1/2], 1 - S(2s - 1) on [1/2, 1], 0 beyond; S the quintic smoothstep."""

    breakpoints = (0.0, 0.5, 1.0)

    def __call__(self, s, deriv=0):
        s = np.asarray(s, dtype=float)
        x = np.clip(2.0 * s - 1.0, 0.0, 1.0)
        mid = (s > 0.5) & (s < 1.0)
        if deriv == 0:
            return np.where(s <= 0.5, 1.0, np.where(mid, 1.0 - _smoothstep(x), 0.0))
        if deriv == 1:
            return np.where(mid, -2.0 * 30.0 * x * x * (1 - x) ** 2, 0.0)
        if deriv == 2:
            return np.where(mid, -4.0 * 60.0 * x * (1 - x) * (1 - 2 * x), 0.0)
        raise ValueError("deriv must be 0, 1 or 2")

    def check_invariants(self, samples=10_000, upper=1.5, bound=1e4):
        s = np.linspace(0.0, upper, samples)
        phi, d1, d2 = self(s), self(s, 1), self(s, 2)
        return {
            "range": bool(np.all((phi >= 0) & (phi <= 1))),
            "monotone": bool(np.all(np.diff(phi) <= 1e-15)),
            "second_derivative": bool(np.all(d2 >= -bound * phi)),
            "slope": bool(np.all(np.abs(d1) <= bound)),
            "support": bool(np.all(phi[s <= 0.5] == 1.0) and np.all(phi[s >= 1.0] == 0.0)),
        }


PROFILE = CutoffProfile()


def cutoff_values(d, t, m, C0=0.0, scale=1.0, K=1e4):
    """exp(-K m t / scale^2) phi^m((d + 2 C0 sqrt t) / scale)."""
    arg = (np.asarray(d) + 2.0 * C0 * math.sqrt(t)) / scale
    return math.exp(-K * m * t / scale**2) * PROFILE(arg) ** m


def cutoff_field(traj, t, x0, m=None, C0=None, scale=1.0, K=1e4, distance=None) -> ScalarField:
    """Cutoff weight on the DeTurck frame at snapshot time t.

    The distance is measured by g(t) from the tracked image Phi_t(x0), which is
    the Ricci-flow distance from x0 transported by the isometry Phi_t.
    """
    grid = traj.grid
    m = 2 * grid.n if m is None else m
    if C0 is None:
        C0 = traj.fitted.C0_dist or 0.0
    if distance is None:
        k = traj.snapshot_at(t)
        distance = tracked_distance(traj, k, x0)
    vals = cutoff_values(distance.values.values, t, m, C0, scale, K)
    return ScalarField(grid, vals)


def cutoff_gradient_ratio(phi: ScalarField, g: MetricField, m, K=1e4, scale=1.0, floor=1e-300):
    """max over points of |grad Phi|_g / (K m Phi^(1 - 1/m) / scale), by central differences.

    A central difference equals the derivative somewhere inside its stencil, so
    the bound at each point uses the largest Phi over the surrounding 3^n cells.
    """
    from scipy.ndimage import maximum_filter

    from .grid import d1

    grid = g.grid
    n = grid.n
    grad = np.stack([d1(phi.values, a, grid.spacing[a], 2) for a in range(n)])
    norm = np.sqrt(np.maximum(np.einsum("ij...,i...,j...->...", g.inverse_full(), grad, grad), 0.0))
    local = maximum_filter(np.maximum(phi.values, 0.0), size=3, mode="wrap")
    bound = K * m * local ** (1.0 - 1.0 / m) / scale
    live = norm > floor
    if not np.any(live):
        return 0.0
    with np.errstate(divide="ignore"):
        return float(np.max(norm[live] / bound[live]))


# ---------------------------------------------------------------------------
# trajectory-level helpers


def tracked_position(traj, k, x0):
    """Phi_t(x0) at snapshot k; x0 must be a tracked source."""
    return traj.snapshots[k].positions[traj.source_index(x0)]


def tracked_distance(traj, k, x0, reach=2) -> DistanceField:
    """d_{g(t_k)}(., Phi_t(x0))."""
    return distance_field(traj.metric(k), tracked_position(traj, k, x0), traj.snapshots[k].t, reach)


def snapshot_negativity(traj, sigma):
    return np.array([float(np.max(np.maximum(sigma - s.scalar, 0.0))) for s in traj.snapshots])


# ---------------------------------------------------------------------------
# localized energy


@dataclass
class EnergyTrace:
    times: np.ndarray
    E: np.ndarray
    dEdt: np.ndarray
    sigma: float
    m: int
    center: np.ndarray
    scale: float = 1.0
    K: float = 1e4

    def integrated_constant(self, slack=1.0):
        """Minimal C6 with E(t) + 1 <= e^{C6 sqrt(t)} (E(0) + 1)."""
        s = np.sqrt(self.times / self.scale**2)
        live = s > 0
        if not np.any(live):
            return 0.0
        c = np.log((self.E[live] + 1.0) / (self.E[0] + 1.0)) / s[live]
        return slack * max(0.0, float(c.max()))

    def differential_constant(self, slack=1.0):
        """Minimal C5 with dE/dt <= C5 / sqrt(t) (E + 1) at the sampled times."""
        live = self.times > 0
        if not np.any(live):
            return 0.0
        c = self.dEdt[live] * np.sqrt(self.times[live]) / (self.E[live] + 1.0)
        return slack * max(0.0, float(c.max()))

    def integrated_holds(self, C6):
        s = np.sqrt(self.times / self.scale**2)
        bound = np.exp(C6 * s) * self.E[0] + (np.exp(C6 * s) - 1.0)
        return bool(np.all(self.E <= bound * (1 + 1e-12) + 1e-300))


def energy_trace(traj, sigma, x0, m=None, scale=1.0, K=1e4, C0=None) -> EnergyTrace:
    """E(t) = int (R - sigma)_-^{n/2} Phi dmu_t at every snapshot."""
    if len(traj.snapshots) < 3:
        raise ValueError("energy trace needs at least 3 snapshots")
    grid = traj.grid
    n = grid.n
    m = 2 * n if m is None else m
    times, E = [], []
    for k, snap in enumerate(traj.snapshots):
        g = traj.metric(k)
        D = tracked_distance(traj, k, x0)
        phi = cutoff_field(traj, snap.t, x0, m, C0, scale, K, distance=D)
        neg = np.maximum(sigma - snap.scalar, 0.0) ** (n / 2)
        times.append(snap.t)
        E.append(float(np.sum(neg * phi.values * g.volume_density()) * grid.cell_volume))
    times = np.array(times)
    E = np.array(E)
    dEdt = np.gradient(E, times)
    return EnergyTrace(times, E, dEdt, float(sigma), m, np.asarray(x0), scale, K)


# ---------------------------------------------------------------------------
# localized L^{n/2} estimate


@dataclass
class LocalizedReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs0: float
    C6: float
    C7: float
    scale: float
    holds: bool
    residual: np.ndarray
    slack: float = 1.05
    measure: str = "g0"

    def bound(self, C6=None, C7=None):
        C6 = self.C6 if C6 is None else C6
        C7 = self.C7 if C7 is None else C7
        s = np.sqrt(self.times) / self.scale
        return np.exp(C6 * s) * self.rhs0 + C7 * s

    def lhs_at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.lhs[k])


def minimal_c7(times, lhs, rhs0, C6, scale):
    s = np.sqrt(np.asarray(times)) / scale
    live = s > 0
    if not np.any(live):
        return 0.0
    excess = np.asarray(lhs)[live] - np.exp(C6 * s[live]) * rhs0
    return max(0.0, float(np.max(excess / s[live])))


def localized_estimate_audit(traj, sigma, x0, r_scale, C6=None, slack=1.05, K=1e4,
                             measure="g0") -> LocalizedReport:
    """LHS over B_{g(t)}(Phi_t(x0), r/4) against the initial integral over B_{g0}(x0, r).

    C6 defaults to the integrated energy-trace fit; C7 is then minimal. The
    verdict applies the slack multiplier to both constants.
    """
    grid = traj.grid
    n = grid.n
    p = n / 2
    g0 = traj.metric(0) if measure == "g0" else MetricField.euclidean(grid)
    D0 = distance_field(g0, np.asarray(x0, dtype=float))
    rhs0 = negative_part_norm(traj.snapshots[0].scalar, sigma, p, g0, D0, r_scale)
    times, lhs = [], []
    for k, snap in enumerate(traj.snapshots):
        g = traj.metric(k)
        D = tracked_distance(traj, k, x0)
        times.append(snap.t)
        lhs.append(negative_part_norm(snap.scalar, sigma, p, g, D, r_scale / 4))
    times = np.array(times)
    lhs = np.array(lhs)
    if C6 is None:
        C6 = energy_trace(traj, sigma, x0, scale=r_scale, K=K).integrated_constant()
    C7 = minimal_c7(times, lhs, rhs0, C6, r_scale)
    s = np.sqrt(times) / r_scale
    bound = np.exp(slack * C6 * s) * rhs0 + slack * C7 * s
    residual = bound - lhs
    return LocalizedReport(times, lhs, rhs0, C6, C7, r_scale, bool(np.all(residual >= -1e-12)),
                           residual, slack, measure)


# name used by the audit registry and manifests
prop31_audit = localized_estimate_audit


def shared_constants(reports, slack=1.05):
    """One (C6, C7) for a family: C6 the largest member value, C7 minimal given it."""
    C6 = max(r.C6 for r in reports)
    C7 = max(minimal_c7(r.times, r.lhs, r.rhs0, C6, r.scale) for r in reports)
    holds = all(
        np.all(np.exp(slack * C6 * np.sqrt(r.times) / r.scale) * r.rhs0
               + slack * C7 * np.sqrt(r.times) / r.scale >= r.lhs - 1e-12)
        for r in reports
    )
    return C6, C7, bool(holds)


# ---------------------------------------------------------------------------
# barrier audit


@dataclass
class BarrierReport:
    delta: float
    alpha: float
    Lambda: float
    first_violation_time: float | None
    L_barrier: float
    slope: float | None
    times: np.ndarray
    negativity: np.ndarray
    window: tuple | None
    caveat: str = (
        "continuity only gives T >= first positive snapshot time on a finite grid"
    )


def loglog_slope(times, values):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = (t > 0) & (v > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(t[ok]), np.log(v[ok]), 1)[0])


def barrier_audit(traj, sigma, delta, epsilon_hyp, Lambda=None, window=None, tol=1e-10) -> BarrierReport:
    """First time max (R - sigma)_- reaches Lambda t^{delta - 1}, minimal L, log-log slope.

    ``window`` = (t_lo, t_hi) restricts the L and slope fits; the default is the
    trajectory's fit window (t >= 4 dt_initial).
    """
    times = traj.times
    neg = snapshot_negativity(traj, sigma)
    alpha = 1.0 - delta
    if epsilon_hyp == 0:
        if np.any(neg > tol):
            raise InconsistencyError("epsilon is zero but the initial data has negative part")
        return BarrierReport(delta, alpha, 0.0, None, 0.0, None, times, neg, window)
    Lam = math.e * epsilon_hyp if Lambda is None else Lambda
    T = None
    for t, v in zip(times, neg):
        if t > 0 and v >= Lam * t ** (-alpha):
            T = float(t)
            break
    if window is None:
        idx = traj.fit_window()
        window = (float(times[idx[0]]), float(times[idx[-1]])) if idx else None
    if window is None:
        sel = times > 0
    else:
        sel = (times >= window[0]) & (times <= window[1]) & (times > 0)
    L = float(np.max(neg[sel] / (epsilon_hyp * times[sel] ** (delta - 1.0)))) if np.any(sel) else 0.0
    slope = loglog_slope(times[sel], neg[sel])
    return BarrierReport(delta, alpha, Lam, T, L, slope, times, neg, window)


prop41_audit = barrier_audit


# ---------------------------------------------------------------------------
# distance drop, ball inclusion, volume monitor


def _sample_distance(D: DistanceField, points):
    from .flow import sample_periodic

    return sample_periodic(D.values.values[None], points, D.grid, 1)[0]


def fit_distance_drop(traj, x0, radius=1.0):
    """Minimal C0 with d_{t2} >= d_{t1} - 2 C0 (sqrt t2 - sqrt t1) for tracked points.

    Distances are those of the Ricci flow, d_{g(t)}(Phi_t x, Phi_t x0), taken at
    consecutive snapshots for tracked points within ``radius`` of x0 at t = 0.
    """
    grid = traj.grid
    prev = None
    C0 = 0.0
    for k, snap in enumerate(traj.snapshots):
        D = tracked_distance(traj, k, x0)
        d = _sample_distance(D, snap.positions)
        if prev is None:
            near = d < radius
        else:
            dt = math.sqrt(snap.t) - math.sqrt(prev[0])
            if dt > 0:
                drop = (prev[1] - d)[near]
                if drop.size:
                    C0 = max(C0, float(np.max(drop)) / (2.0 * dt))
        prev = (snap.t, d)
    return C0


def _relative_stretch(g_t: MetricField, g0: MetricField):
    from .grid import relative_eigenvalues

    lam = relative_eigenvalues(g_t.full(), g0.full(), g0.grid.n)
    return float(lam.max())


def fit_inclusion_time(traj, x0, r0):
    """S such that the ball inclusion is guaranteed up to t = S r0^2.

    From d_{g(t)}(Phi_t x0, x) <= sqrt(lam_g) |Phi_t x0 - x0| + sqrt(lam_rel) d_{g0}(x0, x)
    with the fitted displacement |Phi_t x - x| <= c sqrt t, the measured top
    eigenvalue lam_g of g(t) and of g(t) relative to g0. When the measured
    stretch leaves no room the largest snapshot time where the inclusion holds
    is used instead. Returns (S, method).
    """
    g0 = traj.metric(0)
    lam_g, lam_rel = 1.0, 1.0
    for k in range(1, len(traj.snapshots)):
        gk = traj.metric(k)
        lam_g = max(lam_g, gk.lambda_max)
        lam_rel = max(lam_rel, _relative_stretch(gk, g0))
    c = traj.fitted.displacement
    if c is None:
        c = 0.0
        for s in traj.snapshots[1:]:
            d = np.linalg.norm(traj.grid.displacement(traj.sources, s.positions), axis=1)
            c = max(c, float(d.max()) / math.sqrt(s.t))
    room = 0.25 - math.sqrt(lam_rel) / 8.0
    if room > 0:
        if c == 0:
            return math.inf, "analytic"
        return (room / (math.sqrt(lam_g) * c)) ** 2, "analytic"
    best = 0.0
    for k, s in enumerate(traj.snapshots):
        if inclusion_margin(traj, x0, r0, s.t) > 0:
            best = s.t
        else:
            break
    return best / r0**2, "empirical"


def inclusion_margin(traj, x0, r0, t):
    """min over grid points of B_{g0}(x0, r0/8) of r0/4 - d_{g(t)}(Phi_t x0, x)."""
    grid = traj.grid
    g0 = traj.metric(0)
    D0 = distance_field(g0, np.asarray(x0, dtype=float))
    inside = D0.ball(r0 / 8.0)
    gt = MetricField.from_values(grid, traj.metric_at(t))
    pos = traj.positions_at(t)[traj.source_index(x0)]
    Dt = distance_field(gt, pos, t)
    return float(np.min(r0 / 4.0 - Dt.values.values[inside]))


@dataclass
class InclusionReport:
    t: float
    S: float
    method: str
    margin: float
    holds: bool


def ball_inclusion_check(traj, x0, r0, S=None) -> InclusionReport:
    """Check B_{g0}(x0, r0/8) inside B_{g(t)}(Phi_t x0, r0/4) at t = S r0^2 / 2.

    The evaluation time is capped at the end of the trajectory.
    """
    method = "given"
    if S is None:
        S, method = fit_inclusion_time(traj, x0, r0)
    t = min(S * r0**2 / 2.0, float(traj.times[-1]))
    margin = inclusion_margin(traj, x0, r0, t)
    return InclusionReport(float(t), float(S), method, margin, margin > 0)


def ball_volume_monitor(traj, x0, min_cells=1.5):
    """A_vol = max over snapshots of t^{n/2} / Vol_{g(t)}(B(Phi_t x0, sqrt t)).

    Only snapshots whose radius sqrt(t) spans at least ``min_cells`` grid
    spacings are used; smaller balls are not resolved. None when no snapshot
    qualifies.
    """
    grid = traj.grid
    n = grid.n
    worst = None
    for k, s in enumerate(traj.snapshots):
        r = math.sqrt(s.t)
        if r < min_cells * grid.h or r > min(grid.lengths) / 2:
            continue
        D = tracked_distance(traj, k, x0)
        vol = ball_integral(1.0, traj.metric(k), D, r)
        ratio = s.t ** (n / 2) / vol
        worst = ratio if worst is None else max(worst, ratio)
    return worst


__all__ = [
    "MetricGraph",
    "DistanceField",
    "distance_field",
    "ball_integral",
    "negative_part_norm",
    "weighted_l1_sup",
    "CutoffProfile",
    "cutoff_field",
    "cutoff_gradient_ratio",
    "EnergyTrace",
    "energy_trace",
    "LocalizedReport",
    "prop31_audit",
    "localized_estimate_audit",
    "shared_constants",
    "BarrierReport",
    "barrier_audit",
    "fit_distance_drop",
    "fit_inclusion_time",
    "ball_inclusion_check",
    "ball_volume_monitor",
]
