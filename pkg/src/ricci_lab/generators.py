"""Families of conformal spike metrics converging in C^0 to the flat torus metric.

Member i is g_i = exp(2 u_i) delta with u_i = -a_i P((x - x0) / rho_i), where P
is a compactly supported radial profile with P(0) = max P = 1:

* ``Lp`` family: P = bump(s) = S(1 - s^2) on s < 1, S the quintic smoothstep.
  The bump vanishes to second order at s = 1, so g_i is C^2.
* ``weightedL1`` family: P = bump(s) * q_delta(s) with
  q_delta(s) = ((1 + c^2)^delta - (s^2 + c^2)^delta) / ((1 + c^2)^delta - c^(2 delta)),
  c = core / rho. For core << |x| << rho the scalar curvature behaves like
  -a |x|^(2 delta - 2), the profile for which the weighted L^1 functional is
  uniform across scales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .curvature import curvature
from .errors import GeometryError, ResolutionError
from .grid import MetricField, PeriodicGrid, ScalarField, SymTensorField, relative_eigenvalues

KINDS = ("Lp", "weightedL1")


# ---------------------------------------------------------------------------
# radial profiles with analytic derivatives


def _smoothstep(x):
    return x**3 * (10 - 15 * x + 6 * x * x)


def _smoothstep_d1(x):
    return 30 * x * x * (1 - x) ** 2


def _smoothstep_d2(x):
    return 60 * x * (1 - x) * (1 - 2 * x)


def bump(s, deriv=0):
    """S(1 - s^2) for s < 1, zero beyond; ``deriv`` in {0, 1, 2} w.r.t. s."""
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    x = np.where(inside, 1.0 - s * s, 0.0)
    if deriv == 0:
        out = _smoothstep(x)
    elif deriv == 1:
        out = -2.0 * s * _smoothstep_d1(x)
    elif deriv == 2:
        out = 4.0 * s * s * _smoothstep_d2(x) - 2.0 * _smoothstep_d1(x)
    else:
        raise ValueError("deriv must be 0, 1 or 2")
    return np.where(inside, out, 0.0)


def cusp_factor(s, delta, c, deriv=0):
    s = np.asarray(s, dtype=float)
    z = (1.0 + c * c) ** delta - c ** (2 * delta)
    w = s * s + c * c
    if deriv == 0:
        return ((1.0 + c * c) ** delta - w**delta) / z
    if deriv == 1:
        return -2.0 * delta * s * w ** (delta - 1) / z
    if deriv == 2:
        return -(2.0 * delta * w ** (delta - 1) + 4.0 * delta * (delta - 1) * s * s * w ** (delta - 2)) / z
    raise ValueError("deriv must be 0, 1 or 2")


def profile(s, kind, delta=None, c=None, deriv=0):
    if kind == "Lp":
        return bump(s, deriv)
    b = [bump(s, k) for k in range(deriv + 1)]
    q = [cusp_factor(s, delta, c, k) for k in range(deriv + 1)]
    if deriv == 0:
        return b[0] * q[0]
    if deriv == 1:
        return b[1] * q[0] + b[0] * q[1]
    return b[2] * q[0] + 2 * b[1] * q[1] + b[0] * q[2]


# ---------------------------------------------------------------------------
# family specification


@dataclass(frozen=True)
class SpikeFamilySpec:
    """Schedules a_i = amplitude / i^amplitude_power, rho_i = width / i^width_power."""

    n: int = 3
    kind: str = "Lp"
    points: int = 32
    side: float = 4.0
    amplitude: float = 1.0
    amplitude_power: float = 1.0
    width: float = 1.0
    width_power: float = 0.25
    center: tuple | None = None
    target: float = 0.0
    delta: float = 0.25
    core: float = 0.15
    indices: tuple = (1, 2, 3, 4, 5, 6)
    ball_radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.amplitude < 0 or self.width <= 0:
            raise ValueError("amplitude must be >= 0 and width > 0")
        if self.kind == "weightedL1" and not self.delta > 0:
            raise ValueError("weightedL1 family needs delta > 0")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def grid(self):
        return PeriodicGrid.cubic(self.n, self.points, self.side)

    @property
    def x0(self):
        if self.center is not None:
            return np.asarray(self.center, dtype=float)
        return np.full(self.n, self.side / 2.0)

    def amplitude_of(self, i):
        return self.amplitude / float(i) ** self.amplitude_power

    def width_of(self, i):
        return self.width / float(i) ** self.width_power


def conformal_factor(spec: SpikeFamilySpec, i, grid=None, amplitude=None):
    """u_i sampled on the grid."""
    grid = spec.grid if grid is None else grid
    a = spec.amplitude_of(i) if amplitude is None else amplitude
    rho = spec.width_of(i)
    r = grid.min_image_distance(spec.x0)
    c = spec.core / rho
    return ScalarField(grid, -a * profile(r / rho, spec.kind, spec.delta, c))


# ---------------------------------------------------------------------------
# continuum predictions (radial quadrature, independent of the grid)


def radial_scalar(r, spec: SpikeFamilySpec, i):
    """Continuum scalar curvature of member i at radius r (analytic derivatives)."""
    n = spec.n
    a = spec.amplitude_of(i)
    rho = spec.width_of(i)
    c = spec.core / rho
    s = np.asarray(r, dtype=float) / rho
    u = -a * profile(s, spec.kind, spec.delta, c)
    u1 = -a * profile(s, spec.kind, spec.delta, c, 1) / rho
    u2 = -a * profile(s, spec.kind, spec.delta, c, 2) / rho**2
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = np.where(s > 0, u2 + (n - 1) * u1 / np.where(s > 0, r, 1.0), n * u2)
    return np.exp(-2 * u) * (-2 * (n - 1) * lap - (n - 1) * (n - 2) * u1 * u1)


def _sphere_area(n):
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def predicted_negative_integral(spec, i, radius, p=None, volume="flat"):
    """Continuum value of int_{B(x0, radius)} (target - R)_+^p dmu.

    ``volume='flat'`` measures with the limit metric (Euclidean), ``'member'``
    with g_i itself; the ball is Euclidean in both cases.
    """
    n = spec.n
    p = n / 2 if p is None else p
    a = spec.amplitude_of(i)
    rho = spec.width_of(i)
    c = spec.core / rho

    def integrand(r):
        neg = max(spec.target - float(radial_scalar(r, spec, i)), 0.0)
        w = 1.0
        if volume == "member":
            w = math.exp(-n * a * float(profile(r / rho, spec.kind, spec.delta, c)))
        return neg**p * w * r ** (n - 1)

    breaks = [x for x in (spec.core, 0.5 * rho, rho) if 0 < x < radius]
    val, _ = integrate.quad(integrand, 0.0, radius, points=breaks or None, limit=400)
    return _sphere_area(n) * val


def predicted_weighted_sup(spec, i, radii):
    """Continuum sup over radii of r^(2-n-2 delta) int_{B_r} (sigma - R)_+."""
    n = spec.n
    vals = [
        r ** (2 - n - 2 * spec.delta) * predicted_negative_integral(spec, i, r, p=1.0)
        for r in radii
    ]
    k = int(np.argmax(vals))
    return float(vals[k]), float(radii[k])


def predicted_min_scalar(spec, i, samples=4001):
    rho = spec.width_of(i)
    r = np.linspace(0.0, rho, samples)
    return float(np.min(radial_scalar(r, spec, i)))


def lp_scaling_constant(spec):
    """c in the small-amplitude law int (R)_-^{n/2} ~ c a^{n/2} (Lp family, target 0)."""
    n = spec.n

    def integrand(s):
        lap = float(bump(s, 2)) + (n - 1) * float(bump(s, 1)) / s if s > 0 else n * float(bump(0.0, 2))
        return max(-2 * (n - 1) * lap, 0.0) ** (n / 2) * s ** (n - 1)

    val, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    return _sphere_area(n) * val


# ---------------------------------------------------------------------------
# metrics


def c0_distance(g1: MetricField, g2: MetricField):
    """(max operator norm of g1 - g2 measured against g2, bilipschitz factor)."""
    if g1.grid != g2.grid:
        raise ValueError("metrics live on different grids")
    lam = relative_eigenvalues(g1.full(), g2.full(), g1.grid.n)
    dist = float(np.max(np.abs(lam - 1.0)))
    bilip = float(max(lam.max(), 1.0 / lam.min()))
    return dist, bilip


def spike_member(spec: SpikeFamilySpec, i, with_certificate=True):
    """Member i of the family and its measured certificate."""
    grid = spec.grid
    rho = spec.width_of(i)
    a = spec.amplitude_of(i)
    if a > 0 and rho < 4 * grid.h:
        raise ResolutionError(f"spike width {rho:.4g} is below 4h = {4 * grid.h:.4g}")
    u = conformal_factor(spec, i, grid)
    g = MetricField.conformal(u)
    if not with_certificate:
        return g, None
    return g, certificate(spec, i, g)


def certificate(spec, i, g):
    from . import analysis

    grid = g.grid
    a = spec.amplitude_of(i)
    rho = spec.width_of(i)
    flat = MetricField.euclidean(grid)
    dist, bilip = c0_distance(g, flat)
    R = curvature(g, with_riemann=False).scalar
    x0 = grid.nearest_index(spec.x0)
    dflat = analysis.distance_field(flat, x0)
    cert = {
        "index": i,
        "amplitude": a,
        "width": rho,
        "c0_distance": dist,
        "c0_closed_form": 1.0 - math.exp(-2.0 * a),
        "bilipschitz": bilip,
        "min_R": float(R.values.min()),
        "min_R_predicted": predicted_min_scalar(spec, i) if a > 0 else 0.0,
        "under_resolved": bool(a > 0 and rho < 8 * grid.h),
    }
    if spec.kind == "Lp":
        measured = analysis.negative_part_norm(
            R, spec.target, spec.n / 2, flat, dflat, spec.ball_radius
        )
        predicted = predicted_negative_integral(spec, i, spec.ball_radius) if a > 0 else 0.0
        cert.update(
            functional="Lp",
            measured=measured,
            predicted=predicted,
            scaling_prediction=lp_scaling_constant(spec) * a ** (spec.n / 2),
        )
    else:
        radii = default_radii(spec, grid)
        measured = analysis.weighted_l1_sup(
            R, spec.target, spec.delta, flat, [x0], radii, distances=[dflat]
        )
        predicted = predicted_weighted_sup(spec, i, radii)[0] if a > 0 else 0.0
        cert.update(
            functional="weightedL1",
            measured=measured,
            predicted=predicted,
            scaling_prediction=a * rho ** (-2 * spec.delta),
        )
    cert["ratio"] = cert["measured"] / cert["predicted"] if cert["predicted"] > 0 else None
    return cert


def default_radii(spec, grid):
    """Radius scan for the weighted functional: 2h up to min(L/2, diam) - h."""
    r_max = min(grid.lengths) / 2 - grid.h
    return list(np.geomspace(2 * grid.h, r_max, 16))


@dataclass(frozen=True)
class GlueSpec:
    """phi g + (1 - phi) delta with phi = 1 inside ``inner``, 0 beyond ``outer``."""

    metric: MetricField
    center: tuple
    inner: float
    outer: float
    extra: dict = field(default_factory=dict)


def glue_cutoff(grid, center, inner, outer):
    r = grid.min_image_distance(np.asarray(center, dtype=float))
    x = np.clip((outer - r) / (outer - inner), 0.0, 1.0)
    return _smoothstep(x)


def glued_metric(spec: GlueSpec) -> MetricField:
    g = spec.metric
    grid = g.grid
    if not 0 < spec.inner < spec.outer < min(grid.lengths) / 2:
        raise ValueError("need 0 < inner < outer < L/2")
    if g.lambda_min <= 0:
        raise GeometryError("inner metric is not positive definite")
    phi = glue_cutoff(grid, spec.center, spec.inner, spec.outer)
    flat = MetricField.euclidean(grid).values
    vals = phi * g.values + (1.0 - phi) * flat
    return MetricField(SymTensorField(grid, vals))


def family_members(spec: SpikeFamilySpec, with_certificate=True):
    for i in spec.indices:
        yield (i,) + spike_member(spec, i, with_certificate)


__all__ = [
    "SpikeFamilySpec",
    "GlueSpec",
    "bump",
    "profile",
    "spike_member",
    "glued_metric",
    "c0_distance",
    "conformal_factor",
    "predicted_negative_integral",
    "predicted_weighted_sup",
    "predicted_min_scalar",
    "lp_scaling_constant",
    "default_radii",
]
