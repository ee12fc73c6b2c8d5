"""Periodic grids, tensor fields and finite-difference stencils on flat tori.

Field values are stored component-first: a scalar field is an array of the
grid shape, a vector field has shape ``(n, *shape)`` and a symmetric 2-tensor
is packed as its upper triangle, shape ``(n(n+1)/2, *shape)``, row-major over
``i <= j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GeometryError

PD_TOLERANCE = 1e-8
INVERSE_TOLERANCE = 1e-12


@lru_cache(maxsize=None)
def sym_pairs(n):
    """Packed index order for symmetric n x n tensors."""
    return tuple((i, j) for i in range(n) for j in range(i, n))


@lru_cache(maxsize=None)
def sym_index(n):
    """n x n table mapping (i, j) to its packed component."""
    table = np.zeros((n, n), dtype=np.intp)
    for k, (i, j) in enumerate(sym_pairs(n)):
        table[i, j] = table[j, i] = k
    return table


def unpack_sym(packed, n):
    """(npack, ...) -> (n, n, ...) full symmetric array (a copy)."""
    return packed[sym_index(n)]


def pack_sym(full, n):
    """(n, n, ...) -> (npack, ...), reading the upper triangle."""
    return np.stack([full[i, j] for i, j in sym_pairs(n)])


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the flat torus prod_a [0, L_a)."""

    shape: tuple
    lengths: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        lengths = tuple(float(x) for x in self.lengths)
        if len(shape) < 2:
            raise ValueError("grid dimension must be at least 2")
        if len(lengths) != len(shape):
            raise ValueError("need one side length per axis")
        if min(shape) < 8:
            raise ValueError(f"need at least 8 points per axis, got {shape}")
        if min(lengths) <= 0:
            raise ValueError("side lengths must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def cubic(cls, n, N, L=4.0):
        return cls((N,) * n, (L,) * n)

    @property
    def n(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(L / N for L, N in zip(self.lengths, self.shape))

    @property
    def h(self):
        """Largest spacing; the scale used in CFL and resolution checks."""
        return max(self.spacing)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis_coords(self, axis):
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def coords(self):
        """Coordinate arrays, one per axis, each of the grid shape."""
        return np.meshgrid(*[self.axis_coords(a) for a in range(self.n)], indexing="ij")

    def point(self, index):
        """Physical position of a grid index (wrapped)."""
        index = self.wrap_index(index)
        return np.array([i * s for i, s in zip(index, self.spacing)])

    def wrap_index(self, index):
        if len(index) != self.n:
            raise ValueError(f"index {index} does not match dimension {self.n}")
        return tuple(int(i) % N for i, N in zip(index, self.shape))

    def nearest_index(self, x):
        x = np.asarray(x, dtype=float)
        return tuple(int(round(xi / s)) % N for xi, s, N in zip(x, self.spacing, self.shape))

    def wrap_position(self, x):
        L = np.asarray(self.lengths)
        return np.mod(x, L)

    def displacement(self, x, y):
        """Minimum-image vector y - x on the torus (last axis = components)."""
        L = np.asarray(self.lengths)
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - L * np.round(d / L)

    def min_image_distance(self, x0):
        """Euclidean torus distance from the point x0 to every grid point."""
        d2 = np.zeros(self.shape)
        for a, c in enumerate(self.coords()):
            d = c - x0[a]
            d -= self.lengths[a] * np.round(d / self.lengths[a])
            d2 += d * d
        return np.sqrt(d2)


# ---------------------------------------------------------------------------
# stencils

_D1 = {2: (np.array([-0.5, 0.0, 0.5]), 1), 4: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, 2)}
_D2 = {
    2: (np.array([1.0, -2.0, 1.0]), 1),
    4: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, 2),
}


def _apply_stencil(arr, axis, weights, half, scale):
    """Central stencil with periodic wrap.

    Terms are paired about the centre, w_k (f[+k] - f[-k]) for odd stencils and
    w_k (f[+k] + f[-k] - 2 f[0]) for even ones, so constants differentiate to
    exactly zero.
    """
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (half, half)
    p = np.pad(arr, pad, mode="wrap")
    n = arr.shape[axis]

    def shifted(k):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(half + k, half + k + n)
        return p[tuple(sl)]

    odd = np.allclose(weights, -weights[::-1])
    out = np.zeros(arr.shape)
    for k in range(1, half + 1):
        w = weights[half + k]
        if odd:
            out += w * (shifted(k) - shifted(-k))
        else:
            out += w * ((shifted(k) - arr) + (shifted(-k) - arr))
    return out * scale


def d1(arr, axis, h, order=4, ndim=None):
    """First derivative along grid axis ``axis`` of the trailing ``ndim`` axes."""
    ndim = arr.ndim if ndim is None else ndim
    weights, half = _D1[order]
    return _apply_stencil(arr, arr.ndim - ndim + axis, weights, half, 1.0 / h)


def d2(arr, axis, h, order=4, ndim=None):
    """Compact second derivative along one axis."""
    ndim = arr.ndim if ndim is None else ndim
    weights, half = _D2[order]
    return _apply_stencil(arr, arr.ndim - ndim + axis, weights, half, 1.0 / (h * h))


def dab(arr, a, b, spacing, order=4, ndim=None, first=None):
    """Second derivative d_a d_b: compact stencil on the diagonal, composed
    first derivatives off it. ``first`` may hold d_a(arr) already computed."""
    if a == b:
        return d2(arr, a, spacing[a], order, ndim)
    if first is None:
        first = d1(arr, a, spacing[a], order, ndim)
    return d1(first, b, spacing[b], order, ndim)


def _check_order(order):
    if order not in _D1:
        raise ValueError(f"stencil order must be 2 or 4, got {order}")


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class _Field:
    grid: PeriodicGrid
    values: np.ndarray

    rank = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = self._component_shape() + self.grid.shape
        if v.shape != expected:
            raise ValueError(f"{type(self).__name__} expects shape {expected}, got {v.shape}")
        object.__setattr__(self, "values", v)

    def _component_shape(self):
        return ()

    @property
    def n_components(self):
        return int(np.prod(self._component_shape(), dtype=int))

    def with_values(self, values):
        return type(self)(self.grid, values)


class ScalarField(_Field):
    pass


class VectorField(_Field):
    def _component_shape(self):
        return (self.grid.n,)


class SymTensorField(_Field):
    def _component_shape(self):
        n = self.grid.n
        return (n * (n + 1) // 2,)

    def full(self):
        return unpack_sym(self.values, self.grid.n)

    @classmethod
    def from_full(cls, grid, full):
        return cls(grid, pack_sym(np.asarray(full, dtype=float), grid.n))

    def component(self, i, j):
        return self.values[sym_index(self.grid.n)[i, j]]


class ChristoffelField(_Field):
    """Gamma^k_ij stored as (k, packed ij)."""

    def _component_shape(self):
        n = self.grid.n
        return (n, n * (n + 1) // 2)

    def full(self):
        n = self.grid.n
        return self.values[:, sym_index(n)]

    @classmethod
    def from_full(cls, grid, full):
        n = grid.n
        return cls(grid, np.stack([pack_sym(full[k], n) for k in range(n)]))


def flat_metric_values(grid, scale=1.0):
    n = grid.n
    vals = np.zeros((n * (n + 1) // 2,) + grid.shape)
    for k, (i, j) in enumerate(sym_pairs(n)):
        if i == j:
            vals[k] = scale
    return vals


def batched(full, n):
    """(n, n, *shape) -> (P, n, n) view-friendly copy for linear algebra."""
    return np.moveaxis(full.reshape(n, n, -1), -1, 0)


def unbatched(mats, n, shape):
    return np.moveaxis(mats, 0, -1).reshape((n, n) + shape)


def metric_eigenvalues(full, n):
    """Eigenvalues per point, shape (P, n), ascending."""
    return np.linalg.eigvalsh(batched(full, n))


def check_positive_definite(packed, grid, context="metric", tol=PD_TOLERANCE):
    """Return per-point eigenvalues; raise GeometryError naming the worst point."""
    n = grid.n
    full = unpack_sym(packed, n)
    if not np.all(np.isfinite(full)):
        bad = np.argwhere(~np.isfinite(full.reshape(-1, *grid.shape).sum(axis=0)))
        point = tuple(int(i) for i in bad[0]) if len(bad) else None
        raise GeometryError(f"{context} has non-finite entries at {point}", point=point)
    eig = metric_eigenvalues(full, n)
    lam_min = eig[:, 0]
    worst = int(np.argmin(lam_min))
    if lam_min[worst] <= tol:
        point = tuple(int(i) for i in np.unravel_index(worst, grid.shape))
        raise GeometryError(
            f"{context} is not positive definite at grid point {point} "
            f"(min eigenvalue {lam_min[worst]:.3e})",
            point=point,
            min_eigenvalue=float(lam_min[worst]),
        )
    return eig


class MetricField:
    """Positive-definite symmetric 2-tensor on a periodic grid.

    Construction validates positive-definiteness, caches the inverse and
    sqrt(det g), and records the bilipschitz factor relative to the Euclidean
    metric: the smallest Lambda with Lambda^-1 delta <= g <= Lambda delta.
    """

    def __init__(self, base, check_inverse=True):
        if not isinstance(base, SymTensorField):
            raise TypeError("MetricField wraps a SymTensorField")
        self.base = base
        grid = base.grid
        n = grid.n
        eig = check_positive_definite(base.values, grid)
        self.lambda_min = float(eig[:, 0].min())
        self.lambda_max = float(eig[:, -1].max())
        self.bilipschitz = max(self.lambda_max, 1.0 / self.lambda_min)
        full = base.full()
        mats = batched(full, n)
        inv = np.linalg.inv(mats)
        inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
        if check_inverse:
            resid = np.abs(mats @ inv - np.eye(n)).max()
            if resid > INVERSE_TOLERANCE * max(1.0, self.bilipschitz):
                raise GeometryError(f"inverse residual {resid:.2e} exceeds tolerance")
        self.cached_inverse = SymTensorField.from_full(grid, unbatched(inv, n, grid.shape))
        det = np.linalg.det(mats).reshape(grid.shape)
        self.cached_sqrt_det = ScalarField(grid, np.sqrt(det))

    @classmethod
    def from_values(cls, grid, values):
        return cls(SymTensorField(grid, values))

    @classmethod
    def euclidean(cls, grid, scale=1.0):
        return cls(SymTensorField(grid, flat_metric_values(grid, scale)))

    @classmethod
    def conformal(cls, u):
        """e^{2u} times the Euclidean metric."""
        grid = u.grid
        n = grid.n
        vals = np.zeros((n * (n + 1) // 2,) + grid.shape)
        factor = np.exp(2.0 * u.values)
        for k, (i, j) in enumerate(sym_pairs(n)):
            if i == j:
                vals[k] = factor
        return cls(SymTensorField(grid, vals))

    @property
    def grid(self):
        return self.base.grid

    @property
    def values(self):
        return self.base.values

    def full(self):
        return self.base.full()

    def inverse_full(self):
        return self.cached_inverse.full()

    def volume_density(self):
        return self.cached_sqrt_det.values

    def bilipschitz_relative(self, other):
        """Bilipschitz factor of self relative to ``other`` (max over points)."""
        lam = relative_eigenvalues(self.full(), other.full(), self.grid.n)
        return float(max(lam.max(), 1.0 / lam.min()))


def relative_eigenvalues(g1_full, g2_full, n):
    """Generalized eigenvalues of g1 against g2 per point, shape (P, n)."""
    a = batched(g1_full, n)
    b = batched(g2_full, n)
    chol = np.linalg.cholesky(b)
    cinv = np.linalg.inv(chol)
    m = cinv @ a @ np.swapaxes(cinv, 1, 2)
    return np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, 1, 2)))


def central_derivative(f, axis, order=1, stencil=4):
    """Derivative of a field along one axis (``order`` 1 or 2).

    Uses a central stencil of accuracy ``stencil`` (4 by default, 2 as a
    fallback) with periodic wraparound. Returns a field of the same kind whose
    values are d_axis (or d_axis^2) of every component.
    """
    grid = f.grid
    if not 0 <= axis < grid.n:
        raise ValueError(f"axis {axis} out of range for dimension {grid.n}")
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    _check_order(stencil)
    h = grid.spacing[axis]
    op = d1 if order == 1 else d2
    vals = op(f.values, axis, h, stencil, ndim=grid.n)
    if isinstance(f, MetricField):
        return SymTensorField(grid, vals)
    return type(f)(grid, vals)


# ---------------------------------------------------------------------------
# serialization

_INT = np.dtype("<i8")
_FLOAT = np.dtype("<f8")


def field_components(f):
    """(ncomp, P) view of a field's values in packed component order."""
    vals = f.values
    ncomp = f.n_components if not isinstance(f, MetricField) else vals.shape[0]
    return vals.reshape(ncomp, -1)


def write_field(path, f):
    """Write a field in the flat binary layout.

    Header (little-endian): int64 n; int64 N_a for each axis; float64 L_a for
    each axis; int64 component count. Body: float64 values, points in
    row-major (C) order over the axes, the components of one point contiguous.
    """
    grid = f.grid
    comps = field_components(f)
    with open(path, "wb") as fh:
        fh.write(np.array([grid.n, *grid.shape], dtype=_INT).tobytes())
        fh.write(np.array(grid.lengths, dtype=_FLOAT).tobytes())
        fh.write(np.array([comps.shape[0]], dtype=_INT).tobytes())
        fh.write(np.ascontiguousarray(comps.T, dtype=_FLOAT).tobytes())


def read_field_raw(path):
    """Return (grid, values) with values shaped (ncomp, *shape)."""
    with open(path, "rb") as fh:
        n = int(np.frombuffer(fh.read(8), dtype=_INT)[0])
        shape = tuple(int(x) for x in np.frombuffer(fh.read(8 * n), dtype=_INT))
        lengths = tuple(float(x) for x in np.frombuffer(fh.read(8 * n), dtype=_FLOAT))
        ncomp = int(np.frombuffer(fh.read(8), dtype=_INT)[0])
        body = np.frombuffer(fh.read(), dtype=_FLOAT)
    grid = PeriodicGrid(shape, lengths)
    if body.size != ncomp * grid.size:
        raise ValueError(f"{path}: expected {ncomp * grid.size} values, found {body.size}")
    return grid, body.reshape(grid.size, ncomp).T.reshape((ncomp,) + shape).copy()


def read_field(path, kind=None):
    """Read a field; ``kind`` picks the class, inferred from the count if None."""
    grid, vals = read_field_raw(path)
    n = grid.n
    ncomp = vals.shape[0]
    if kind is None:
        kind = {1: ScalarField, n: VectorField, n * (n + 1) // 2: SymTensorField}.get(ncomp)
        if n == 1 or kind is None:
            raise ValueError(f"cannot infer field kind for {ncomp} components")
    if kind is ScalarField:
        return ScalarField(grid, vals[0])
    if kind is MetricField:
        return MetricField(SymTensorField(grid, vals))
    if kind is ChristoffelField:
        return ChristoffelField(grid, vals.reshape((n, n * (n + 1) // 2) + grid.shape))
    return kind(grid, vals)


def write_field_csv(path, f, max_points=100_000):
    """CSV dump: index columns, coordinate columns, then components."""
    grid = f.grid
    if grid.size > max_points:
        raise ValueError(f"grid has {grid.size} points; CSV export is for small grids")
    comps = field_components(f)
    idx = np.indices(grid.shape).reshape(grid.n, -1)
    header = [f"i{a}" for a in range(grid.n)] + [f"x{a}" for a in range(grid.n)]
    header += [f"c{k}" for k in range(comps.shape[0])]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for p in range(grid.size):
            ii = idx[:, p]
            xs = [repr(float(i * s)) for i, s in zip(ii, grid.spacing)]
            cs = [repr(float(c)) for c in comps[:, p]]
            fh.write(",".join([str(int(i)) for i in ii] + xs + cs) + "\n")


__all__ = [
    "PeriodicGrid",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "ChristoffelField",
    "MetricField",
    "central_derivative",
    "write_field",
    "read_field",
    "write_field_csv",
    "sym_pairs",
    "sym_index",
]
