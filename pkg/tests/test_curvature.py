import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ricci_lab.curvature import (
    christoffel,
    conformal_scalar_oracle,
    curvature,
    scalar_curvature,
    symmetry_residuals,
)
from ricci_lab.errors import GeometryError
from ricci_lab.grid import MetricField, PeriodicGrid, ScalarField, SymTensorField


def conformal(N, eps=0.01, L=1.0, n=3):
    grid = PeriodicGrid.cubic(n, N, L)
    x = grid.coords()[0]
    u = ScalarField(grid, eps * np.sin(2 * np.pi * x / L))
    return grid, u, MetricField.conformal(u)


def smooth_metric(N=16, seed=0, amp=0.1):
    """Random low-mode perturbation of the identity on the unit 3-torus."""
    rng = np.random.default_rng(seed)
    grid = PeriodicGrid.cubic(3, N, 1.0)
    X = grid.coords()
    full = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        for j in range(i, 3):
            k = rng.integers(1, 3, size=3)
            ph = rng.uniform(0, 2 * np.pi)
            v = amp * rng.uniform(-1, 1) * np.sin(2 * np.pi * sum(kk * x for kk, x in zip(k, X)) + ph)
            full[i, j] = full[j, i] = v + (1.0 if i == j else 0.0)
    return MetricField(SymTensorField.from_full(grid, full))


def test_flat_and_scaled_metrics_have_no_curvature():
    grid = PeriodicGrid.cubic(3, 12)
    for c in (1.0, 2.5):
        g = MetricField.euclidean(grid, c)
        b = curvature(g)
        # paired stencils differentiate constants to exactly zero
        assert np.abs(christoffel(g).values).max() == 0
        assert np.abs(b.riemann).max() == 0
        assert np.abs(b.ricci.values).max() == 0
        assert np.abs(b.scalar.values).max() == 0


def test_christoffel_diagonal_oracle():
    errs = []
    for N in (32, 64):
        grid = PeriodicGrid.cubic(3, N, 1.0)
        x = grid.coords()[0]
        u = 0.05 * np.sin(2 * np.pi * x)
        du = 0.05 * 2 * np.pi * np.cos(2 * np.pi * x)
        vals = np.zeros((6,) + grid.shape)
        vals[0] = np.exp(2 * u)
        vals[3] = vals[5] = 1.0
        gam = christoffel(MetricField.from_values(grid, vals)).full()
        expected = np.zeros_like(gam)
        expected[0, 0, 0] = du
        assert np.array_equal(gam, np.swapaxes(gam, 1, 2))
        errs.append(np.abs(gam - expected).max())
    assert errs[0] < 1e-4 * np.abs(du).max()
    assert errs[0] / errs[1] > 12


def test_conformal_scalar_value_at_quarter():
    grid, u, g = conformal(48)
    R = scalar_curvature(g).values
    i = grid.nearest_index((0.25, 0, 0))
    expected = np.exp(-0.02) * 16 * np.pi**2 * 0.01
    assert expected == pytest.approx(1.548, abs=1e-3)
    assert R[i] == pytest.approx(expected, rel=1e-5)


def test_oracle_formula_matches_symbolic_value():
    grid, u, _ = conformal(64)
    x = grid.coords()[0]
    s, c = np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)
    eps = 0.01
    exact = np.exp(-2 * eps * s) * (16 * np.pi**2 * eps * s - 8 * np.pi**2 * eps**2 * c**2)
    O = conformal_scalar_oracle(u).values
    assert np.abs(O - exact).max() < 1e-5 * np.abs(exact).max()


def test_oracle_trivial_cases():
    grid = PeriodicGrid.cubic(3, 8)
    for c in (0.0, 0.3):
        assert np.abs(conformal_scalar_oracle(ScalarField(grid, np.full(grid.shape, c))).values).max() < 1e-12
    with pytest.raises(ValueError):
        conformal_scalar_oracle(ScalarField(grid, np.zeros(grid.shape)), n=2)


@pytest.mark.parametrize("order,min_ratio", [(2, 3.5), (4, 12.0)])
def test_scalar_convergence_order(order, min_ratio):
    errs = []
    for N in (24, 48):
        _, u, g = conformal(N)
        R = curvature(g, order=order, with_riemann=False).scalar.values
        O = conformal_scalar_oracle(u, order=order).values
        errs.append(np.abs(R - O).max())
    assert errs[0] / errs[1] >= min_ratio


def test_pipeline_identities():
    g = smooth_metric()
    b = curvature(g)
    ginv = g.inverse_full()
    ric_from_rm = np.einsum("ac...,abcd...->bd...", ginv, b.riemann)
    assert np.abs(ric_from_rm - b.ricci.full()).max() < 1e-10
    assert np.array_equal(b.scalar.values, np.einsum("ij...,ij...->...", ginv, b.ricci.full()))


def test_riemann_symmetries_converge():
    res = [symmetry_residuals(curvature(smooth_metric(N)).riemann) for N in (16, 32)]
    assert res[0]["antisym_ij"] < 1e-12 and res[0]["antisym_kl"] < 1e-12
    for key in ("pair_swap", "bianchi"):
        # off-diagonal second derivatives are composed, so these are FD residuals
        assert res[1][key] < res[0][key] / 8 or res[1][key] < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_bianchi_small_for_random_smooth_metrics(seed):
    b = curvature(smooth_metric(24, seed))
    r = symmetry_residuals(b.riemann)
    scale = np.abs(b.riemann).max()
    assert r["bianchi"] <= 1e-2 * max(scale, 1.0)


def test_rm_norm_nonnegative():
    b = curvature(smooth_metric(16, 3))
    assert b.rm_norm.values.min() >= 0


def test_christoffel_rejects_indefinite_metric():
    grid = PeriodicGrid.cubic(3, 8)
    vals = np.zeros((6,) + grid.shape)
    vals[0] = vals[3] = vals[5] = 1.0
    vals[1] = 2.0
    with pytest.raises(GeometryError):
        christoffel(MetricField.from_values(grid, vals))
