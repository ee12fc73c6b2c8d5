import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ricci_lab.curvature import curvature
from ricci_lab.errors import FlowDegeneracyError, GeometryError
from ricci_lab.flow import (
    Background,
    FlowParams,
    Tracker,
    advect_diffeo,
    deturck_rhs,
    deturck_rhs_fast,
    deturck_vector,
    packed_derivatives,
    packed_derivatives_fast,
    initial_state,
    patch_sources,
    pullback_metric,
    pullback_scalar,
    run,
    sample_periodic,
    stable_dt,
    step,
)
from ricci_lab.grid import MetricField, PeriodicGrid, ScalarField, SymTensorField


def conformal_metric(N=16, eps=0.05, L=1.0):
    grid = PeriodicGrid.cubic(3, N, L)
    x, y, _ = grid.coords()
    u = eps * (np.sin(2 * np.pi * x / L) + 0.5 * np.cos(2 * np.pi * y / L))
    return ScalarField(grid, u), MetricField.conformal(ScalarField(grid, u))


def wavy_background(grid, eps=0.05):
    x = grid.coords()[2]
    vals = np.zeros((6,) + grid.shape)
    vals[0] = vals[3] = 1.0
    vals[5] = 1.0 + eps * np.sin(2 * np.pi * x / grid.lengths[2])
    vals[1] = 0.5 * eps * np.cos(2 * np.pi * x / grid.lengths[2])
    return MetricField.from_values(grid, vals)


def test_params_validation():
    with pytest.raises(ValueError):
        FlowParams(t_end=0.1, cfl_safety=0.0)
    with pytest.raises(ValueError):
        FlowParams(t_end=0.1, cfl_safety=1.5)
    with pytest.raises(ValueError):
        FlowParams(t_end=0.0)
    with pytest.raises(ValueError):
        FlowParams(t_end=0.1, integrator="euler")
    with pytest.raises(ValueError):
        FlowParams(t_end=0.1, kernel="gpu")


def test_deturck_vector_trivial_cases():
    u, g = conformal_metric()
    assert np.abs(deturck_vector(g, g).values).max() < 1e-12
    grid = g.grid
    for c in (1.0, 3.0):
        W = deturck_vector(MetricField.euclidean(grid, c), MetricField.euclidean(grid))
        assert np.abs(W.values).max() < 1e-14
    with pytest.raises(ValueError):
        deturck_vector(g, MetricField.euclidean(PeriodicGrid.cubic(3, 8, 1.0)))


def test_deturck_vector_conformal_closed_form():
    # Gamma^k_pq = d^k_p u_q + d^k_q u_p - d_pq u_k, so W^k = (2 - n) e^{-2u} u_k
    N, eps = 48, 0.05
    grid = PeriodicGrid.cubic(3, N, 1.0)
    x, y, _ = grid.coords()
    u = eps * (np.sin(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * y))
    du = [eps * 2 * np.pi * np.cos(2 * np.pi * x), -eps * np.pi * np.sin(2 * np.pi * y), 0 * x]
    g = MetricField.conformal(ScalarField(grid, u))
    W = deturck_vector(g, MetricField.euclidean(grid)).values
    expected = np.stack([-np.exp(-2 * u) * d for d in du])
    assert np.abs(W - expected).max() < 1e-5


@pytest.mark.parametrize("curved_background", [False, True])
def test_fused_kernel_matches_einsum(curved_background):
    u, g = conformal_metric(12, eps=0.2)
    h = wavy_background(g.grid) if curved_background else MetricField.euclidean(g.grid)
    bg = Background(h)
    assert bg.flat != curved_background
    r1, w1, _ = deturck_rhs(g.values, g.grid.spacing, bg)
    r2, w2, R2 = deturck_rhs_fast(g.values, g.grid.spacing, bg)
    scale = np.abs(r1).max()
    assert np.abs(r1 - r2).max() <= 1e-12 * scale
    assert np.abs(w1 - w2).max() <= 1e-12 * max(np.abs(w1).max(), 1.0)
    R = curvature(g, with_riemann=False).scalar.values
    assert np.abs(R - R2).max() <= 1e-12 * np.abs(R).max()


@pytest.mark.parametrize("stencil", [2, 4])
def test_compiled_derivatives_match_stencils(stencil):
    grid = PeriodicGrid((10, 12, 14), (1.0, 1.3, 0.9))
    rng = np.random.default_rng(3)
    packed = rng.standard_normal((6,) + grid.shape)
    d1r, d2r = packed_derivatives(packed, grid.spacing, stencil)
    d1f, d2f = packed_derivatives_fast(packed, grid.spacing, stencil)
    d1f, d2f = d1f.reshape(d1r.shape), d2f.reshape(d2r.shape)
    assert np.abs(d1r - d1f).max() <= 1e-12 * np.abs(d1r).max()
    assert np.abs(d2r - d2f).max() <= 1e-12 * np.abs(d2r).max()


def test_rhs_is_minus_twice_ricci_when_w_vanishes():
    # for g = h the DeTurck terms cancel up to the mismatch between the two
    # derivative routes (compact d2 for g, d1 of a discrete Gamma for h)
    errs = []
    for N in (16, 32):
        _, g = conformal_metric(N, eps=0.1)
        rhs, w_up, _ = deturck_rhs(g.values, g.grid.spacing, Background(g))
        ric = curvature(g, with_riemann=False).ricci.values
        assert np.abs(w_up).max() < 1e-12
        errs.append(np.abs(rhs + 2 * ric).max() / np.abs(ric).max())
    assert errs[1] < 2e-4
    assert errs[0] / errs[1] > 12


@pytest.mark.parametrize("c", [1.0, 2.0])
def test_constant_metrics_are_stationary(c):
    grid = PeriodicGrid.cubic(3, 12, 1.0)
    g0 = MetricField.euclidean(grid, c)
    params = FlowParams(t_end=1.0, cfl_safety=0.4)
    state = initial_state(g0, MetricField.euclidean(grid))
    dt = stable_dt(state.g_values, grid, 0.4)
    for _ in range(100):
        state = step(state, dt, params)
    assert np.abs(state.g_values - g0.values).max() < 1e-12
    assert state.t == pytest.approx(100 * dt)


def test_step_rejects_cfl_violation():
    _, g = conformal_metric()
    params = FlowParams(t_end=1.0, cfl_safety=0.4)
    state = initial_state(g, MetricField.euclidean(g.grid))
    dt = stable_dt(state.g_values, g.grid, 0.4)
    with pytest.raises(ValueError):
        step(state, 3 * dt, params)
    with pytest.raises(ValueError):
        step(state, -dt, params)


def test_unstable_step_reports_degeneracy():
    _, g = conformal_metric(16, eps=0.3)
    params = FlowParams(t_end=1.0)
    state = initial_state(g, MetricField.euclidean(g.grid))
    dt = stable_dt(state.g_values, g.grid, 1.0)
    with pytest.raises(FlowDegeneracyError) as exc:
        for _ in range(200):
            state = step(state, 40 * dt, params, check_cfl=False)
    assert exc.value.t is not None


def test_run_rejects_large_bilipschitz():
    _, g = conformal_metric(16, eps=0.5)
    with pytest.raises(GeometryError):
        run(g, MetricField.euclidean(g.grid), FlowParams(t_end=0.01, bilipschitz_bound=1.5))


def test_tracker_fixed_when_w_vanishes():
    grid = PeriodicGrid.cubic(3, 16, 1.0)
    pts = np.random.default_rng(0).uniform(0, 1, size=(20, 3))
    tr = advect_diffeo(Tracker.identity(pts), grid, np.zeros((3,) + grid.shape), 0.1)
    assert np.array_equal(tr.positions, pts)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.sampled_from(["rk2", "rk4"]),
       st.sampled_from([1, 3]))
def test_tracker_constant_velocity(w, integrator, order):
    grid = PeriodicGrid.cubic(3, 16, 1.0)
    w = np.asarray(w)
    field = np.broadcast_to(w[:, None, None, None], (3,) + grid.shape).copy()
    pts = np.random.default_rng(1).uniform(0, 1, size=(10, 3))
    tr = Tracker.identity(pts)
    for _ in range(10):
        tr = advect_diffeo(tr, grid, field, 0.05, integrator, order)
    expected = grid.wrap_position(pts - 0.5 * w)
    d = grid.displacement(expected, tr.positions)
    assert np.abs(d).max() < 1e-12
    assert np.all((tr.positions >= 0) & (tr.positions < 1.0))


def test_sample_periodic_reproduces_grid_values():
    _, g = conformal_metric(12)
    grid = g.grid
    idx = np.array([[0, 0, 0], [3, 11, 5], [11, 11, 11]])
    pts = idx * grid.h
    vals = sample_periodic(g.values, pts, grid, 3)
    for k, i in enumerate(idx):
        assert np.allclose(vals[:, k], g.values[(slice(None),) + tuple(i)], atol=1e-12)


@pytest.fixture(scope="module")
def small_flow():
    u, g = conformal_metric(16, eps=0.08)
    grid = g.grid
    probe = np.array([0.5, 0.5, 0.5])
    pts = patch_sources(grid, [probe], radius=4)
    params = FlowParams(t_end=0.004, cfl_safety=0.4, monitor_every=5)
    traj = run(g, MetricField.euclidean(grid), params, schedule=[0.001, 0.002], tracker_points=pts)
    return g, traj, probe


def test_trajectory_times_increase_and_snapshots_consistent(small_flow):
    g, traj, _ = small_flow
    t = traj.times
    assert t[0] == 0 and np.all(np.diff(t) > 0)
    assert {0.001, 0.002, 0.004} <= set(np.round(t, 12))
    for k in (0, len(t) - 1):
        R = curvature(traj.metric(k), with_riemann=False).scalar.values
        assert np.abs(R - traj.snapshots[k].scalar).max() < 1e-10
        assert traj.snapshots[k].monitors["R_min"] == pytest.approx(R.min())


def test_pullback_identity_at_time_zero(small_flow):
    g, traj, probe = small_flow
    G = pullback_metric(traj, 0, [probe])[0]
    i = g.grid.nearest_index(probe)
    assert np.allclose(G, g.full()[(slice(None), slice(None)) + i], atol=1e-12)


def test_scalar_invariance_under_pullback(small_flow):
    g, traj, probe = small_flow
    k = len(traj.snapshots) - 1
    snap = traj.snapshots[k]
    r_hat = pullback_scalar(traj, k, probe)
    x = snap.positions[traj.source_index(probe)]
    r_there = float(sample_periodic(snap.scalar[None], x[None], traj.grid, 3)[0, 0])
    assert abs(r_hat - r_there) <= 0.02 * np.abs(snap.scalar).max()


def test_pullback_rejects_untracked_probe(small_flow):
    _, traj, _ = small_flow
    with pytest.raises(ValueError):
        pullback_metric(traj, 1, [[0.1, 0.1, 0.1]])


def test_small_perturbation_stays_close_to_flat():
    grid = PeriodicGrid.cubic(3, 16, 1.0)
    x = grid.coords()[0]
    g = MetricField.conformal(ScalarField(grid, 0.01 * np.sin(2 * np.pi * x)))
    traj = run(g, MetricField.euclidean(grid), FlowParams(t_end=0.005, cfl_safety=0.4))
    assert max(s.monitors["bilipschitz"] for s in traj.snapshots) <= 1.1
    assert traj.fitted.A_deriv > 0


def test_flat_run_has_zero_constants():
    grid = PeriodicGrid.cubic(3, 12, 1.0)
    traj = run(MetricField.euclidean(grid), MetricField.euclidean(grid), FlowParams(t_end=0.005))
    assert traj.fitted.A_deriv == 0
    assert traj.fitted.A_rm == 0


def test_volume_form_evolution():
    # d/dt log sqrt(det g) = 1/2 g^ij d_t g_ij, residual of one step is O(dt^2)
    _, g = conformal_metric(16, eps=0.1)
    grid = g.grid
    h = MetricField.euclidean(grid)
    params = FlowParams(t_end=1.0, cfl_safety=0.4)
    state = initial_state(g, h)
    rhs, _, _ = deturck_rhs(g.values, grid.spacing, state.background)
    rate = 0.5 * np.einsum("ij...,ij...->...", g.inverse_full(), SymTensorField(grid, rhs).full())
    dt0 = stable_dt(g.values, grid, 0.4)
    res = []
    for dt in (dt0, dt0 / 2):
        new = step(state, dt, params)
        change = np.log(MetricField.from_values(grid, new.g_values).volume_density() / g.volume_density())
        res.append(np.abs(change - dt * rate).max())
    assert 3.0 <= res[0] / res[1] <= 5.0


def test_time_step_convergence_order():
    _, g = conformal_metric(12, eps=0.1)
    grid = g.grid
    h = MetricField.euclidean(grid)
    T = 0.001
    finals = []
    for k in (1, 2, 4):
        params = FlowParams(t_end=T, cfl_safety=1.0)
        state = initial_state(g, h)
        nsteps = 8 * k
        for _ in range(nsteps):
            state = step(state, T / nsteps, params)
        finals.append(state.g_values)
    e1 = np.abs(finals[0] - finals[1]).max()
    e2 = np.abs(finals[1] - finals[2]).max()
    p = math.log2(e1 / e2)
    assert abs(p - 2) <= 1


def test_displacement_constant_fitted(small_flow):
    _, traj, _ = small_flow
    c = traj.fitted.displacement
    assert c is not None and c >= 0
    for s in traj.snapshots[1:]:
        d = np.linalg.norm(traj.grid.displacement(traj.sources, s.positions), axis=1)
        if s.t >= 4 * traj.dt_initial:
            assert d.max() <= c * math.sqrt(s.t) * (1 + 1e-12)
