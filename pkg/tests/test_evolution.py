import math

import numpy as np
import pytest

from helpers import BOUNDARY_KINDS, SYSTEMS, make_grid, make_scenario, random_control, stable_grid
from tpwave.analytic import constant_profile, error_norms, traveling_wave_1d
from tpwave.evolution import (PEC, DirichletTrace, FirstOrderABC, InstabilityError, LeapfrogState,
                              TimeGrid, build_scenario, cfl_max_dt, conserved_energy, energy_of,
                              period_map, period_map_adjoint, smooth_ramp, solve_hacp_minus,
                              solve_hacp_plus, solve_hcp, solve_icp)
from tpwave.oracle import DenseGenerator, expm_apply
from tpwave.wavestate import DofLayout, FieldState, MaterialField, inner_h, norm_h


def test_cfl_examples():
    g1 = make_grid(1, "acoustic", 10)
    m1 = MaterialField.uniform(DofLayout(g1))
    assert cfl_max_dt(g1, m1) == pytest.approx(0.09, rel=1e-14)
    g2 = make_grid(2, "acoustic", 10)
    m2 = MaterialField.uniform(DofLayout(g2))
    assert cfl_max_dt(g2, m2) == pytest.approx(0.9 * 0.1 / math.sqrt(2), rel=1e-14)
    assert cfl_max_dt(g2, m2) == pytest.approx(0.06364, abs=1e-5)


def _energy_growth(scenario, dt, periods, rng):
    # homogeneous PEC cavity, time span of `periods` cavity periods
    u = random_control(scenario, rng)
    e0 = norm_h(u, scenario.ctx.weights)
    span = TimeGrid(periods * dt * round(1.0 / dt), periods * round(1.0 / dt))
    try:
        out = period_map(u, scenario, span)
    except InstabilityError:
        return math.inf
    return norm_h(out, scenario.ctx.weights) / e0


def test_stepping_beyond_cfl_limit_blows_up(rng):
    sc = make_scenario(2, "acoustic", 12, "pec")
    limit = cfl_max_dt(sc.layout.grid, sc.ctx.material, 1.0)
    assert _energy_growth(sc, 1.05 * limit, 50, rng) > 10.0
    assert _energy_growth(sc, cfl_max_dt(sc.layout.grid, sc.ctx.material), 50, rng) < 1.5


def test_instability_error_carries_step():
    sc = make_scenario(1, "acoustic", 20, "dirichlet")
    tg = TimeGrid(40 * sc.period, 320)      # dt about 8x the stable limit
    with pytest.raises(InstabilityError) as info:
        solve_icp(FieldState.zeros(sc.layout), sc, tg)
    assert 0 < info.value.step <= tg.steps


def test_timegrid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)
    tg = TimeGrid.for_omega(2 * math.pi, 40)
    assert tg.steps * tg.dt == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("kind", BOUNDARY_KINDS)
def test_zero_in_zero_out_for_homogeneous_data(kind):
    sc = make_scenario(2, "acoustic", 6, kind).homogeneous()
    tg = stable_grid(sc)
    z = FieldState.zeros(sc.layout)
    for out in (solve_icp(z, sc, tg)[1], solve_hcp(z, sc, tg), solve_hacp_plus(z, sc, tg)):
        assert not np.any(out.to_vector())


@pytest.mark.parametrize("kind", BOUNDARY_KINDS)
def test_homogeneous_solver_is_linear(kind, rng):
    sc = make_scenario(2, "maxwell2d_te", 6, kind)
    tg = stable_grid(sc)
    u, v = random_control(sc, rng), random_control(sc, rng)
    lhs = solve_hcp(0.3 * u - 1.7 * v, sc, tg)
    rhs = 0.3 * solve_hcp(u, sc, tg) - 1.7 * solve_hcp(v, sc, tg)
    assert norm_h(lhs - rhs, sc.ctx.weights) <= 1e-13 * norm_h(rhs, sc.ctx.weights)


@pytest.mark.parametrize("dim,system", SYSTEMS)
@pytest.mark.parametrize("kind", BOUNDARY_KINDS)
def test_period_map_adjoint_identity(dim, system, kind, rng):
    sc = make_scenario(dim, system, 6 if dim < 3 else 5, kind)
    tg = stable_grid(sc)
    w = sc.ctx.weights
    for _ in range(3):
        u, v = random_control(sc, rng), random_control(sc, rng)
        gap = inner_h(period_map(u, sc, tg), v, w) - inner_h(u, period_map_adjoint(v, sc, tg), w)
        assert abs(gap) <= 1e-12 * norm_h(u, w) * norm_h(v, w)


def test_adjoint_matches_dense_transpose(rng):
    sc = make_scenario(1, "acoustic", 5, "abc")
    tg = stable_grid(sc)
    lay = sc.layout
    n = lay.e_dof_count + lay.h_dof_count
    w = np.concatenate([sc.ctx.weights.w_e, sc.ctx.weights.w_h])
    cols, cols_adj = [], []
    for k in range(n):
        basis = np.zeros(n)
        basis[k] = 1.0
        b = sc.ctx.project(FieldState.from_vector(basis, lay))
        cols.append(period_map(b, sc, tg).to_vector())
        cols_adj.append(period_map_adjoint(b, sc, tg).to_vector())
    p, p_adj = np.array(cols).T, np.array(cols_adj).T
    free = np.concatenate([sc.ctx.free, np.ones(lay.h_dof_count, dtype=bool)])
    p, p_adj = p[np.ix_(free, free)], p_adj[np.ix_(free, free)]
    wf = w[free]
    expected = (p.T * wf[None, :]) / wf[:, None]    # W^-1 P^T W
    assert np.max(np.abs(p_adj - expected)) <= 1e-12 * np.max(np.abs(expected))


@pytest.mark.parametrize("kind", ["pec", "abc", "obstacle"])
def test_backward_adjoint_variant_is_identical(kind, rng):
    sc = make_scenario(2, "acoustic", 6, kind)
    tg = stable_grid(sc)
    v = random_control(sc, rng)
    a = solve_hacp_plus(v, sc, tg)
    b, snaps = solve_hacp_minus(v, sc, tg, record=range(tg.steps + 1))
    assert norm_h(a - b, sc.ctx.weights) <= 1e-12 * norm_h(a, sc.ctx.weights)
    assert set(snaps) == {tg.time(k) for k in range(tg.steps + 1)}
    assert norm_h(snaps[0.0] - b, sc.ctx.weights) == 0.0


@pytest.mark.parametrize("dim,system", SYSTEMS)
def test_staggered_energy_conserved_under_pec(dim, system, rng):
    sc = make_scenario(dim, system, 6 if dim < 3 else 5, "pec")
    tg = stable_grid(sc)
    u = random_control(sc, rng)
    e0 = energy_of(u, sc.ctx, tg.dt)
    for _ in range(10):
        u = period_map(u, sc, tg)
    assert abs(energy_of(u, sc.ctx, tg.dt) - e0) <= 1e-12 * e0


def test_leapfrog_state_energy_matches_definition(rng):
    sc = make_scenario(1, "acoustic", 6, "pec")
    u = random_control(sc, rng)
    dt = 0.01
    st = LeapfrogState.from_synchronized(u, sc.ctx, dt)
    w = sc.ctx.weights
    h_minus = st.h_previous(sc.ctx)
    expected = np.sum(w.w_e * u.e**2) + np.sum(w.w_h * h_minus * st.h_half)
    assert conserved_energy(st, sc.ctx) == pytest.approx(expected, rel=1e-15)
    assert conserved_energy(LeapfrogState.from_synchronized(FieldState.zeros(sc.layout), sc.ctx, dt),
                            sc.ctx) == 0.0


@pytest.mark.parametrize("dim,system", SYSTEMS)
def test_absorbing_faces_make_energy_nonincreasing(dim, system, rng):
    sc = make_scenario(dim, system, 6 if dim < 3 else 5, "obstacle").homogeneous()
    tg = stable_grid(sc)
    u = random_control(sc, rng)
    energies = [energy_of(u, sc.ctx, tg.dt)]
    short = TimeGrid(tg.period / 4, tg.steps // 4)
    for _ in range(8):
        u = period_map(u, sc, short)
        energies.append(energy_of(u, sc.ctx, tg.dt))
    assert all(b <= a * (1 + 1e-13) for a, b in zip(energies, energies[1:]))
    assert energies[-1] < energies[0]


@pytest.mark.parametrize("dim,system", SYSTEMS)
def test_absorbing_period_map_is_contractive_in_h_norm(dim, system, rng):
    sc = make_scenario(dim, system, 6 if dim < 3 else 5, "obstacle")
    tg = stable_grid(sc)
    w = sc.ctx.weights
    for _ in range(10):
        u = random_control(sc, rng)
        assert norm_h(period_map(u, sc, tg), w) <= norm_h(u, w) * (1 + 1e-10)


def test_pec_period_map_keeps_h_norm_close():
    # not exactly isometric: only the staggered energy is invariant
    rng = np.random.default_rng(5)
    sc = make_scenario(2, "acoustic", 8, "pec")
    tg = stable_grid(sc)
    u = random_control(sc, rng)
    ratio = norm_h(period_map(u, sc, tg), sc.ctx.weights) / norm_h(u, sc.ctx.weights)
    assert abs(ratio - 1) < 0.2


def test_right_going_pulse_leaves_through_absorbing_face():
    n = 400
    g = make_grid(1, "acoustic", n, artificial=("x+",))
    lay = DofLayout(g)
    sc = build_scenario(g, MaterialField.uniform(lay), {"x+": FirstOrderABC()}, 1.0)
    pulse = lambda x: np.exp(-((x - 0.5) / 0.05) ** 2)
    u = FieldState(pulse(lay.e_positions[:, 0]), -pulse(lay.h_positions[:, 0]))
    dt = cfl_max_dt(g, sc.ctx.material)
    tg = TimeGrid(0.9, math.ceil(0.9 / dt))
    e0 = energy_of(u, sc.ctx, tg.dt)
    reflected = energy_of(period_map(u, sc, tg), sc.ctx, tg.dt)
    assert reflected <= 1e-4 * e0


def test_driven_1d_approaches_traveling_wave():
    # smooth switch-on over one period; an abrupt start leaves a slowly decaying kink
    omega = 2 * math.pi
    errs = []
    for n in (50, 100, 200):
        g = make_grid(1, "acoustic", n, artificial=("x+",))
        lay = DofLayout(g)
        sc = build_scenario(g, MaterialField.uniform(lay),
                            {"x-": DirichletTrace(constant_profile(1j)), "x+": FirstOrderABC()}, omega)
        sc = sc.with_ramp(smooth_ramp(sc.period))
        tg = TimeGrid(4 * sc.period, 4 * stable_grid(sc).steps)
        _, u = solve_icp(FieldState.zeros(lay), sc, tg)
        e, _ = traveling_wave_1d(lay.e_positions[:, 0], tg.period, omega, 1.0)
        errs.append(error_norms(u.e, e, lay.e_measure).l2_rel)
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert errs[-1] < 5e-3
    assert min(orders) >= 1.8


def test_imposed_trace_matches_boundary_data():
    sc = make_scenario(1, "acoustic", 10, "abc")
    tg = stable_grid(sc)
    traj, _ = solve_icp(FieldState.zeros(sc.layout), sc, tg, record=range(tg.steps + 1))
    m = sc.ctx.mask
    for k in traj.steps:
        np.testing.assert_array_equal(traj.at(k).e[m], sc.boundary_values(tg.time(k))[m])
    # lambda = Re(i exp(-i omega t)) = sin(omega t) on the driven node
    assert sc.boundary_values(tg.period / 4)[m][0] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("kind", ["pec"])
def test_period_map_converges_to_exponential(kind, rng):
    sc = make_scenario(1, "acoustic", 8, kind)
    gen = DenseGenerator.from_scenario(sc)
    u = random_control(sc, rng)
    ref = expm_apply(gen, sc.period, u)
    ref_adj = expm_apply(gen, -sc.period, u)
    w = sc.ctx.weights
    errs, errs_adj = [], []
    for n in (64, 128, 256):
        tg = TimeGrid(sc.period, n)
        errs.append(norm_h(period_map(u, sc, tg) - ref, w))
        errs_adj.append(norm_h(period_map_adjoint(u, sc, tg) - ref_adj, w))
    for e in (errs, errs_adj):
        assert min(math.log2(a / b) for a, b in zip(e, e[1:])) >= 1.8


def test_build_scenario_validation():
    g = make_grid(1, "acoustic", 6)
    mat = MaterialField.uniform(DofLayout(g))
    with pytest.raises(ValueError, match="artificial"):
        build_scenario(g, mat, {"x+": FirstOrderABC()}, 1.0)
    g2 = make_grid(1, "acoustic", 6, artificial=("x+",))
    with pytest.raises(ValueError, match="artificial"):
        build_scenario(g2, mat, {"x+": PEC()}, 1.0)
    with pytest.raises(ValueError):
        build_scenario(g, mat, {}, 0.0)


def test_mask_covers_scatterer_faces_only():
    sc = make_scenario(2, "acoustic", 6, "abc")
    lay = sc.layout
    fixed = set(np.flatnonzero(sc.ctx.mask))
    expected = set()
    for f in ("x-", "y-", "y+"):
        expected |= set(np.flatnonzero(lay.on_face(f)))
    assert fixed == expected
    assert np.all(sc.damping[lay.on_face("x+") & ~sc.ctx.mask] > 0)


def test_smooth_ramp_is_c2():
    r = smooth_ramp(2.0)
    assert r(0.0) == 0.0 and r(2.0) == 1.0 and r(5.0) == 1.0
    h = 1e-4
    for t in (1e-3, 1.999):
        d2 = (r(t + h) - 2 * r(t) + r(t - h)) / h**2
        assert abs(d2) < 1e-2
