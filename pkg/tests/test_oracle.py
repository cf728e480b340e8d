import math

import numpy as np
import pytest
import scipy.linalg as sla

from helpers import make_scenario, random_control
from tpwave.control import compute_initial_residual, compute_loop_gradient
from tpwave.evolution import TimeGrid
from tpwave.oracle import (DenseGenerator, direct_normal_solve, duhamel_solve, expm_apply,
                           kernel_complement, kernel_projection_norm, scenario_forcing,
                           stepper_convergence, u_hat, verify_control_identities)
from tpwave.wavestate import FieldState, norm_h


@pytest.fixture(scope="module")
def tiny():
    sc = make_scenario(1, "acoustic", 8, "dirichlet")
    return sc, DenseGenerator.from_scenario(sc)


def test_generator_is_skew_with_real_spectrum(tiny):
    sc, gen = tiny
    assert gen.skew_defect <= 1e-13
    ev = np.linalg.eigvals(gen.assembly.matrix)
    assert np.max(np.abs(ev.real)) <= 1e-10 * gen.spectral_radius
    np.testing.assert_allclose(np.sort(np.abs(ev.imag)), np.sort(np.abs(gen.theta)), atol=1e-10)


def test_exponential_basics(tiny, rng):
    sc, gen = tiny
    w = sc.ctx.weights
    u = random_control(sc, rng)
    assert norm_h(expm_apply(gen, 0.0, u) - u, w) <= 1e-14 * norm_h(u, w)
    assert norm_h(expm_apply(gen, 1.3, u), w) == pytest.approx(norm_h(u, w), rel=1e-12)
    two = expm_apply(gen, 0.4, expm_apply(gen, 0.9, u))
    assert norm_h(two - expm_apply(gen, 1.3, u), w) <= 1e-12 * norm_h(u, w)
    ref = sla.expm(0.7 * gen.assembly.matrix) @ gen.assembly.restrict(u)
    np.testing.assert_allclose(gen.assembly.restrict(expm_apply(gen, 0.7, u)), ref, atol=1e-12)


def test_duhamel_without_forcing_is_free_evolution(tiny, rng):
    sc, gen = tiny
    u = random_control(sc, rng)
    got = duhamel_solve(gen, u, lambda s: np.zeros(gen.assembly.size), 2.0)
    assert norm_h(got - expm_apply(gen, 2.0, u), sc.ctx.weights) <= 1e-13 * norm_h(u, sc.ctx.weights)


def test_duhamel_with_zero_generator():
    # S = 0 reduces to u(t) = u0 + int f; constant f = 1 gives u0 + t
    sc = make_scenario(1, "acoustic", 2, "pec")
    gen = DenseGenerator.from_scenario(sc)
    n = gen.assembly.size
    gen.theta[:] = 0.0
    u0 = gen.assembly.extend(np.full(n, 0.5))
    got = duhamel_solve(gen, u0, lambda s: np.ones(n), 3.0)
    np.testing.assert_allclose(gen.assembly.restrict(got), 3.5, rtol=1e-14)
    quad = duhamel_solve(gen, u0, lambda s: np.full(n, s * s), 3.0)
    np.testing.assert_allclose(gen.assembly.restrict(quad), 0.5 + 9.0, rtol=1e-13)


def test_identities_at_zero_time(tiny):
    _, gen = tiny
    rep = verify_control_identities(gen, 0.0)
    assert rep["pass"]
    assert rep["checks"]["control_operator_norm"]["value"] <= 1e-15


def test_identities_at_operating_period(tiny):
    sc, gen = tiny
    rep = verify_control_identities(gen, sc.period)
    assert rep["pass"], rep
    for name in ("derivative_operator_identity", "derivative_operator_selfadjoint",
                 "derivative_operator_psd"):
        assert rep["checks"][name]["pass"]


def test_control_norm_bound_is_attained_at_half_turn(tiny):
    # pick t with theta_max t = pi: the top mode flips sign, so ||C_t|| = 2
    _, gen = tiny
    t = math.pi / gen.spectral_radius
    rep = verify_control_identities(gen, t)
    assert rep["checks"]["control_operator_norm"]["value"] == pytest.approx(2.0, abs=1e-10)
    assert rep["checks"]["derivative_operator_norm"]["value"] == pytest.approx(4.0, abs=1e-9)


def test_direct_solve_of_homogeneous_problem_is_zero():
    sc = make_scenario(1, "acoustic", 8, "dirichlet").homogeneous()
    sol = direct_normal_solve(sc)
    assert np.max(np.abs(sol.u0.to_vector())) == 0.0


@pytest.mark.parametrize("mode", ["exact", "discrete"])
def test_direct_solve_zeroes_the_gradient(mode):
    sc = make_scenario(1, "acoustic", 8, "dirichlet")
    tg = TimeGrid(sc.period, 32)
    sol = direct_normal_solve(sc, mode=mode, timegrid=tg)
    assert sol.normal_residual <= 1e-10 * sol.rhs_norm
    if mode == "discrete":
        g, _ = compute_initial_residual(sol.u0, sc, tg)
        r0, _ = compute_initial_residual(FieldState.zeros(sc.layout), sc, tg)
        assert norm_h(g, sc.ctx.weights) <= 1e-10 * norm_h(r0, sc.ctx.weights)


def test_direct_solve_needs_time_grid_in_discrete_mode():
    sc = make_scenario(1, "acoustic", 4, "pec")
    with pytest.raises(ValueError):
        direct_normal_solve(sc, mode="discrete")
    with pytest.raises(ValueError):
        direct_normal_solve(sc, mode="symbolic")


def test_forced_part_matches_adjoint_of_duhamel(tiny):
    sc, gen = tiny
    forcing = scenario_forcing(sc, gen.assembly)
    t = sc.period
    u_c = duhamel_solve(gen, FieldState.zeros(sc.layout), forcing, t)
    via_adjoint = expm_apply(gen, -t, u_c) - u_c
    got = u_hat(gen, forcing, t)
    assert norm_h(got - via_adjoint, sc.ctx.weights) <= 1e-11 * norm_h(via_adjoint, sc.ctx.weights)


def test_kernel_projection(tiny, rng):
    sc, gen = tiny
    u = random_control(sc, rng)
    rest = kernel_complement(gen, u)
    assert kernel_projection_norm(gen, rest) <= 1e-12 * norm_h(u, sc.ctx.weights)
    pec = make_scenario(1, "acoustic", 8, "pec")
    g = DenseGenerator.from_scenario(pec)
    assert g.kernel_dimension() == 1      # constant H with E = 0


def test_oracle_refuses_absorbing_and_large_problems():
    with pytest.raises(ValueError, match="ABC"):
        DenseGenerator.from_scenario(make_scenario(1, "acoustic", 8, "abc"))
    with pytest.raises(ValueError, match="dense cap"):
        DenseGenerator.from_scenario(make_scenario(2, "acoustic", 8, "pec"), cap=50)


@pytest.mark.parametrize("dim,system", [(1, "acoustic"), (2, "maxwell2d_te")])
def test_stepper_is_second_order_against_duhamel(dim, system):
    sc = make_scenario(dim, system, 8 if dim == 1 else 4, "dirichlet")
    out = stepper_convergence(sc, steps=(64, 128, 256))
    assert min(out["orders"]) >= 1.8


def test_loop_gradient_approaches_exact_derivative_operator(tiny, rng):
    sc, gen = tiny
    d_exact = 2.0 * (np.eye(gen.assembly.size) - gen.operator(lambda th: np.cos(th * sc.period)))
    u = random_control(sc, rng)
    ref = gen.from_coords(d_exact @ gen.to_coords(u))
    errs = [norm_h(compute_loop_gradient(u, sc, TimeGrid(sc.period, n)) - ref, sc.ctx.weights)
            for n in (64, 128, 256)]
    assert min(math.log2(a / b) for a, b in zip(errs, errs[1:])) >= 1.8
