import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porowave import elliptic as el
from porowave.grid import Grid, zeta_faces_from_function
from porowave.model import CoefficientSet

CO = CoefficientSet(c1=0.25, f=(1.0,), eps=0.05, R=0.5)


def manufactured_sine(n):
    g = Grid.uniform(n)
    co = CoefficientSet(c1=0.0)
    z = zeta_faces_from_function(g, lambda x: -(1 + np.pi**2) * np.cos(np.pi * x) / np.pi)
    return g, el.EllipticProblem(g, 1.0, 1.0, z, co)


def test_energy_zero_at_zero():
    g = Grid.uniform(8)
    prob = el.EllipticProblem(g, 1.0, 1.0, (np.zeros(9),), CO)
    assert el.energy_J(prob, np.zeros(8)) == 0.0


@pytest.mark.parametrize("u", [-2.0, 1.0, 5.0])
def test_potential_closed_form_vs_quadrature(u):
    co = CoefficientSet(c0=1.7, c1=0.0)
    quad = el.kappa_integral(np.zeros(1), np.array([u]), co, closed_form=False)
    assert quad[0] == pytest.approx(u * u / (2 * 1.7), abs=1e-11)
    assert el.potential(np.array([u]), co)[0] == u * u / (2 * 1.7)


def test_potential_matches_fine_trapezoid():
    s = np.linspace(0, 3.0, 300001)
    k = CO.kappa(s)
    ref = np.sum(0.5 * (k[1:] + k[:-1]) * np.diff(s))
    assert el.potential(np.array([3.0]), CO)[0] == pytest.approx(ref, rel=1e-9)


def test_energy_quadratic_in_direction():
    rng = np.random.default_rng(0)
    g = Grid.uniform(20)
    co = CoefficientSet(c0=2.0, c1=0.0)
    alpha = rng.uniform(0.5, 2, 20)
    beta = rng.uniform(0, 1, 20)
    prob = el.EllipticProblem(g, alpha, beta, (rng.normal(size=21),), co)
    u, v = rng.normal(size=(2, 20))
    second = prob.energy(u + v) - 2 * prob.energy(u) + prob.energy(u - v)
    expect = g.cell_volume * (np.sum(prob.op.apply(v) * v) + np.sum(beta * v * v) / 2.0)
    assert second == pytest.approx(expect, rel=1e-10)


def test_energy_change_matches_difference():
    rng = np.random.default_rng(1)
    g = Grid.uniform(16)
    prob = el.EllipticProblem(g, rng.uniform(0.5, 2, 16), rng.uniform(0, 1, 16),
                              (rng.normal(size=17),), CO)
    u, p = rng.normal(size=(2, 16))
    d = prob.energy_change(u, p, 0.3, prob.op.apply(p))
    assert d == pytest.approx(prob.energy(u + 0.3 * p) - prob.energy(u), rel=1e-9)


def test_constant_flux_gives_zero():
    g = Grid.uniform((12, 10))
    rng = np.random.default_rng(2)
    zeta = (np.full((10, 13), 0.7), np.full((11, 12), -0.3))
    prob = el.EllipticProblem(g, 0.4, rng.uniform(0, 3, g.shape), zeta, CO)
    sol = el.solve(prob)
    assert np.max(np.abs(sol.u.values)) <= 1e-12
    assert sol.newton_iters <= 2


def test_linear_force_parabola():
    errs = []
    for n in (32, 64):
        g = Grid.uniform(n)
        z = zeta_faces_from_function(g, lambda x: x)
        sol = el.solve(el.EllipticProblem(g, 1.0, 0.0, z, CO))
        x = g.centers_1d(0)
        errs.append(np.max(np.abs(sol.u.values - x * (1 - x) / 2)))
        assert abs(sol.u.values.max() - 0.125) <= 2 / n**2
    assert errs[1] < errs[0] / 3


def test_manufactured_sine_second_order():
    errs = []
    for n in (32, 64):
        g, prob = manufactured_sine(n)
        sol = el.solve(prob)
        errs.append(np.max(np.abs(sol.u.values - np.sin(np.pi * g.centers_1d(0)))))
    assert np.log2(errs[0] / errs[1]) >= 1.9


def test_solution_invariants():
    g = Grid.uniform((24, 24))
    rng = np.random.default_rng(3)
    phi = rng.uniform(0.1, 0.4, g.shape)
    co = CoefficientSet(c1=0.25, f=(1.0, 0.5), eps=0.05, R=0.5)
    prob = el.EllipticProblem.from_state(g, phi, co)
    sol = el.solve(prob)
    assert sol.residual_norm <= prob.tol
    tr = np.array(sol.energy_trace)
    assert np.all(np.diff(tr) <= 0)
    assert el.energy_J(prob, sol.u) <= el.energy_J(prob, np.zeros(g.shape))
    assert tr[-1] == pytest.approx(el.energy_J(prob, sol.u), rel=1e-9, abs=1e-15)


def test_pcg_solves_spd_system():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(10, 10))
    A = M @ M.T + 10 * np.eye(10)
    b = rng.normal(size=10)
    x, it = el.pcg(lambda v: A @ v, b, np.diag(A).copy(), 1e-12)
    assert np.allclose(A @ x, b, atol=1e-10) and it > 0


def test_invalid_coefficients_rejected():
    g = Grid.uniform(4)
    with pytest.raises(el.EllipticError):
        el.EllipticProblem(g, np.array([1.0, 0.0, 1.0, 1.0]), 1.0, (np.zeros(5),), CO)
    with pytest.raises(el.EllipticError):
        el.EllipticProblem(g, 1.0, -1.0, (np.zeros(5),), CO)


def test_bound_check_zero_and_refinement():
    g = Grid.uniform(16)
    prob = el.EllipticProblem(g, 1.0, 1.0, (np.zeros(17),), CO)
    rep = el.uniform_bound_check(el.solve(prob), prob)
    assert (rep.u_inf, rep.u_w12, rep.force_l2, rep.ratio) == (0.0, 0.0, 0.0, 0.0)
    ratios = []
    for n in (64, 128, 256):
        g = Grid.uniform(n)
        x = g.centers_1d(0)
        prob = el.EllipticProblem.from_state(g, 0.2 + 0.1 * np.sin(np.pi * x), CO)
        ratios.append(el.uniform_bound_check(el.solve(prob), prob).ratio)
    assert max(ratios) / min(ratios) - 1 <= 0.01


def test_bound_check_flags_ceiling():
    g = Grid.uniform(32)
    x = g.centers_1d(0)
    prob = el.EllipticProblem.from_state(g, 0.2 + 0.1 * x, CO)
    sol = el.solve(prob)
    assert el.uniform_bound_check(sol, prob, ceiling=1e-6).flagged
    assert not el.uniform_bound_check(sol, prob).flagged


def test_w12_stability_random_1d():
    rng = np.random.default_rng(5)
    g = Grid.uniform(64)
    ratios = []
    for _ in range(20):
        prob = el.EllipticProblem.from_state(g, rng.uniform(0.05, 0.5, 64), CO)
        ratios.append(el.uniform_bound_check(el.solve(prob), prob).ratio)
    assert np.all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) <= 10


def test_nested_perturbation_lipschitz():
    g = Grid.uniform(64)
    x = g.centers_1d(0)
    phi1 = 0.2 + 0.1 * np.sin(np.pi * x)
    chi = (x > 0.4) & (x < 0.6)
    u1 = el.solve(el.EllipticProblem.from_state(g, phi1, CO)).u.values
    ratios = []
    for delta in (1e-2, 5e-3, 2.5e-3):
        u2 = el.solve(el.EllipticProblem.from_state(g, phi1 + delta * chi, CO)).u.values
        ratios.append(np.max(np.abs(u1 - u2)) / delta)
    assert max(ratios) / min(ratios) - 1 <= 0.1


def test_odd_symmetry_in_force():
    g = Grid.uniform(40)
    x = g.centers_1d(0)
    phi = 0.2 + 0.1 * np.sin(np.pi * x)
    co = CoefficientSet(c1=0.0, f=(1.0,))
    up = el.solve(el.EllipticProblem.from_state(g, phi, co)).u.values
    um = el.solve(el.EllipticProblem.from_state(g, phi, CoefficientSet(c1=0.0, f=(-1.0,)))).u.values
    assert np.array_equal(up, -um)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_descent_random(seed):
    rng = np.random.default_rng(seed)
    g = Grid.uniform(32)
    prob = el.EllipticProblem.from_state(g, rng.uniform(0.05, 0.5, 32), CO)
    sol = el.solve(prob)
    assert np.all(np.diff(sol.energy_trace) <= 0)
    assert sol.residual_norm <= prob.tol
