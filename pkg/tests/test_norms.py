import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porowave import viscous as vs
from porowave.grid import Grid, Partition, gradient
from porowave.model import CoefficientSet
from porowave.norms import (
    NormError,
    RunReport,
    TimeSeries,
    bv_norm,
    holder_terms,
    lipschitz_ratio,
    lp_norm,
    parabolic_holder_norm,
    piecewise_holder_norm,
    tv_seminorm,
    w12_norm,
)

seeds = st.integers(0, 2**32 - 1)


def _series(grid, times, vals):
    vals = np.asarray(vals, float)
    return TimeSeries(grid, times, vals, np.zeros_like(vals))


def test_lp_basics():
    g = Grid.uniform(5)
    assert lp_norm(np.full(5, -2.5), np.inf, g) == 2.5
    g3 = Grid((1.5,), (3,))
    assert lp_norm(np.array([3.0, -4.0, 0.0]), 1, g3) == pytest.approx(3.5)
    with pytest.raises(NormError):
        lp_norm(np.ones(3), 0.5)


def test_l2_dense_oracle():
    rng = np.random.default_rng(0)
    g = Grid((2.0, 1.0), (9, 7))
    v = rng.normal(size=g.shape)
    oracle = np.sqrt(sum(float(x) ** 2 for x in v.ravel()) * (2 / 9) * (1 / 7))
    assert lp_norm(v, 2, g) == pytest.approx(oracle, rel=1e-12)


def test_tv_values():
    g = Grid.uniform(5)
    assert tv_seminorm(np.full(5, 0.4), g) == 0.0
    assert tv_seminorm(np.array([0, 0, 1, 1, 1.0]), g) == 1.0
    for n in (8, 33):
        g = Grid.uniform(n)
        x = g.centers_1d(0)
        assert tv_seminorm(-2.5 * x, g) == pytest.approx(2.5 * (n - 1) / n, rel=1e-12)


def test_tv_2d_face_area():
    g = Grid.uniform((4, 4))
    v = np.zeros(g.shape)
    v[:, 2:] = 1.0  # jump across one vertical line of length 1
    assert tv_seminorm(v, g) == pytest.approx(1.0)


def test_w12_values():
    g = Grid.uniform(16)
    assert w12_norm(np.zeros(16), g) == 0.0
    # interior face part of u = x tends to 1; the wall faces see the Dirichlet closure
    for n in (16, 256):
        g = Grid.uniform(n)
        (gr,) = gradient(g.centers_1d(0), g)
        interior = np.sum(gr[1:-1] ** 2) * g.h[0]
        assert interior == pytest.approx((n - 1) / n)


def test_w12_dense_oracle():
    rng = np.random.default_rng(1)
    g = Grid.uniform(6)
    u = rng.normal(size=6)
    h = 1 / 6
    ext = np.concatenate([[-u[0]], u, [-u[-1]]])
    grads = np.diff(ext) / h
    w = np.full(7, h)
    w[[0, -1]] = h / 2
    oracle = np.sqrt(np.sum(u**2) * h + np.sum(grads**2 * w))
    assert w12_norm(u, g) == pytest.approx(oracle, rel=1e-12)


def test_holder_constant():
    g = Grid.uniform(6)
    s = _series(g, np.linspace(0, 1, 5), np.full((5, 6), -0.7))
    assert parabolic_holder_norm(s, k=0) == pytest.approx(0.7)
    assert parabolic_holder_norm(s, k=1) == pytest.approx(0.7)


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
def test_holder_linear_in_time(gamma):
    g = Grid.uniform(4)
    T = 0.8
    t = np.linspace(0, T, 9)
    s = _series(g, t, np.repeat(t[:, None], 4, axis=1))
    terms = holder_terms(t, s.phi, g, 0, gamma, np.ones(4, bool))
    assert terms["time"] == pytest.approx(T ** (1 - gamma / 2), rel=1e-12)
    assert parabolic_holder_norm(s, k=0, gamma=gamma) == pytest.approx(T + T ** (1 - gamma / 2))


def test_holder_linear_in_space():
    vals = []
    for n in (8, 64):
        g = Grid.uniform(n)
        x = g.centers_1d(0)
        terms = holder_terms(np.array([0.0, 1.0]), np.stack([x, x]), g, 0, 0.5, np.ones(n, bool))
        vals.append(terms["space"])
        assert terms["space"] == pytest.approx((1 - 1 / n) ** 0.5)
    assert abs(vals[1] - 1) < abs(vals[0] - 1)


def test_holder_guard():
    g = Grid.uniform(300)
    s = _series(g, np.linspace(0, 1, 101), np.zeros((101, 300)))
    with pytest.raises(NormError):
        parabolic_holder_norm(s)


def test_holder_gradients_stay_inside_subdomain():
    g = Grid.uniform(12)
    part = Partition.from_boxes(g, [((0.3, 0.7), 1)])
    x = g.centers_1d(0)
    v = np.where(part.labels == 1, 1.0 + x, x)  # unit-slope pieces with a jump
    stack = np.stack([v, v])
    total = piecewise_holder_norm(np.array([0.0, 1.0]), stack, g, part, 0.5, k=1)
    for lab in (1, 2):
        terms = holder_terms(np.array([0.0, 1.0]), stack, g, 1, 0.5, part.labels == lab)
        assert terms["grad_sup"] == pytest.approx(1.0)
    assert np.isfinite(total)


def test_lipschitz_ratio_errors_and_zero():
    phi = np.full(5, 0.2)
    with pytest.raises(NormError):
        lipschitz_ratio(np.ones(5), np.zeros(5), phi, phi)
    assert lipschitz_ratio(np.ones(5), np.ones(5), phi, phi + 0.1) == 0.0
    with pytest.raises(NormError):
        lipschitz_ratio(np.ones(5), np.zeros(5), phi, phi + 0.1, kind="holder")


def test_lipschitz_ratio_stabilizes():
    co = CoefficientSet(c1=0.25, f=(1.0,), eps=0.05, R=0.5)
    g = Grid.uniform(64)
    rng = np.random.default_rng(5)
    phi1 = 0.2 + 0.05 * rng.uniform(-1, 1, 64)
    chi = rng.uniform(-1, 1, 64)
    u1 = vs.solve_pressure(g, phi1, co)
    ratios = []
    for delta in (1e-3, 5e-4):
        phi2 = phi1 + delta * chi
        ratios.append(lipschitz_ratio(u1, vs.solve_pressure(g, phi2, co), phi1, phi2))
    assert abs(ratios[1] / ratios[0] - 1) < 0.2


def test_lipschitz_holder_kind():
    g = Grid.uniform(6)
    t = np.linspace(0, 1, 4)
    a = np.tile(np.linspace(0, 1, 6), (4, 1))
    r = lipschitz_ratio(2 * a, 0 * a, a, 0 * a, kind="holder", grid=g, times=t)
    assert r == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_volpert_chain_rule(seed):
    rng = np.random.default_rng(seed)
    g = Grid.uniform(40)
    eps, R = 0.05, 0.5
    steps = np.repeat(rng.uniform(eps, R, 8), 5)
    phi = np.clip(steps + 0.02 * rng.normal(size=40), eps, R)
    co = CoefficientSet(a0=1.3, n=3, b0=0.7, m=2, c1=0.25)
    x = np.linspace(eps, R, 10001)
    lip_a = np.max(np.abs(np.gradient(co.alpha(x), x)))
    lip_b = np.max(np.abs(np.gradient(co.beta(x), x)))
    tv = tv_seminorm(phi, g)
    assert tv_seminorm(co.alpha(phi), g) <= lip_a * tv * (1 + 1e-6)
    assert tv_seminorm(co.beta(phi), g) <= lip_b * tv * (1 + 1e-6)
    c = rng.uniform(-1, 1)
    lip_k = co.kappa_prime(np.linspace(-60, 60, 200001)).max()
    assert tv_seminorm(co.kappa(phi + c), g) <= lip_k * tv * (1 + 1e-6)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(-5, 5))
def test_bv_is_a_norm(seed, lam):
    rng = np.random.default_rng(seed)
    g = Grid.uniform((5, 6))
    a, b = rng.normal(size=(2,) + g.shape)
    assert bv_norm(a + b, g) <= bv_norm(a, g) + bv_norm(b, g) + 1e-12
    assert bv_norm(lam * a, g) == pytest.approx(abs(lam) * bv_norm(a, g), rel=1e-12, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_time_integral_holder_estimate(seed):
    rng = np.random.default_rng(seed)
    g = Grid.uniform(8)
    x = g.centers_1d(0)
    gamma = 0.5
    k1, k2 = rng.integers(1, 4, 2)
    a, b, c = rng.normal(size=3)
    for T in (0.1, 0.4, 1.0):
        t = np.linspace(0, T, 17)
        f = a * np.sin(k1 * np.pi * x)[None] * np.cos(k2 * t)[:, None] + b * t[:, None] + c
        F = np.concatenate([np.zeros((1, 8)),
                            np.cumsum(0.5 * np.diff(t)[:, None] * (f[1:] + f[:-1]), axis=0)])
        nf = parabolic_holder_norm(_series(g, t, f), gamma=gamma)
        nF = parabolic_holder_norm(_series(g, t, F), gamma=gamma)
        assert nF <= 3.0 * T ** (1 - gamma / 2) * nf


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_lp_monotone_in_p(seed):
    rng = np.random.default_rng(seed)
    g = Grid((2.0,), (7,))
    v = rng.normal(size=7)
    vol = 2.0
    n1 = lp_norm(v, 1, g) / vol
    n2 = lp_norm(v, 2, g) / vol**0.5
    assert n1 <= n2 * (1 + 1e-12) <= lp_norm(v, np.inf, g) * (1 + 1e-12)


def test_timeseries_validation():
    g = Grid.uniform(3)
    with pytest.raises(NormError):
        _series(g, [0.1, 0.2], np.zeros((2, 3)))
    with pytest.raises(NormError):
        _series(g, [0.0, 0.0], np.zeros((2, 3)))
    s = _series(g, [0.0, 1.0, 3.0], np.zeros((3, 3)))
    assert np.allclose(s.quadrature, [0.5, 1.5, 1.0])
    assert len(s.truncated(2)) == 2


def test_run_report_qbar():
    rep = RunReport(contraction=[0.25, 0.5, 1.0])
    assert rep.q_bar == pytest.approx(0.5)
    assert RunReport().q_bar is None
