import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porowave import viscous as vs
from porowave.grid import Field, Grid, jump_faces, same_faces
from porowave.model import CoefficientSet, ModelError
from porowave.norms import c_l1

from reference import (
    SMOOTH_VISCOUS, smooth_euler, smooth_horizon, smooth_phi0, smooth_picard,
    step_coeffs, step_phi0, step_run,
)

LINEAR = CoefficientSet(c1=0.0, Q=0.0, variant="viscous-small", eps=0.01, R=0.9)


def test_zero_relaxation_keeps_state():
    phi0 = smooth_phi0(32)
    for co in (CoefficientSet(b0=0.0, Q=0.0, variant="viscous-small", c1=0.25),
               CoefficientSet(f=(0.0,), Q=0.0, variant="viscous-small", c1=0.25)):
        series, rep = vs.run_euler(vs.ViscousRunConfig(co, phi0, 1.0, 8))
        assert np.array_equal(series.phi[-1], phi0.values)
        assert rep.termination == "horizon"


def test_frozen_pressure_exponential():
    phi0 = smooth_phi0(16)
    series, _ = vs.run_euler(vs.ViscousRunConfig(LINEAR, phi0, 1.0, 1000, frozen_u=1.0))
    exact = phi0.values * np.exp(-1.0)
    assert np.max(np.abs(series.phi[-1] - exact) / exact) <= 1e-3


def test_single_step_matches_euler_step():
    phi0 = smooth_phi0(32)
    series, _ = vs.run_euler(vs.ViscousRunConfig(SMOOTH_VISCOUS, phi0, 0.1, 1))
    x1, u0 = vs.euler_step(phi0, 0.1, SMOOTH_VISCOUS)
    assert np.array_equal(series.state[1], x1)
    assert np.array_equal(series.u[0], u0)


def test_euler_step_rejects_bad_tau():
    with pytest.raises(ModelError):
        vs.euler_step(smooth_phi0(8), 0.0, SMOOTH_VISCOUS)


def test_config_rejects_inadmissible_initial_state():
    with pytest.raises(ModelError):
        vs.ViscousRunConfig(SMOOTH_VISCOUS, Field(Grid.uniform(4), np.full(4, 0.6)), 1.0, 4)
    with pytest.raises(ModelError):
        vs.ViscousRunConfig(SMOOTH_VISCOUS, smooth_phi0(8), -1.0, 4)


def test_euler_first_order():
    levels = (64, 128, 256, 512)
    diffs = []
    for a, b in zip(levels[:-1], levels[1:]):
        sa, sb = smooth_euler(a)[0], smooth_euler(b)[0]
        diffs.append(c_l1(sa.phi - sb.phi[::2], sa.grid))
    order = np.polyfit(np.log(levels[:-1]), -np.log(diffs), 1)[0]
    assert 0.7 <= order <= 1.3


def test_euler_respects_bounds_at_safe_horizon():
    series, rep = smooth_euler(64)
    assert rep.termination == "horizon"
    assert series.phi.min() >= SMOOTH_VISCOUS.eps
    assert series.phi.max() <= SMOOTH_VISCOUS.R


def test_picard_linear_model_one_iteration():
    co = CoefficientSet(b0=0.0, Q=0.0, variant="viscous-small")
    series, rep = vs.picard_solve(vs.ViscousRunConfig(co, smooth_phi0(16), 1.0, 8))
    assert rep.extra["iterations"] == 1
    assert np.array_equal(series.phi[-1], smooth_phi0(16).values)


def test_picard_first_iterate_is_linear_in_time():
    cfg = vs.ViscousRunConfig(SMOOTH_VISCOUS, smooth_phi0(16), 0.5, 10)
    times = np.linspace(0, 0.5, 11)
    x0 = cfg.phi0.values
    from porowave.norms import TimeSeries
    stack = np.broadcast_to(x0, (11, 16)).copy()
    first = vs.picard_lambda(TimeSeries(cfg.grid, times, stack, 0 * stack), SMOOTH_VISCOUS)
    slope = (first.state[1] - x0) / times[1]
    for k in range(2, 11):
        assert np.allclose(first.state[k], x0 + slope * times[k], atol=1e-14)


def test_picard_matches_fine_euler():
    pic = smooth_picard()[0]
    eul = smooth_euler(1024)[0]
    assert np.max(np.abs(pic.phi[-1] - eul.phi[-1])) <= 2e-3


def test_picard_fixed_point_residual():
    pic, rep = smooth_picard()
    again = vs.picard_lambda(pic, SMOOTH_VISCOUS)
    assert np.max(np.abs(again.state - pic.state)) <= 1e-9
    assert rep.extra["increments"][-1] <= 1e-10


def test_picard_contraction_scaling():
    q_full = smooth_picard(1.0)[1].q_bar
    q_half = smooth_picard(0.5)[1].q_bar
    assert q_full < 1
    assert 0.3 <= q_half / q_full <= 0.7


def test_picard_non_contraction_raises():
    cfg = vs.ViscousRunConfig(SMOOTH_VISCOUS, smooth_phi0(16), smooth_horizon(), 8, picard_max=2)
    with pytest.raises(vs.NonContraction) as info:
        vs.picard_solve(cfg)
    assert info.value.report.termination == "non-contraction"


def test_safe_horizon_properties():
    phi0 = smooth_phi0(32)
    T = vs.select_safe_horizon(phi0, SMOOTH_VISCOUS)
    assert 0 < T < np.inf
    assert vs.select_safe_horizon(phi0, SMOOTH_VISCOUS, cap=0.01) == 0.01
    co0 = CoefficientSet(b0=0.0, Q=0.0, variant="viscous-small", eps=0.05, R=0.5)
    assert vs.select_safe_horizon(phi0, co0, cap=7.0) == 7.0
    with pytest.raises(ModelError):
        vs.select_safe_horizon(phi0, SMOOTH_VISCOUS, lo=phi0.values.min())


def test_safe_horizon_shrinks_with_tighter_bounds():
    phi0 = smooth_phi0(32)
    wide = vs.select_safe_horizon(phi0, SMOOTH_VISCOUS, lo=0.01)
    narrow = vs.select_safe_horizon(phi0, SMOOTH_VISCOUS, lo=0.09)
    assert narrow <= wide


def test_bound_exit_truncates():
    phi0 = Field(Grid.uniform(8), np.full(8, 0.3))
    cfg = vs.ViscousRunConfig(LINEAR, phi0, 3.0, 300, frozen_u=-1.0, R_max=0.9)
    series, rep = vs.run_euler(cfg)
    assert rep.termination == "bound-exit"
    assert abs(rep.exit_time - np.log(3.0)) <= 0.05 * np.log(3.0)
    assert series.phi.max() <= 0.9


def test_blowup_chain():
    phi0 = Field(Grid.uniform(8), np.full(8, 0.3))
    res = vs.continue_to_blowup(
        phi0, LINEAR, window=0.25, dt=1e-3, eps_min=0.01, R_max=0.9, t_cap=5.0, frozen_u=-1.0
    )
    assert res.T_max == pytest.approx(np.log(3.0), rel=0.05)
    assert len(res.windows) >= 2
    assert np.all(np.diff(res.series.times) > 0)


def test_blowup_reaches_cap_without_growth():
    phi0 = Field(Grid.uniform(8), np.full(8, 0.3))
    co = CoefficientSet(b0=0.0, Q=0.0, variant="viscous-small")
    res = vs.continue_to_blowup(
        phi0, co, window=0.5, dt=0.1, eps_min=0.01, R_max=0.9, t_cap=1.0
    )
    assert res.T_max is None
    assert res.series.times[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("lo", [0.02, 0.05, 0.08])
def test_tighter_eps_min_exits_no_later(lo):
    phi0 = Field(Grid.uniform(8), np.full(8, 0.3))
    base = vs.ViscousRunConfig(LINEAR, phi0, 6.0, 600, frozen_u=1.0, eps_min=0.01)
    tight = vs.ViscousRunConfig(LINEAR, phi0, 6.0, 600, frozen_u=1.0, eps_min=lo)
    assert vs.run_euler(tight)[1].exit_time <= vs.run_euler(base)[1].exit_time


def test_full_variant_keeps_porosity_below_one():
    co = CoefficientSet(c1=0.25, Q=0.0, variant="viscous-full", eps=0.05, R=0.5)
    T = vs.select_safe_horizon(smooth_phi0(32), co)
    series, _ = vs.run_euler(vs.ViscousRunConfig(co, smooth_phi0(32), T, 32))
    assert series.phi.max() < 1 and series.phi.min() > 0


@pytest.mark.parametrize("cells", [(128,), (64, 64)])
def test_jump_set_invariant_viscous(cells):
    series, rep = step_run(cells, "viscous")
    assert rep.termination == "horizon"
    ref = jump_faces(series.phi[0], series.grid, 0.1)
    assert all(same_faces(ref, jump_faces(p, series.grid, 0.1)) for p in series.phi)
    co = step_coeffs(len(cells), "viscous-small")
    assert series.phi.min() >= co.eps and series.phi.max() <= co.R
    assert step_phi0(cells).values.max() == 0.3


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 0.4), st.floats(0.1, 2.0))
def test_frozen_decay_monotone(level, u):
    phi0 = Field(Grid.uniform(4), np.full(4, level))
    series, _ = vs.run_euler(vs.ViscousRunConfig(LINEAR, phi0, 0.5, 20, frozen_u=u))
    assert np.all(np.diff(series.phi[:, 0]) < 0)
