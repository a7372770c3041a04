"""Viscous limit: explicit Euler in BV, the Picard operator on time stacks, safe horizons.

The state evolves by ``d/dt x = -r(x) beta(x) kappa(u)`` where ``u`` solves the
pressure equation at the current state and ``r`` is ``1 - phi`` for the
viscous-full variant and 1 otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import elliptic
from .grid import Field, Grid
from .model import CoefficientSet, ModelError
from .norms import RunReport, TimeSeries, bv_norm, lp_norm, tv_seminorm

logger = logging.getLogger(__name__)


class NonContraction(RuntimeError):
    def __init__(self, msg, report: RunReport | None = None):
        super().__init__(msg)
        self.report = report


@dataclass
class ViscousRunConfig:
    coeffs: CoefficientSet
    phi0: Field
    T: float
    N: int
    mode: str = "euler"
    picard_tol: float = 1e-10
    picard_max: int = 60
    eps_min: float | None = None
    R_max: float | None = None
    frozen_u: float | None = None
    zeta_override: tuple | None = None
    elliptic_tol: float = 1e-10

    def __post_init__(self):
        if self.eps_min is None:
            self.eps_min = self.coeffs.eps
        if self.R_max is None:
            self.R_max = self.coeffs.R
        x = self.phi0.values
        if not (x.min() > self.coeffs.eps and x.max() < self.coeffs.R):
            raise ModelError(
                f"initial state must satisfy eps < x < R (got [{x.min():g}, {x.max():g}])"
            )
        if self.T <= 0 or self.N < 1:
            raise ModelError("need T > 0 and N >= 1")

    @property
    def grid(self) -> Grid:
        return self.phi0.grid


def solve_pressure(
    grid: Grid,
    x: np.ndarray,
    coeffs: CoefficientSet,
    *,
    u_guess=None,
    frozen_u: float | None = None,
    zeta_override=None,
    tol: float = 1e-10,
) -> np.ndarray:
    """Pressure at state ``x``; ``frozen_u`` bypasses the elliptic solve."""
    if frozen_u is not None:
        return np.full(grid.shape, float(frozen_u))
    prob = elliptic.EllipticProblem.from_state(grid, x, coeffs, zeta_override, tol=tol)
    return elliptic.solve(prob, u_guess).u.values


def relaxation_rate(x: np.ndarray, u: np.ndarray, coeffs: CoefficientSet) -> np.ndarray:
    """``r(x) beta(x) kappa(u)``, the right-hand side of the state ODE up to sign."""
    return coeffs.rate_factor(x) * coeffs.beta(x) * coeffs.kappa(u)


def euler_step(phi_k, tau: float, coeffs: CoefficientSet, *, u_guess=None, **kw):
    """One explicit Euler step; returns ``(x_next, u_k)`` as arrays."""
    if tau <= 0:
        raise ModelError("tau must be > 0")
    if isinstance(phi_k, Field):
        grid, x = phi_k.grid, phi_k.values
    else:
        grid, x = kw.pop("grid"), np.asarray(phi_k, dtype=float)
    u = solve_pressure(grid, x, coeffs, u_guess=u_guess, **kw)
    return x - tau * relaxation_rate(x, u, coeffs), u


def _step_record(t, x, u, coeffs, grid) -> dict:
    phi = coeffs.to_porosity(x)
    return {
        "t": t,
        "phi_inf": lp_norm(phi, np.inf),
        "phi_min": float(phi.min()),
        "phi_bv": bv_norm(phi, grid),
        "state_bv": bv_norm(x, grid),
        "tv": tv_seminorm(phi, grid),
        "rate_inf": lp_norm(relaxation_rate(x, u, coeffs), np.inf),
        "u_inf": lp_norm(u, np.inf),
    }


def _in_bounds(x, lo, hi) -> bool:
    return bool(x.min() >= lo and x.max() <= hi)


def run_euler(cfg: ViscousRunConfig) -> tuple[TimeSeries, RunReport]:
    """Explicit Euler on ``t_k = k T / N``; stops early when the state leaves the bounds.

    The stored nodes are the step values; linear interpolation between them is
    the piecewise-linear interpolant of the scheme.
    """
    grid, coeffs = cfg.grid, cfg.coeffs
    tau = cfg.T / cfg.N
    kw = dict(frozen_u=cfg.frozen_u, zeta_override=cfg.zeta_override, tol=cfg.elliptic_tol)
    x = np.array(cfg.phi0.values)
    states, pressures, times = [], [], []
    report = RunReport()
    u = None
    for k in range(cfg.N + 1):
        u = solve_pressure(grid, x, coeffs, u_guess=u, **kw)
        t = k * tau
        states.append(x)
        pressures.append(u)
        times.append(t)
        report.steps.append(_step_record(t, x, u, coeffs, grid))
        if k == cfg.N:
            break
        x_next = x - tau * relaxation_rate(x, u, coeffs)
        if not _in_bounds(x_next, cfg.eps_min, cfg.R_max):
            report.termination = "bound-exit"
            report.exit_time = (k + 1) * tau
            logger.info("state left [%g, %g] at t=%g", cfg.eps_min, cfg.R_max, report.exit_time)
            break
        x = x_next
    report.achieved_T = times[-1]
    report.extra["interpolant"] = "piecewise-linear"
    st = np.array(states)
    series = TimeSeries(grid, np.array(times), coeffs.to_porosity(st), np.array(pressures), st)
    return series, report


def picard_lambda(
    series: TimeSeries, coeffs: CoefficientSet, *, u_cache=None, **kw
) -> TimeSeries:
    """Apply the integral operator: ``x0 - trapezoid int_0^t rate(x(s), u(x(s))) ds``.

    ``u_cache`` (list, same length as the series) warm-starts and receives the
    node pressures.
    """
    grid = series.grid
    x_nodes = series.state
    rates = np.empty_like(x_nodes)
    us = np.empty_like(x_nodes)
    for k in range(len(series)):
        guess = None if u_cache is None else u_cache[k]
        us[k] = solve_pressure(grid, x_nodes[k], coeffs, u_guess=guess, **kw)
        rates[k] = relaxation_rate(x_nodes[k], us[k], coeffs)
        if u_cache is not None:
            u_cache[k] = us[k]
    dt = np.diff(series.times).reshape((-1,) + (1,) * grid.d)
    incr = 0.5 * dt * (rates[1:] + rates[:-1])
    integral = np.concatenate([np.zeros((1,) + grid.shape), np.cumsum(incr, axis=0)])
    out = x_nodes[0] - integral
    return TimeSeries(grid, series.times, coeffs.to_porosity_safe(out), us, out)


def picard_solve(cfg: ViscousRunConfig) -> tuple[TimeSeries, RunReport]:
    """Iterate the integral operator from the constant-in-time initial guess."""
    grid, coeffs = cfg.grid, cfg.coeffs
    times = np.linspace(0.0, cfg.T, cfg.N + 1)
    x0 = np.array(cfg.phi0.values)
    stack = np.broadcast_to(x0, (len(times),) + grid.shape).copy()
    cur = TimeSeries(grid, times, coeffs.to_porosity_safe(stack), np.zeros_like(stack), stack)
    kw = dict(frozen_u=cfg.frozen_u, zeta_override=cfg.zeta_override, tol=cfg.elliptic_tol)
    cache = [None] * len(times)
    report = RunReport()
    diffs = []
    above = 0
    for j in range(1, cfg.picard_max + 1):
        new = picard_lambda(cur, coeffs, u_cache=cache, **kw)
        diff = float(np.max(np.abs(new.state - cur.state)))
        diffs.append(diff)
        if len(diffs) >= 2 and diffs[-2] > 0:
            q = diff / diffs[-2]
            report.contraction.append(q)
            above = above + 1 if q >= 1 else 0
            if above >= 2:
                report.termination = "non-contraction"
                report.extra["increments"] = diffs
                raise NonContraction(
                    f"Picard factors >= 1 twice in a row (q={q:.3g}); try a smaller T", report
                )
        cur = new
        if diff <= cfg.picard_tol:
            break
    else:
        report.termination = "non-contraction"
        report.extra["increments"] = diffs
        raise NonContraction(f"no convergence in {cfg.picard_max} Picard iterations", report)
    # pressures consistent with the returned state
    us = [solve_pressure(grid, cur.state[k], coeffs, u_guess=cache[k], **kw) for k in range(len(times))]
    cur = TimeSeries(grid, times, cur.phi, np.array(us), cur.state)
    report.achieved_T = cfg.T
    report.extra["increments"] = diffs
    report.extra["iterations"] = len(diffs)
    if not _in_bounds(cur.state, cfg.eps_min, cfg.R_max):
        report.extra["bounds_violated"] = True
    return cur, report


def estimate_rate_bound(
    phi0: Field,
    coeffs: CoefficientSet,
    *,
    samples: int = 8,
    seed: int = 0,
    safety: float = 1.5,
    lo: float | None = None,
    hi: float | None = None,
    **kw,
) -> float:
    """Safety factor times the largest sampled ``||rate||_inf`` over admissible states."""
    grid = phi0.grid
    lo = coeffs.eps if lo is None else lo
    hi = coeffs.R if hi is None else hi
    x0 = phi0.values
    rng = np.random.default_rng(seed)
    margin = min(x0.min() - lo, hi - x0.max())
    best = 0.0
    candidates = [x0]
    for _ in range(samples):
        noise = rng.uniform(-1.0, 1.0, grid.shape)
        candidates.append(np.clip(x0 + margin * noise, lo, hi))
    u = None
    for x in candidates:
        u = solve_pressure(grid, x, coeffs, u_guess=u, **kw)
        best = max(best, lp_norm(relaxation_rate(x, u, coeffs), np.inf))
    return safety * best


def select_safe_horizon(
    phi0: Field,
    coeffs: CoefficientSet,
    *,
    cap: float = 1e6,
    lo: float | None = None,
    hi: float | None = None,
    **kw,
) -> float:
    """Largest ``T`` with ``x0 - T Cbar >= lo`` and ``x0 + T Cbar <= hi``."""
    lo = coeffs.eps if lo is None else lo
    hi = coeffs.R if hi is None else hi
    x0 = phi0.values
    m_lo, m_hi = x0.min() - lo, hi - x0.max()
    if m_lo <= 0 or m_hi <= 0:
        raise ModelError("initial state touches the admissible bounds; safe horizon is zero")
    cbar = estimate_rate_bound(phi0, coeffs, lo=lo, hi=hi, **kw)
    if cbar == 0:
        return cap
    return float(min(m_lo / cbar, m_hi / cbar, cap))


@dataclass
class BlowupResult:
    T_max: float | None
    series: TimeSeries
    report: RunReport
    windows: list[float] = field(default_factory=list)


def continue_to_blowup(
    phi0: Field,
    coeffs: CoefficientSet,
    *,
    window: float,
    dt: float,
    eps_min: float,
    R_max: float,
    t_cap: float,
    frozen_u: float | None = None,
    seed: int = 0,
) -> BlowupResult:
    """Chain Euler windows of safe length, restarting from each final state.

    Windows are at least one step ``dt`` long so the chain cannot stall near
    a bound.  ``T_max`` is the time of the first bound exit, or ``None`` if
    ``t_cap`` is reached.
    """
    grid = phi0.grid
    work = replace(coeffs, eps=eps_min, R=R_max)
    t = 0.0
    x = np.array(phi0.values)
    times, states, pressures = [], [], []
    report = RunReport()
    windows = []
    while t < t_cap - 1e-12 * t_cap:
        fx = Field(grid, x)
        try:
            safe = select_safe_horizon(
                fx, work, cap=window, lo=eps_min, hi=R_max, frozen_u=frozen_u, seed=seed
            )
        except ModelError:
            safe = dt
        n = max(1, int(np.floor(min(max(safe, dt), window) / dt + 1e-9)))
        length = min(n * dt, t_cap - t)
        cfg = ViscousRunConfig(
            work, fx, length, n, eps_min=eps_min, R_max=R_max, frozen_u=frozen_u
        )
        series, rep = run_euler(cfg)
        skip = 1 if times else 0
        times.extend(t + series.times[skip:])
        states.extend(series.state[skip:])
        pressures.extend(series.u[skip:])
        report.steps.extend(dict(s, t=t + s["t"]) for s in rep.steps[skip:])
        windows.append(length)
        if rep.termination == "bound-exit":
            report.termination = "bound-exit"
            report.exit_time = t + rep.exit_time
            report.achieved_T = times[-1]
            break
        t = t + series.times[-1]
        x = np.array(series.state[-1])
    else:
        report.achieved_T = times[-1] if times else 0.0
    st = np.array(states)
    ts = TimeSeries(grid, np.array(times), coeffs.to_porosity_safe(st), np.array(pressures), st)
    return BlowupResult(report.exit_time, ts, report, windows)
