"""Coupled porosity-pressure system with compressibility ``Q > 0``.

The pressure obeys ``Q u_t = div(alpha (grad u + zeta)) - beta kappa(u)`` and
the state is recovered from the integral identity::

    x(t) = x0 + Q u0 - Q u(t) - int_0^t beta(x) kappa(u) ds

Time stepping is backward Euler for ``u`` with a per-step fixed point between
the pressure solve and the identity above.  ``xi_apply``/``xi_solve`` work on
whole time stacks instead, and ``galerkin_reference`` is an independent sine
spectral discretization of the pressure equation for a prescribed state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import elliptic
from .grid import Field, Grid, Partition, jump_faces
from .model import CoefficientSet, ModelError
from .norms import (
    HOLDER_MAX_POINTS,
    NormError,
    RunReport,
    TimeSeries,
    bv_norm,
    lp_norm,
    piecewise_holder_norm,
    w12_norm,
)
from .viscous import NonContraction, solve_pressure

logger = logging.getLogger(__name__)


class InnerIterationError(RuntimeError):
    """The per-step fixed point did not settle; usually ``tau`` is too large."""


class GalerkinError(RuntimeError):
    pass


@dataclass
class ViscoRunConfig:
    """Setup of one viscoelastic run.

    ``phi0`` is the initial porosity; for the log-transformed variant it is
    mapped to ``lam0`` internally and ``eps``/``R`` bound ``lam``.
    """

    coeffs: CoefficientSet
    phi0: Field
    T: float
    N: int
    u0: Field | None = None
    inner_tol: float = 1e-10
    inner_max: int = 30
    xi_tol: float = 1e-10
    xi_max: int = 60
    gamma: float = 0.5
    partition: Partition | None = None
    eps_min: float | None = None
    R_max: float | None = None
    jump_theta: float | None = None
    zeta_override: tuple | None = None
    elliptic_tol: float = 1e-10

    def __post_init__(self):
        if not self.coeffs.Q > 0:
            raise ModelError("the viscoelastic system needs Q > 0")
        if self.coeffs.variant not in ("small-porosity", "log-transformed"):
            raise ModelError(f"variant {self.coeffs.variant!r} is not a viscoelastic variant")
        if self.T <= 0 or self.N < 1:
            raise ModelError("need T > 0 and N >= 1")
        if self.eps_min is None:
            self.eps_min = self.coeffs.eps
        if self.R_max is None:
            self.R_max = self.coeffs.R
        if self.u0 is None:
            self.u0 = Field(self.grid, np.zeros(self.grid.shape))
        x0 = self.state0
        if not (x0.min() > self.coeffs.eps and x0.max() < self.coeffs.R):
            raise ModelError(
                f"initial state must satisfy eps < x < R (got [{x0.min():g}, {x0.max():g}])"
            )

    @property
    def grid(self) -> Grid:
        return self.phi0.grid

    @property
    def state0(self) -> np.ndarray:
        return self.coeffs.from_porosity(self.phi0.values)

    @property
    def tau(self) -> float:
        return self.T / self.N


def _rate(x, u, coeffs: CoefficientSet) -> np.ndarray:
    return coeffs.beta(x) * coeffs.kappa(u)


def backward_euler_pressure(
    grid: Grid,
    x: np.ndarray,
    u_prev: np.ndarray,
    tau: float,
    coeffs: CoefficientSet,
    *,
    u_guess=None,
    zeta_override=None,
    tol: float = 1e-10,
) -> np.ndarray:
    """One implicit step of the pressure equation with coefficients frozen at ``x``."""
    prob = elliptic.EllipticProblem.from_state(
        grid, x, coeffs, zeta_override, mass=coeffs.Q / tau, u_prev=u_prev, tol=tol
    )
    return elliptic.solve(prob, u_prev if u_guess is None else u_guess).u.values


def parabolic_step(
    u_k: np.ndarray,
    x_k: np.ndarray,
    history: np.ndarray,
    tau: float,
    coeffs: CoefficientSet,
    *,
    x0: np.ndarray,
    u0: np.ndarray,
    grid: Grid,
    tol: float = 1e-10,
    max_iter: int = 30,
    zeta_override=None,
    elliptic_tol: float = 1e-10,
):
    """Advance ``(u, x)`` by ``tau``.

    ``history`` is the accumulated integral ``I_k`` at the current node.
    Returns ``(u_next, x_next, I_next, iterations)``.
    """
    base = x0 + coeffs.Q * u0
    rate_k = _rate(x_k, u_k, coeffs)
    x_star = np.array(x_k)
    u_new = np.array(u_k)
    for it in range(1, max_iter + 1):
        u_new = backward_euler_pressure(
            grid, x_star, u_k, tau, coeffs, u_guess=u_new,
            zeta_override=zeta_override, tol=elliptic_tol,
        )
        hist = history + 0.5 * tau * (rate_k + _rate(x_star, u_new, coeffs))
        x_new = base - coeffs.Q * u_new - hist
        change = float(np.max(np.abs(x_new - x_star)))
        x_star = x_new
        if change <= tol:
            break
        if np.any(x_star <= 0):
            raise InnerIterationError("state left the positive range inside a step")
    else:
        raise InnerIterationError(
            f"per-step coupling did not converge in {max_iter} iterations (last change "
            f"{change:.3e}); reduce the time step"
        )
    hist = history + 0.5 * tau * (rate_k + _rate(x_star, u_new, coeffs))
    return u_new, x_star, hist, it


def mild_residual(x, u, hist, x0, u0, Q) -> float:
    """``max |x + Q u + I - x0 - Q u0|``."""
    return float(np.max(np.abs(x + Q * u + hist - x0 - Q * u0)))


def _record(t, x, u, coeffs, grid, resid, iters) -> dict:
    phi = coeffs.to_porosity_safe(x)
    return {
        "t": t,
        "phi_inf": lp_norm(phi, np.inf),
        "phi_min": float(phi.min()),
        "phi_max": float(phi.max()),
        "phi_bv": bv_norm(phi, grid),
        "u_inf": lp_norm(u, np.inf),
        "u_w12": w12_norm(u, grid),
        "mild_residual": resid,
        "inner_iters": iters,
    }


def run_viscoelastic(cfg: ViscoRunConfig) -> tuple[TimeSeries, RunReport]:
    """``N`` backward-Euler steps on ``[0, T]``; stops early if the state leaves the bounds."""
    grid, coeffs = cfg.grid, cfg.coeffs
    tau = cfg.tau
    x0 = cfg.state0
    u0 = np.array(cfg.u0.values)
    x, u = np.array(x0), np.array(u0)
    hist = np.zeros(grid.shape)
    times, states, pressures = [0.0], [x], [u]
    report = RunReport()
    report.steps.append(_record(0.0, x, u, coeffs, grid, 0.0, 0))
    jumps0 = None
    if cfg.jump_theta is not None:
        jumps0 = jump_faces(coeffs.to_porosity(x0), grid, cfg.jump_theta)
        report.extra["jump_changes"] = 0
    for k in range(cfg.N):
        u, x_new, hist_new, iters = parabolic_step(
            u, x, hist, tau, coeffs, x0=x0, u0=u0, grid=grid,
            tol=cfg.inner_tol, max_iter=cfg.inner_max,
            zeta_override=cfg.zeta_override, elliptic_tol=cfg.elliptic_tol,
        )
        t = (k + 1) * tau
        if not (x_new.min() >= cfg.eps_min and x_new.max() <= cfg.R_max):
            report.termination = "bound-exit"
            report.exit_time = t
            break
        x, hist = x_new, hist_new
        resid = mild_residual(x, u, hist, x0, u0, coeffs.Q)
        times.append(t)
        states.append(x)
        pressures.append(u)
        rec = _record(t, x, u, coeffs, grid, resid, iters)
        if jumps0 is not None:
            same = all(
                np.array_equal(a, b)
                for a, b in zip(jumps0, jump_faces(coeffs.to_porosity(x), grid, cfg.jump_theta))
            )
            rec["jumps_same"] = same
            report.extra["jump_changes"] += 0 if same else 1
        report.steps.append(rec)
    report.achieved_T = times[-1]
    report.extra["max_mild_residual"] = max(s["mild_residual"] for s in report.steps)
    st = np.array(states)
    series = TimeSeries(
        grid, np.array(times), coeffs.to_porosity_safe(st), np.array(pressures), st
    )
    if cfg.partition is not None:
        try:
            report.extra["holder_phi"] = piecewise_holder_norm(
                series.times, series.phi, grid, cfg.partition, cfg.gamma
            )
        except NormError:
            logger.info("skipping Hölder diagnostics: grid too fine")
    return series, report


def select_safe_horizon(
    phi0: Field,
    coeffs: CoefficientSet,
    u0: Field | None = None,
    *,
    samples: int = 8,
    seed: int = 0,
    safety: float = 1.5,
    cap: float = 1e6,
) -> float:
    """Horizon keeping ``x0 + Q (u0 - u) - t Cbar`` inside ``(eps, R)``.

    The pressure swing is bounded by ``||u0||_inf`` plus ``safety`` times the
    largest sampled steady pressure; ``Cbar`` is ``safety`` times the largest
    sampled relaxation rate.  Samples are ``x0`` and random admissible states.
    """
    grid = phi0.grid
    x0 = coeffs.from_porosity(phi0.values)
    m_lo, m_hi = x0.min() - coeffs.eps, coeffs.R - x0.max()
    if m_lo <= 0 or m_hi <= 0:
        raise ModelError("initial state touches the admissible bounds; safe horizon is zero")
    rng = np.random.default_rng(seed)
    margin = min(m_lo, m_hi)
    cands = [x0] + [
        np.clip(x0 + margin * rng.uniform(-1.0, 1.0, grid.shape), coeffs.eps, coeffs.R)
        for _ in range(samples)
    ]
    u_sup, rate_sup = 0.0, 0.0
    u = None
    for x in cands:
        u = solve_pressure(grid, x, coeffs, u_guess=u)
        u_sup = max(u_sup, lp_norm(u, np.inf))
        rate_sup = max(rate_sup, lp_norm(_rate(x, u, coeffs), np.inf))
    swing = coeffs.Q * (safety * u_sup + (0.0 if u0 is None else lp_norm(u0.values, np.inf)))
    if swing >= margin:
        raise ModelError(
            f"pressure swing {swing:.3g} alone exceeds the bound margin {margin:.3g}"
        )
    cbar = safety * rate_sup
    if cbar == 0:
        return cap
    return float(min((m_lo - swing) / cbar, (m_hi - swing) / cbar, cap))


# -- whole-stack operator -----------------------------------------------------------


def pressure_history(
    times: np.ndarray,
    states: np.ndarray,
    u0: np.ndarray,
    coeffs: CoefficientSet,
    grid: Grid,
    *,
    zeta_override=None,
    tol: float = 1e-10,
) -> np.ndarray:
    """Backward-Euler pressure driven by a prescribed state stack."""
    us = np.empty_like(states)
    us[0] = u0
    for k in range(len(times) - 1):
        us[k + 1] = backward_euler_pressure(
            grid, states[k + 1], us[k], times[k + 1] - times[k], coeffs,
            zeta_override=zeta_override, tol=tol,
        )
    return us


def xi_apply(series: TimeSeries, cfg: ViscoRunConfig) -> TimeSeries:
    """One application of the whole-stack operator to the state history in ``series``."""
    grid, coeffs = cfg.grid, cfg.coeffs
    x0 = cfg.state0
    u0 = np.array(cfg.u0.values)
    xs = series.state
    us = pressure_history(
        series.times, xs, u0, coeffs, grid, zeta_override=cfg.zeta_override, tol=cfg.elliptic_tol
    )
    rates = _rate(xs, us, coeffs)
    dt = np.diff(series.times).reshape((-1,) + (1,) * grid.d)
    integral = np.concatenate(
        [np.zeros((1,) + grid.shape), np.cumsum(0.5 * dt * (rates[1:] + rates[:-1]), axis=0)]
    )
    out = x0 + coeffs.Q * u0 - coeffs.Q * us - integral
    return TimeSeries(grid, series.times, coeffs.to_porosity_safe(out), us, out)


def _holder_ok(cfg: ViscoRunConfig) -> bool:
    if cfg.partition is None:
        return False
    largest = max(int(np.sum(cfg.partition.labels == j)) for j in range(1, cfg.partition.M + 1))
    return (cfg.N + 1) * largest <= HOLDER_MAX_POINTS


def xi_solve(cfg: ViscoRunConfig) -> tuple[TimeSeries, RunReport]:
    """Fixed-point iteration of ``xi_apply`` from the constant-in-time initial state.

    Contraction factors are recorded in ``C(L^inf)``; with a partition on a
    coarse grid the piecewise Hölder factors go to ``extra["holder_contraction"]``.
    """
    grid, coeffs = cfg.grid, cfg.coeffs
    times = np.linspace(0.0, cfg.T, cfg.N + 1)
    x0 = cfg.state0
    stack = np.broadcast_to(x0, (len(times),) + grid.shape).copy()
    cur = TimeSeries(grid, times, coeffs.to_porosity_safe(stack), np.zeros_like(stack), stack)
    report = RunReport()
    holder = _holder_ok(cfg)
    diffs, hdiffs, hq = [], [], []
    above = 0
    for j in range(1, cfg.xi_max + 1):
        if np.any(cur.state <= 0):
            report.termination = "non-contraction"
            raise NonContraction("iterate left the admissible range; try a smaller T", report)
        new = xi_apply(cur, cfg)
        delta = new.state - cur.state
        diff = float(np.max(np.abs(delta)))
        diffs.append(diff)
        if holder:
            hdiffs.append(
                piecewise_holder_norm(times, delta, grid, cfg.partition, cfg.gamma)
            )
            if len(hdiffs) >= 2 and hdiffs[-2] > 0 and hdiffs[-1] > 0:
                hq.append(hdiffs[-1] / hdiffs[-2])
        if len(diffs) >= 2 and diffs[-2] > 0 and diff > 0:
            q = diff / diffs[-2]
            report.contraction.append(q)
            above = above + 1 if q >= 1 else 0
            if above >= 2:
                report.termination = "non-contraction"
                report.extra["increments"] = diffs
                raise NonContraction(
                    f"contraction factors >= 1 twice in a row (q={q:.3g}); try a smaller T", report
                )
        cur = new
        if diff <= cfg.xi_tol:
            break
    else:
        report.termination = "non-contraction"
        report.extra["increments"] = diffs
        raise NonContraction(f"no convergence in {cfg.xi_max} iterations", report)
    report.achieved_T = cfg.T
    report.extra["increments"] = diffs
    report.extra["iterations"] = len(diffs)
    if holder:
        report.extra["holder_contraction"] = hq
    return cur, report


# -- spectral reference ---------------------------------------------------------------


@dataclass
class GalerkinConfig:
    """Sine-mode Galerkin settings (1D only).

    ``substeps`` is the total number of RK4 steps over the horizon, spread
    evenly over the intervals of the driving series.
    """

    modes: int = 32
    substeps: int = 1000
    quad_points: int = 4

    def __post_init__(self):
        if self.modes < 1 or self.substeps < 1 or self.quad_points < 1:
            raise GalerkinError("modes, substeps and quad_points must be >= 1")


class _SineBasis:
    """``w_k = sqrt(2/L) sin(k pi x / L)`` sampled at per-cell Gauss points."""

    def __init__(self, grid: Grid, modes: int, npts: int):
        L = grid.extents[0]
        h = grid.h[0]
        gx, gw = np.polynomial.legendre.leggauss(npts)
        left = np.arange(grid.cells[0]) * h
        self.x = (left[:, None] + 0.5 * h * (gx[None, :] + 1.0)).ravel()
        self.w = np.tile(0.5 * h * gw, grid.cells[0])
        self.cell = np.repeat(np.arange(grid.cells[0]), npts)
        k = np.arange(1, modes + 1)
        arg = np.outer(self.x, k) * math.pi / L
        amp = math.sqrt(2.0 / L)
        self.W = amp * np.sin(arg)
        self.dW = amp * (k * math.pi / L) * np.cos(arg)
        self.centers = grid.centers_1d(0)
        self.Wc = amp * np.sin(np.outer(self.centers, k) * math.pi / L)

    def project(self, cell_values: np.ndarray) -> np.ndarray:
        """L2 projection of a piecewise-constant cell function."""
        return self.W.T @ (self.w * cell_values[self.cell])


def _galerkin_rhs(d, basis: _SineBasis, alpha_q, beta_q, g, coeffs: CoefficientSet):
    u_q = basis.W @ d
    react = beta_q / coeffs.sigma(u_q)
    Ad = basis.dW.T @ (basis.w * alpha_q * (basis.dW @ d))
    Bd = basis.W.T @ (basis.w * react * u_q)
    return (g - Ad - Bd) / coeffs.Q


def galerkin_reference(
    phi_series: TimeSeries,
    u0: Field,
    gcfg: GalerkinConfig,
    coeffs: CoefficientSet,
    *,
    zeta_override=None,
) -> TimeSeries:
    """Spectral pressure history for the state stack in ``phi_series`` (frozen coupling).

    Solves ``Q d' = g - A d - B(d) d`` with classical RK4; the state is
    interpolated linearly in time between the series nodes.
    """
    grid = phi_series.grid
    if grid.d != 1:
        raise GalerkinError("the spectral reference is 1D only")
    if not coeffs.Q > 0:
        raise GalerkinError("needs Q > 0")
    basis = _SineBasis(grid, gcfg.modes, gcfg.quad_points)
    times = phi_series.times
    xs = phi_series.state
    n_int = len(times) - 1
    per = max(1, math.ceil(gcfg.substeps / max(n_int, 1)))

    def coeffs_at(x):
        a = coeffs.alpha(x)[basis.cell]
        b = coeffs.beta(x)[basis.cell]
        if zeta_override is not None:
            z = np.interp(basis.x, grid.faces_1d(0), zeta_override[0])
        else:
            z = coeffs.zeta(x)[..., 0][basis.cell]
        g = -basis.dW.T @ (basis.w * a * z)
        return a, b, g

    d = basis.project(np.asarray(u0.values, dtype=float))
    out = [basis.Wc @ d]
    coef = [d]
    # stiffness guard: RK4 is stable for |lambda dt| below about 2.78
    amax = float(np.max(coeffs.alpha(xs)))
    bmax = float(np.max(coeffs.beta(xs))) / (coeffs.c0 * (1 - 2 * coeffs.c1))
    lam = (amax * (gcfg.modes * math.pi / grid.extents[0]) ** 2 + bmax) / coeffs.Q
    dt_max = max(np.diff(times)) / per if n_int else 0.0
    if lam * dt_max > 2.7:
        raise GalerkinError(
            f"RK4 step too large for {gcfg.modes} modes (lambda*dt = {lam * dt_max:.3g}); "
            "increase substeps"
        )
    for k in range(n_int):
        t0, t1 = times[k], times[k + 1]
        dt = (t1 - t0) / per
        for s in range(per):
            def state(t):
                w = (t - t0) / (t1 - t0)
                return (1 - w) * xs[k] + w * xs[k + 1]

            ta = t0 + s * dt
            ca = coeffs_at(state(ta))
            cm = coeffs_at(state(ta + 0.5 * dt))
            cb = coeffs_at(state(ta + dt))
            k1 = _galerkin_rhs(d, basis, *ca, coeffs)
            k2 = _galerkin_rhs(d + 0.5 * dt * k1, basis, *cm, coeffs)
            k3 = _galerkin_rhs(d + 0.5 * dt * k2, basis, *cm, coeffs)
            k4 = _galerkin_rhs(d + dt * k3, basis, *cb, coeffs)
            d = d + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(d)):
            raise GalerkinError("Galerkin coefficients blew up")
        out.append(basis.Wc @ d)
        coef.append(d)
    return TimeSeries(
        grid, times, phi_series.phi, np.array(out), xs, {"coefficients": np.array(coef)}
    )


def galerkin_coefficients(u: Field, modes: int, quad_points: int = 4) -> np.ndarray:
    """Sine-mode coefficients of a cell field (L2 projection)."""
    return _SineBasis(u.grid, modes, quad_points).project(np.asarray(u.values, dtype=float))


# -- sup bound ----------------------------------------------------------------------------


@dataclass
class SupBoundReport:
    C_hat: float
    u0_sup: float
    margins: list[float] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.C_hat)


def sup_bound_check(series: TimeSeries, coeffs: CoefficientSet | None = None) -> SupBoundReport:
    """Smallest ``C`` with ``sup|u(t)| <= sup|u0| + C (int_0^t ||u||_2^2)^(1/2)`` for all nodes."""
    grid = series.grid
    u = series.u
    sup0 = lp_norm(u[0], np.inf)
    l2sq = np.array([lp_norm(v, 2, grid) ** 2 for v in u])
    dt = np.diff(series.times)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (l2sq[1:] + l2sq[:-1]))])
    c_hat = 0.0
    margins = []
    for k in range(1, len(series)):
        excess = lp_norm(u[k], np.inf) - sup0
        margins.append(excess)
        if excess <= 0:
            continue
        if cum[k] <= 0:
            c_hat = math.inf
            break
        c_hat = max(c_hat, excess / math.sqrt(cum[k]))
    return SupBoundReport(c_hat, sup0, margins)
