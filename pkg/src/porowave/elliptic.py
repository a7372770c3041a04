"""Semilinear pressure equation solved by damped Newton on its convex energy.

Discrete problem, per cell::

    A u + beta * kappa(u) + mass * u = div(abar * zeta_face) + mass * u_prev

with ``A = -div(abar grad .)`` under homogeneous Dirichlet closure.  ``mass``
is zero for the elliptic equation and ``Q / tau`` inside a backward-Euler
step of the parabolic equation.  The left side is the gradient of::

    J(u) = h^d [ 1/2 <A u, u> + sum beta V(u) + mass/2 sum u^2 - sum g u ]

where ``V(u) = int_0^u kappa(s) ds``.  Since ``kappa' > 0`` the Hessian is
SPD, so Newton with Armijo backtracking on ``J`` converges from ``u = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import DiffusionOperator, Field, Grid, divergence, zeta_faces
from .model import CoefficientSet
from .norms import lp_norm, w12_norm

logger = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class EllipticError(RuntimeError):
    pass


# -- potential V ----------------------------------------------------------------


def _gl_panels(a: np.ndarray, b: np.ndarray, coeffs: CoefficientSet, panels: int) -> np.ndarray:
    width = (b - a) / panels
    total = np.zeros(np.shape(a))
    for p in range(panels):
        left = a + p * width
        for x, w in zip(_GL_NODES, _GL_WEIGHTS):
            total = total + w * coeffs.kappa(left + x * width)
    return total * width


def kappa_integral(
    a, b, coeffs: CoefficientSet, rtol: float = 1e-12, closed_form: bool = True
) -> np.ndarray:
    """``int_a^b kappa(s) ds`` elementwise.

    Closed form for constant sigma (unless ``closed_form`` is off); otherwise
    composite 8-point Gauss-Legendre with panel doubling until successive
    values agree to ``rtol``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if coeffs.c1 == 0 and closed_form:
        return (b - a) * (b + a) / (2.0 * coeffs.c0)
    span = float(np.max(np.abs(b - a))) if np.size(a) else 0.0
    panels = max(1, int(np.ceil(span / coeffs.c2)))
    coarse = _gl_panels(a, b, coeffs, panels)
    while True:
        fine = _gl_panels(a, b, coeffs, 2 * panels)
        err = np.abs(fine - coarse)
        scale = np.maximum(np.abs(fine), np.abs(b - a) * np.abs(coeffs.kappa(b)) + 1e-300)
        if np.all(err <= rtol * scale):
            return fine
        panels *= 2
        if panels > 1 << 14:
            raise EllipticError("potential quadrature did not converge")
        coarse = fine


def potential(u, coeffs: CoefficientSet) -> np.ndarray:
    """``V(u) = int_0^u kappa``; ``u**2 / (2 c0)`` when sigma is constant."""
    u = np.asarray(u, dtype=float)
    return kappa_integral(np.zeros_like(u), u, coeffs)


# -- problem and solution ---------------------------------------------------------


@dataclass
class EllipticProblem:
    """Coefficients of one pressure solve on a fixed porosity state.

    ``zeta`` holds the face values of the force field (one array per axis).
    """

    grid: Grid
    alpha: np.ndarray
    beta: np.ndarray
    zeta: tuple
    coeffs: CoefficientSet
    mass: float = 0.0
    u_prev: np.ndarray | None = None
    tol: float = 1e-10
    max_newton: int = 50
    harmonic: bool = True

    def __post_init__(self):
        g = self.grid
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), g.shape)
        self.beta = np.broadcast_to(np.asarray(self.beta, dtype=float), g.shape)
        if np.any(self.alpha <= 0):
            raise EllipticError("alpha must be > 0 in every cell")
        if np.any(self.beta < 0):
            raise EllipticError("beta must be >= 0 in every cell")
        self.op = DiffusionOperator(g, self.alpha, None, self.harmonic)
        self.flux0 = tuple(ab * z for ab, z in zip(self.op.face_coeff, self.zeta))
        rhs = divergence(self.flux0, g)
        if self.mass:
            rhs = rhs + self.mass * np.asarray(self.u_prev, dtype=float).reshape(g.shape)
        self.rhs = rhs

    @classmethod
    def from_state(
        cls,
        grid: Grid,
        state,
        coeffs: CoefficientSet,
        zeta_override: tuple | None = None,
        **kw,
    ) -> "EllipticProblem":
        x = np.asarray(state, dtype=float).reshape(grid.shape)
        zf = zeta_override if zeta_override is not None else zeta_faces(grid, coeffs.zeta(x))
        return cls(grid, coeffs.alpha(x), coeffs.beta(x), zf, coeffs, **kw)

    def residual(self, u: np.ndarray) -> np.ndarray:
        r = self.op.apply(u) + self.beta * self.coeffs.kappa(u) - self.rhs
        if self.mass:
            r = r + self.mass * u
        return r

    def energy(self, u: np.ndarray) -> float:
        vol = self.grid.cell_volume
        quad = 0.5 * np.sum(self.op.apply(u) * u)
        pot = np.sum(self.beta * potential(u, self.coeffs))
        mass = 0.5 * self.mass * np.sum(u * u) if self.mass else 0.0
        return float(vol * (quad + pot + mass - np.sum(self.rhs * u)))

    def energy_change(self, u: np.ndarray, p: np.ndarray, t: float, Ap: np.ndarray) -> float:
        """``J(u + t p) - J(u)`` evaluated without cancellation against ``J(u)``."""
        vol = self.grid.cell_volume
        lin = np.sum((self.op.apply(u) + self.mass * u - self.rhs) * p)
        quad = 0.5 * np.sum((Ap + self.mass * p) * p)
        pot = np.sum(self.beta * kappa_integral(u, u + t * p, self.coeffs))
        return float(vol * (t * lin + t * t * quad + pot))

    def jacobian_diag(self, u: np.ndarray) -> np.ndarray:
        return self.beta * self.coeffs.kappa_prime(u) + self.mass

    def weighted_norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(np.sum(r * r) * self.grid.cell_volume))


@dataclass
class EllipticSolution:
    u: Field
    residual_norm: float
    energy_trace: list[float] = field(default_factory=list)
    newton_iters: int = 0
    cg_iters_total: int = 0


def energy_J(problem: EllipticProblem, u) -> float:
    return problem.energy(np.asarray(u, dtype=float).reshape(problem.grid.shape))


def pcg(apply, b: np.ndarray, diag: np.ndarray, atol: float, maxiter: int = 10_000):
    """Jacobi-preconditioned CG with fixed-order reductions."""
    x = np.zeros_like(b)
    r = b.copy()
    if np.sqrt(np.sum(r * r)) <= atol:
        return x, 0
    z = r / diag
    p = z.copy()
    rz = np.sum(r * z)
    for it in range(1, maxiter + 1):
        Ap = apply(p)
        pAp = np.sum(p * Ap)
        if pAp <= 0:
            raise EllipticError("operator lost positive definiteness in CG")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if np.sqrt(np.sum(r * r)) <= atol:
            return x, it
        z = r / diag
        rz_new = np.sum(r * z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise EllipticError("CG did not converge")


def solve(problem: EllipticProblem, u0=None) -> EllipticSolution:
    """Damped Newton with Armijo backtracking on the energy."""
    g = problem.grid
    u = np.zeros(g.shape) if u0 is None else np.array(u0, dtype=float).reshape(g.shape)
    base_diag = problem.op.diagonal()

    r = problem.residual(u)
    rn = problem.weighted_norm(r)
    rn0 = max(rn, 1e-300)
    trace = [problem.energy(u)]
    cg_total = 0
    it = 0
    while rn > problem.tol:
        if it >= problem.max_newton:
            raise EllipticError(
                f"Newton did not converge in {problem.max_newton} iterations (residual {rn:.3e})"
            )
        it += 1
        jd = problem.jacobian_diag(u)

        def jac(v, jd=jd):
            return problem.op.apply(v) + jd * v

        # loose inner tolerance early, tight once the outer residual is small
        eta = min(1e-2, np.sqrt(rn / rn0))
        target = max(eta * rn, 1e-2 * problem.tol)
        p, k = pcg(jac, -r, base_diag + jd, target / np.sqrt(g.cell_volume))
        cg_total += k

        Ap = problem.op.apply(p)
        slope = float(np.sum(r * p)) * g.cell_volume
        if slope >= 0:
            raise EllipticError("Newton direction is not a descent direction")
        t = 1.0
        for _ in range(40):
            dJ = problem.energy_change(u, p, t, Ap)
            if dJ <= 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise EllipticError("line search failed; check the structural assumptions")
        u = u + t * p
        trace.append(trace[-1] + dJ)
        r = problem.residual(u)
        rn = problem.weighted_norm(r)
        logger.debug("newton %d: t=%g residual=%.3e", it, t, rn)

    return EllipticSolution(Field(g, u), rn, trace, it, cg_total)


@dataclass
class BoundReport:
    u_inf: float
    u_w12: float
    force_l2: float
    ratio: float
    flagged: bool


def uniform_bound_check(
    solution: EllipticSolution, problem: EllipticProblem, ceiling: float = np.inf
) -> BoundReport:
    """Sup and W^{1,2} size of ``u`` relative to ``||alpha zeta||_{L2}``."""
    g = problem.grid
    u = solution.u.values
    u_inf = lp_norm(u, np.inf)
    u_w12 = w12_norm(u, g)
    force = float(
        np.sqrt(sum(np.sum(fl * fl * w) for fl, w in zip(problem.flux0, g.face_weights())))
    )
    ratio = u_w12 / force if force > 0 else 0.0
    return BoundReport(u_inf, u_w12, force, ratio, bool(ratio > ceiling))
