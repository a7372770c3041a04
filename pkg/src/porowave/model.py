"""Coefficient functions, decompaction-weakening rheology and structural checks.

The state variable is the porosity ``phi`` for the small-porosity and viscous
variants, and ``lam = -log(1 - phi)`` for the log-transformed variant.  All
coefficient functions act elementwise on numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

VARIANTS = ("small-porosity", "log-transformed", "viscous-small", "viscous-full")
VISCOELASTIC_VARIANTS = ("small-porosity", "log-transformed")


class ModelError(ValueError):
    """Invalid parameters or a state value outside the admissible domain."""


@dataclass(frozen=True)
class CoefficientSet:
    """Physical and model parameters of one run.

    ``Q = 0`` selects the viscous limit.  ``eps`` and ``R`` bound the state
    variable (``lam`` for the log-transformed variant).
    """

    a0: float = 1.0
    n: float = 3.0
    b0: float = 1.0
    m: float = 1.0
    c0: float = 1.0
    c1: float = 0.0
    c2: float = 1.0
    Q: float = 1.0
    f: tuple[float, ...] = (1.0,)
    variant: str = "small-porosity"
    eps: float = 0.01
    R: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(float(v) for v in np.atleast_1d(self.f)))

    @property
    def d(self) -> int:
        return len(self.f)

    @property
    def viscous(self) -> bool:
        return self.variant.startswith("viscous") or self.Q == 0

    def parameter_errors(self) -> list[str]:
        """Violations of the parameter ranges; empty when valid."""
        errs = []
        for name in ("a0", "c0", "c2"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        if not self.b0 >= 0:
            errs.append("b0 must be >= 0")
        for name in ("n", "m"):
            if not getattr(self, name) >= 1:
                errs.append(f"{name} must be >= 1")
        if not 0 <= self.c1 < 0.5:
            errs.append("c1 must lie in [0, 1/2): inf sigma = c0*(1-2*c1) must be > 0")
        if not 0 < self.eps < self.R:
            errs.append("need 0 < eps < R")
        if not self.Q >= 0:
            errs.append("Q must be >= 0")
        if self.variant not in VARIANTS:
            errs.append(f"unknown variant {self.variant!r}")
        if self.variant == "viscous-full" and self.R >= 1:
            errs.append("viscous-full needs R < 1 (porosity below one)")
        if not all(np.isfinite(self.f)):
            errs.append("f must be finite")
        return errs

    def check(self) -> "CoefficientSet":
        errs = self.parameter_errors()
        if errs:
            raise ModelError("; ".join(errs))
        return self

    # -- rheology -----------------------------------------------------------

    def sigma(self, v):
        return sigma(v, self.c0, self.c1, self.c2)

    def sigma_prime(self, v):
        return sigma_prime(v, self.c0, self.c1, self.c2)

    def kappa(self, v):
        return kappa(v, self.c0, self.c1, self.c2)

    def kappa_prime(self, v):
        return kappa_prime(v, self.c0, self.c1, self.c2)

    # -- structure functions ------------------------------------------------

    def _porosity(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ModelError(f"state value must be > 0 for variant {self.variant}")
        if self.variant == "log-transformed":
            return -np.expm1(-x)
        return x

    def alpha(self, x):
        return self.a0 * self._porosity(x) ** self.n

    def beta(self, x):
        return self.b0 * self._porosity(x) ** self.m

    def zeta_factor(self, x):
        """Scalar factor multiplying ``f`` in the body-force term."""
        x = np.asarray(x, dtype=float)
        if self.variant == "log-transformed":
            self._porosity(x)
            return np.exp(-x)
        if self.variant == "viscous-full":
            return 1.0 - self._porosity(x)
        self._porosity(x)
        return np.ones_like(x)

    def zeta(self, x):
        """Force vector per cell, shape ``x.shape + (d,)``."""
        fac = self.zeta_factor(x)
        return fac[..., None] * np.asarray(self.f)

    def rate_factor(self, x):
        """Extra factor on the relaxation rate in the state ODE."""
        x = np.asarray(x, dtype=float)
        if self.variant == "viscous-full":
            return 1.0 - x
        return np.ones_like(x)

    def to_porosity(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "log-transformed":
            return inverse_log_transform(x)
        return x

    def to_porosity_safe(self, x):
        """Like ``to_porosity`` but without the domain check (diagnostic stacks)."""
        x = np.asarray(x, dtype=float)
        if self.variant == "log-transformed":
            return -np.expm1(-x)
        return x

    def from_porosity(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.variant == "log-transformed":
            return log_transform(phi)
        return phi


def sigma(v, c0=1.0, c1=0.0, c2=1.0):
    """Decompaction-weakening viscosity factor, valued in ``[c0(1-2c1), c0]``."""
    v = np.asarray(v, dtype=float)
    return c0 * (1.0 - c1 * (1.0 + np.tanh(-v / c2)))


def sigma_prime(v, c0=1.0, c1=0.0, c2=1.0):
    v = np.asarray(v, dtype=float)
    th = np.tanh(-v / c2)
    return c0 * c1 / c2 * (1.0 - th * th)


def kappa(v, c0=1.0, c1=0.0, c2=1.0):
    v = np.asarray(v, dtype=float)
    return v / sigma(v, c0, c1, c2)


def kappa_prime(v, c0=1.0, c1=0.0, c2=1.0):
    """Exact derivative ``1/sigma - v sigma'/sigma**2``."""
    v = np.asarray(v, dtype=float)
    s = sigma(v, c0, c1, c2)
    return 1.0 / s - v * sigma_prime(v, c0, c1, c2) / (s * s)


def log_transform(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any((phi <= 0) | (phi >= 1)):
        raise ModelError("log transform needs 0 < phi < 1")
    return -np.log1p(-phi)


def inverse_log_transform(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ModelError("inverse log transform needs lambda > 0")
    return -np.expm1(-lam)


# -- structural assumptions -------------------------------------------------


@dataclass
class StructuralReport:
    sigma_inf: float
    sigma_sup: float
    sigma_prime_min: float
    kappa_prime_inf: float
    kappa_prime_sup: float
    alpha_min_on_range: float
    beta_nonneg: bool
    reasons: list[str] = field(default_factory=list)

    @property
    def c_L(self) -> float:
        return self.kappa_prime_sup

    @property
    def passed(self) -> bool:
        return not self.reasons

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail: " + "; ".join(self.reasons)


def validate_assumptions(
    coeffs: CoefficientSet,
    probe: Sequence[float] = (-50.0, 50.0),
    samples: int = 100_000,
) -> StructuralReport:
    """Sample sigma, sigma' and kappa' on ``probe`` and alpha, beta on [eps, R].

    Failures are collected in the report, never raised.
    """
    lo, hi = float(probe[0]), float(probe[1])
    if not hi > lo:
        raise ModelError("probe interval must be nonempty")
    v = np.linspace(lo, hi, int(samples))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = coeffs.sigma(v)
        sp = coeffs.sigma_prime(v)
        kp = coeffs.kappa_prime(v)

    x = np.linspace(coeffs.eps, coeffs.R, 1001)
    reasons = list(coeffs.parameter_errors())
    try:
        a = coeffs.alpha(x)
        b = coeffs.beta(x)
        alpha_min = float(a.min())
        beta_ok = bool(np.all(b >= 0))
    except ModelError as exc:
        alpha_min, beta_ok = float("nan"), False
        reasons.append(str(exc))

    rep = StructuralReport(
        sigma_inf=float(s.min()),
        sigma_sup=float(s.max()),
        sigma_prime_min=float(sp.min()),
        kappa_prime_inf=float(kp.min()),
        kappa_prime_sup=float(kp.max()),
        alpha_min_on_range=alpha_min,
        beta_nonneg=beta_ok,
    )
    if not rep.sigma_inf > 0:
        reasons.append(f"inf sigma = {rep.sigma_inf:g} is not > 0")
    if rep.sigma_prime_min < 0:
        reasons.append("sigma' < 0 somewhere on the probe")
    if not rep.kappa_prime_inf > 0:
        reasons.append(f"inf kappa' = {rep.kappa_prime_inf:g} is not > 0")
    if not alpha_min > 0:
        reasons.append("alpha not strictly positive on [eps, R]")
    if not beta_ok:
        reasons.append("beta negative on [eps, R]")
    # keep reasons unique and ordered
    rep.reasons = list(dict.fromkeys(reasons))
    return rep
