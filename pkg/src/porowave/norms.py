"""Discrete norms: L^p, BV, W^{1,2}, parabolic Hölder, and empirical Lipschitz ratios."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Field, Grid, Partition, as_values, gradient

HOLDER_MAX_POINTS = 20_000


class NormError(ValueError):
    pass


@dataclass
class TimeSeries:
    """Time-stamped ``(phi, u)`` snapshots on one grid.

    ``phi`` and ``u`` are stacked arrays of shape ``(n_t,) + grid.shape``.
    For the log-transformed variant ``state`` keeps the ``lam`` history and
    ``phi`` holds the emitted porosity.
    """

    grid: Grid
    times: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    state: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float).reshape((-1,) + self.grid.shape)
        self.u = np.asarray(self.u, dtype=float).reshape((-1,) + self.grid.shape)
        if self.state is None:
            self.state = self.phi
        if len(self.times) == 0 or self.times[0] != 0.0:
            raise NormError("time series must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise NormError("times must be strictly increasing")
        if not len(self.times) == len(self.phi) == len(self.u):
            raise NormError("one (phi, u) pair per time stamp")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def quadrature(self) -> np.ndarray:
        """Trapezoid weights on ``times``."""
        w = np.zeros(len(self.times))
        dt = np.diff(self.times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return w

    def field(self, name: str, k: int) -> Field:
        return Field(self.grid, getattr(self, name)[k])

    def truncated(self, n: int) -> "TimeSeries":
        return TimeSeries(
            self.grid, self.times[:n], self.phi[:n], self.u[:n], self.state[:n], dict(self.meta)
        )


def _vals(x, grid: Grid | None) -> tuple[np.ndarray, Grid | None]:
    if isinstance(x, Field):
        return x.values, x.grid
    return np.asarray(x, dtype=float), grid


def lp_norm(x, p: float = 2, grid: Grid | None = None) -> float:
    """``(sum |v|^p h^d)^(1/p)``; ``max |v|`` for ``p = inf``.  Without a grid ``h^d = 1``."""
    v, grid = _vals(x, grid)
    if p == np.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if p < 1:
        raise NormError("p must be >= 1")
    vol = grid.cell_volume if grid is not None else 1.0
    return float(np.sum(np.abs(v) ** p) * vol) ** (1.0 / p)


def tv_seminorm(x, grid: Grid | None = None) -> float:
    """Anisotropic total variation: face jumps weighted by the face area ``h^(d-1)``."""
    v, grid = _vals(x, grid)
    if grid is None:
        raise NormError("tv_seminorm needs a grid")
    v = as_values(grid, v)
    total = 0.0
    for a in range(grid.d):
        area = grid.cell_volume / grid.h[a]
        total += float(np.sum(np.abs(np.diff(v, axis=grid.array_axis(a))))) * area
    return total


def bv_norm(x, grid: Grid | None = None) -> float:
    v, grid = _vals(x, grid)
    return lp_norm(v, 1, grid) + tv_seminorm(v, grid)


def w12_norm(x, grid: Grid | None = None) -> float:
    """Discrete W^{1,2}: L2 part plus face gradients weighted by dual-cell volume."""
    v, grid = _vals(x, grid)
    if grid is None:
        raise NormError("w12_norm needs a grid")
    v = as_values(grid, v)
    grad_sq = sum(
        float(np.sum(g * g * w)) for g, w in zip(gradient(v, grid), grid.face_weights())
    )
    return float(np.sqrt(lp_norm(v, 2, grid) ** 2 + grad_sq))


# -- parabolic Hölder norms ---------------------------------------------------


def _subdomain_gradients(vals: np.ndarray, grid: Grid, mask: np.ndarray) -> np.ndarray:
    """One-sided differences that never cross out of ``mask``.

    Returns shape ``vals.shape + (d,)`` (time axis first).
    """
    out = np.zeros(vals.shape + (grid.d,))
    for a in range(grid.d):
        ax = grid.array_axis(a)
        h = grid.h[a]
        nt_ax = ax + 1
        fwd = np.zeros(vals.shape)
        bwd = np.zeros(vals.shape)
        has_f = np.zeros(grid.shape, dtype=bool)
        has_b = np.zeros(grid.shape, dtype=bool)
        n = grid.shape[ax]
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        lo[ax] = slice(0, n - 1)
        hi[ax] = slice(1, n)
        pair = mask[tuple(lo)] & mask[tuple(hi)]
        has_f[tuple(lo)] = pair
        has_b[tuple(hi)] = pair
        diff = np.diff(vals, axis=nt_ax) / h
        tlo = (slice(None),) + tuple(lo)
        thi = (slice(None),) + tuple(hi)
        fwd[tlo] = diff
        bwd[thi] = diff
        out[..., a] = np.where(has_f, fwd, np.where(has_b, bwd, 0.0))
    return out


def _max_pair_quotient(vals: np.ndarray, coords: np.ndarray, power: float, chunk: int = 256) -> float:
    """``max_{i != j} |vals[i] - vals[j]| / |coords[i] - coords[j]|**power``.

    ``vals`` may carry trailing vector components (Euclidean difference);
    ``coords`` has shape ``(n, k)``.
    """
    n = vals.shape[0]
    if n < 2:
        return 0.0
    vecs = vals.reshape(n, -1)
    best = 0.0
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        dv = np.sqrt(np.sum((vecs[s:e, None, :] - vecs[None, :, :]) ** 2, axis=-1))
        dx = np.sqrt(np.sum((coords[s:e, None, :] - coords[None, :, :]) ** 2, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dx > 0, dv / dx**power, 0.0)
        best = max(best, float(q.max()))
    return best


def _time_quotient(stack: np.ndarray, times: np.ndarray, power: float) -> float:
    """``max_{t1 != t2, x} |v(t1, x) - v(t2, x)| / |t1 - t2|**power``."""
    best = 0.0
    for i in range(len(times) - 1):
        dv = stack[i + 1 :] - stack[i]
        if dv.ndim == 3:
            dv = np.sqrt(np.sum(dv * dv, axis=-1))
        else:
            dv = np.abs(dv)
        dt = (times[i + 1 :] - times[i]) ** power
        if dv.size:
            best = max(best, float(np.max(dv / dt[:, None])))
    return best


def holder_terms(
    times: np.ndarray,
    vals: np.ndarray,
    grid: Grid,
    k: int,
    gamma: float,
    mask: np.ndarray,
) -> dict[str, float]:
    """Individual terms of the parabolic Hölder norm on the cells in ``mask``."""
    if k not in (0, 1):
        raise NormError("k must be 0 or 1")
    if not 0 < gamma < 1:
        raise NormError("gamma must lie in (0, 1)")
    times = np.asarray(times, dtype=float)
    vals = np.asarray(vals, dtype=float).reshape((len(times),) + grid.shape)
    n_c = int(mask.sum())
    if len(times) * n_c > HOLDER_MAX_POINTS:
        raise NormError(
            f"{len(times)} x {n_c} space-time points exceed the guard of {HOLDER_MAX_POINTS}"
        )
    coords = np.stack([c[mask] for c in grid.coords()], axis=-1)
    sub = vals[:, mask]  # (n_t, n_c)

    terms = {"sup": float(np.max(np.abs(sub))) if sub.size else 0.0}
    if k == 0:
        terms["space"] = max(
            (_max_pair_quotient(sub[i], coords, gamma) for i in range(len(times))), default=0.0
        )
        terms["time"] = _time_quotient(sub, times, gamma / 2)
        return terms

    grads = _subdomain_gradients(vals, grid, mask)[:, mask, :]  # (n_t, n_c, d)
    terms["grad_sup"] = float(np.max(np.linalg.norm(grads, axis=-1))) if grads.size else 0.0
    terms["grad_space"] = max(
        (_max_pair_quotient(grads[i], coords, gamma) for i in range(len(times))), default=0.0
    )
    terms["time"] = _time_quotient(sub, times, (1 + gamma) / 2)
    terms["grad_time"] = _time_quotient(grads, times, gamma / 2)
    return terms


def parabolic_holder_norm(
    series: TimeSeries,
    which: str = "phi",
    k: int = 0,
    gamma: float = 0.5,
    partition: Partition | None = None,
    label: int = 1,
) -> float:
    """Exhaustive-pair parabolic Hölder norm on subdomain ``label`` over the whole series."""
    if len(series) < 2:
        raise NormError("need at least two snapshots")
    partition = partition or Partition.single(series.grid)
    mask = partition.labels == label
    terms = holder_terms(series.times, getattr(series, which), series.grid, k, gamma, mask)
    return float(sum(terms.values()))


def piecewise_holder_norm(
    times, vals, grid: Grid, partition: Partition, gamma: float = 0.5, k: int = 0
) -> float:
    """Sum over all subdomains of the parabolic Hölder norms."""
    total = 0.0
    for lab in range(1, partition.M + 1):
        mask = partition.labels == lab
        if mask.any():
            total += sum(holder_terms(times, vals, grid, k, gamma, mask).values())
    return total


def lipschitz_ratio(
    u1,
    u2,
    phi1,
    phi2,
    kind: str = "linf",
    *,
    grid: Grid | None = None,
    times: Sequence[float] | None = None,
    partition: Partition | None = None,
    gamma: float = 0.5,
) -> float:
    """``||u1 - u2|| / ||phi1 - phi2||`` in L^inf or the piecewise parabolic Hölder norm.

    For ``kind="holder"`` the inputs are space-time stacks ``(n_t,) + grid.shape``
    sampled at ``times``.
    """
    du = np.asarray(u1, dtype=float) - np.asarray(u2, dtype=float)
    dphi = np.asarray(phi1, dtype=float) - np.asarray(phi2, dtype=float)
    if kind == "linf":
        den = float(np.max(np.abs(dphi)))
        num = float(np.max(np.abs(du)))
    elif kind == "holder":
        if grid is None or times is None:
            raise NormError("holder ratio needs grid and times")
        part = partition or Partition.single(grid)
        den = piecewise_holder_norm(times, dphi, grid, part, gamma)
        num = piecewise_holder_norm(times, du, grid, part, gamma)
    else:
        raise NormError(f"unknown norm kind {kind!r}")
    if den == 0:
        raise NormError("zero denominator: phi1 and phi2 coincide")
    return num / den


def c_linf(stack: np.ndarray) -> float:
    """``C([0,T]; L^inf)`` norm of a time stack."""
    return float(np.max(np.abs(stack))) if np.size(stack) else 0.0


def c_l1(stack: np.ndarray, grid: Grid) -> float:
    stack = np.asarray(stack).reshape((-1,) + grid.shape)
    return max(lp_norm(s, 1, grid) for s in stack)


@dataclass
class RunReport:
    """Per-run diagnostics shared by the time integrators."""

    termination: str = "horizon"
    achieved_T: float = 0.0
    exit_time: float | None = None
    steps: list[dict] = field(default_factory=list)
    contraction: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def q_bar(self) -> float | None:
        """Geometric mean of the recorded contraction factors."""
        q = [v for v in self.contraction if v > 0]
        if not q:
            return None
        return float(np.exp(np.mean(np.log(q))))

    def column(self, key: str) -> np.ndarray:
        return np.array([s[key] for s in self.steps])
