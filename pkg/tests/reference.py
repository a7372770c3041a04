"""Reference setups shared by the test modules.

Runs are cached so several tests can inspect the same series.
"""

from functools import lru_cache

import numpy as np

from porowave import viscoelastic as ve
from porowave import viscous as vs
from porowave.grid import Field, Grid, Partition, make_piecewise_initial
from porowave.model import CoefficientSet

SMOOTH_VISCOUS = CoefficientSet(
    a0=1, n=3, b0=1, m=1, c1=0.25, f=(1.0,), variant="viscous-small", eps=0.05, R=0.5
)
SMOOTH_VISCO = CoefficientSet(
    a0=1, n=3, b0=1, m=1, c1=0.25, f=(1.0,), Q=1.0, variant="small-porosity", eps=0.05, R=0.5
)


def smooth_phi0(cells=64) -> Field:
    g = Grid.uniform(cells)
    return Field.from_function(
        g, lambda x: 0.2 + 0.1 * np.sin(np.pi * x) + 0.05 * np.cos(3 * np.pi * x)
    )


def step_coeffs(d: int, variant: str) -> CoefficientSet:
    return CoefficientSet(
        a0=1, n=3, b0=1, m=1, c1=0.25, f=(1.0,) * d, Q=0.1 if variant == "small-porosity" else 0.0,
        variant=variant, eps=0.02, R=0.6,
    )


def step_partition(cells) -> Partition:
    g = Grid.uniform(cells)
    box = (0.3, 0.7) * g.d
    return Partition.from_boxes(g, [(box, 1)])


def step_phi0(cells) -> Field:
    return make_piecewise_initial(step_partition(cells), {1: 0.3, 2: 0.1})


@lru_cache(maxsize=None)
def smooth_horizon() -> float:
    return vs.select_safe_horizon(smooth_phi0(), SMOOTH_VISCOUS)


@lru_cache(maxsize=None)
def smooth_euler(N: int):
    return vs.run_euler(vs.ViscousRunConfig(SMOOTH_VISCOUS, smooth_phi0(), smooth_horizon(), N))


@lru_cache(maxsize=None)
def smooth_picard(fraction: float = 1.0, N: int = 32):
    T = smooth_horizon() * fraction
    return vs.picard_solve(vs.ViscousRunConfig(SMOOTH_VISCOUS, smooth_phi0(), T, N))


@lru_cache(maxsize=None)
def visco_horizon() -> float:
    return vs.select_safe_horizon(smooth_phi0(), SMOOTH_VISCO)


def visco_config(fraction: float = 1.0, N: int = 32, cells: int = 64) -> ve.ViscoRunConfig:
    return ve.ViscoRunConfig(SMOOTH_VISCO, smooth_phi0(cells), visco_horizon() * fraction, N)


@lru_cache(maxsize=None)
def visco_run(fraction: float = 1.0, N: int = 32, cells: int = 64):
    return ve.run_viscoelastic(visco_config(fraction, N, cells))


@lru_cache(maxsize=None)
def xi_run(fraction: float = 1.0, N: int = 32):
    return ve.xi_solve(visco_config(fraction, N))


@lru_cache(maxsize=None)
def step_run(cells: tuple, kind: str, N: int = 32):
    """Step-data run up to the safe horizon of its kind."""
    phi0 = step_phi0(cells)
    d = len(cells)
    if kind == "viscous":
        co = step_coeffs(d, "viscous-small")
        T = vs.select_safe_horizon(phi0, co)
        return vs.run_euler(vs.ViscousRunConfig(co, phi0, T, N))
    co = step_coeffs(d, "small-porosity")
    T = ve.select_safe_horizon(phi0, co)
    return ve.run_viscoelastic(ve.ViscoRunConfig(co, phi0, T, N, jump_theta=0.1))
