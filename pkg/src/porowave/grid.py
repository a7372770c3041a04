"""Structured cell-centered grids, fields, partitions and two-point flux stencils.

Arrays of cell values have shape ``grid.shape``: ``(nx,)`` in 1D and
``(ny, nx)`` in 2D, so row-major flattening runs fastest along x.  Face data
is a tuple with one array per physical axis; the array for axis ``a`` has one
more entry than the cell array along that axis and includes the two boundary
faces.  Homogeneous Dirichlet data is imposed through a reflected ghost value
``u_ghost = -u_interior`` half a cell beyond the wall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", cells)
        if len(ext) != len(cells) or len(cells) not in (1, 2):
            raise GridError("grid must be 1D or 2D with one extent per axis")
        if any(e <= 0 for e in ext):
            raise GridError("extents must be > 0")
        if any(c < 3 for c in cells):
            raise GridError("need at least 3 cells per axis")
        if math.prod(cells) >= 2**31:
            raise GridError("too many cells")

    @classmethod
    def uniform(cls, cells, extent=1.0) -> "Grid":
        cells = tuple(np.atleast_1d(cells))
        return cls(tuple([extent] * len(cells)), cells)

    @property
    def d(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extents, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(reversed(self.cells))

    @property
    def size(self) -> int:
        return math.prod(self.cells)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    def array_axis(self, a: int) -> int:
        """Array axis holding physical axis ``a``."""
        return self.d - 1 - a

    def centers_1d(self, a: int) -> np.ndarray:
        h = self.h[a]
        return (np.arange(self.cells[a]) + 0.5) * h

    def faces_1d(self, a: int) -> np.ndarray:
        return np.arange(self.cells[a] + 1) * self.h[a]

    def coords(self) -> list[np.ndarray]:
        """Cell-center coordinates per physical axis, each of ``self.shape``."""
        axes = [self.centers_1d(a) for a in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="xy") if self.d == 2 else axes
        return [np.broadcast_to(m, self.shape) for m in mesh]

    def face_coords(self, a: int) -> list[np.ndarray]:
        """Coordinates of the faces normal to axis ``a``."""
        axes = [self.faces_1d(b) if b == a else self.centers_1d(b) for b in range(self.d)]
        if self.d == 1:
            return axes
        return list(np.meshgrid(*axes, indexing="xy"))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def face_weights(self) -> tuple[np.ndarray, ...]:
        """Dual-cell volume per face: ``h^d`` inside, half of it on the wall."""
        out = []
        for a in range(self.d):
            w = np.full(self._face_shape(a), self.cell_volume)
            ax = self.array_axis(a)
            idx = [slice(None)] * self.d
            idx[ax] = 0
            w[tuple(idx)] *= 0.5
            idx[ax] = -1
            w[tuple(idx)] *= 0.5
            out.append(w)
        return tuple(out)

    def _face_shape(self, a: int) -> tuple[int, ...]:
        shape = list(self.shape)
        shape[self.array_axis(a)] += 1
        return tuple(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def check_values(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape != self.shape:
            if arr.size == self.size:
                arr = arr.reshape(self.shape)
            else:
                raise GridError(f"expected {self.size} cell values, got {arr.size}")
        return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable snapshot of one value per cell."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.grid.check_values(self.values), dtype=float)
        if not np.all(np.isfinite(arr)):
            raise GridError("field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "Field":
        return cls(grid, np.broadcast_to(fn(*grid.coords()), grid.shape))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def as_values(grid: Grid, x) -> np.ndarray:
    if isinstance(x, Field):
        if x.grid != grid:
            raise GridError("grid mismatch")
        return x.values
    return grid.check_values(x)


def _grid_of(*items) -> Grid:
    grids = {it.grid for it in items if isinstance(it, Field)}
    if len(grids) != 1:
        raise GridError("grid mismatch" if grids else "need at least one Field")
    return grids.pop()


# -- partitions ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    """Labels ``1..M`` per cell; every boundary cell carries label ``M``."""

    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64).reshape(self.grid.shape)
        if lab.min() < 1:
            raise GridError("labels must be >= 1")
        M = int(lab.max())
        if np.any(lab[self.grid.boundary_mask()] != M):
            raise GridError(f"cells touching the boundary must carry label M={M}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def M(self) -> int:
        return int(self.labels.max())

    @classmethod
    def single(cls, grid: Grid) -> "Partition":
        return cls(grid, np.ones(grid.shape, dtype=np.int64))

    @classmethod
    def from_boxes(cls, grid: Grid, boxes: Sequence[tuple[Sequence[float], int]]) -> "Partition":
        """Label cells whose centers fall in axis-aligned boxes.

        ``boxes`` holds ``((x0, x1[, y0, y1]), label)`` pairs, later boxes
        winning.  Uncovered cells get label ``M = max(box labels) + 1``.
        """
        labels = np.zeros(grid.shape, dtype=np.int64)
        coords = grid.coords()
        top = max((lab for _, lab in boxes), default=0)
        for bounds, lab in boxes:
            if len(bounds) != 2 * grid.d:
                raise GridError("box needs two bounds per axis")
            inside = np.ones(grid.shape, dtype=bool)
            for a in range(grid.d):
                lo, hi = bounds[2 * a], bounds[2 * a + 1]
                inside &= (coords[a] >= lo) & (coords[a] <= hi)
            labels[inside] = lab
        labels[labels == 0] = top + 1
        return cls(grid, labels)

    def interface_faces(self) -> tuple[np.ndarray, ...]:
        """Interior faces between differing labels, one mask per axis."""
        return tuple(
            np.diff(self.labels, axis=self.grid.array_axis(a)) != 0 for a in range(self.grid.d)
        )


# -- piecewise initial data ----------------------------------------------------

Rule = Callable[..., np.ndarray]


def constant_rule(c: float) -> Rule:
    return lambda *x: np.full(np.shape(x[0]), float(c))


def affine_rule(base: float, slopes: Sequence[float]) -> Rule:
    def rule(*x):
        out = np.full(np.shape(x[0]), float(base))
        for xi, s in zip(x, slopes):
            out = out + s * xi
        return out

    return rule


def power_rule(base: float, amp: float, center: Sequence[float], gamma: float) -> Rule:
    """``base + amp * |x - x0|**gamma``."""

    def rule(*x):
        r2 = sum((xi - c) ** 2 for xi, c in zip(x, center))
        return base + amp * np.sqrt(r2) ** gamma

    return rule


def gauss_rule(base: float, amp: float, center: Sequence[float], width: float) -> Rule:
    def rule(*x):
        r2 = sum((xi - c) ** 2 for xi, c in zip(x, center))
        return base + amp * np.exp(-r2 / (2 * width**2))

    return rule


def sine_rule(base: float, amp: float, extents: Sequence[float]) -> Rule:
    """``base + amp * prod sin(pi x_a / L_a)``; vanishes on the walls when base = 0."""

    def rule(*x):
        out = np.ones(np.shape(x[0]))
        for xi, L in zip(x, extents):
            out = out * np.sin(np.pi * xi / L)
        return base + amp * out

    return rule


def make_piecewise_initial(partition: Partition, rules: Mapping[int, Rule | float]) -> Field:
    grid = partition.grid
    coords = grid.coords()
    out = np.empty(grid.shape)
    for lab in np.unique(partition.labels):
        lab = int(lab)
        if lab not in rules:
            raise GridError(f"no value rule for label {lab}")
        rule = rules[lab]
        if not callable(rule):
            rule = constant_rule(rule)
        mask = partition.labels == lab
        vals = np.broadcast_to(rule(*coords), grid.shape)
        out[mask] = vals[mask]
    return Field(grid, out)


# -- face averages and fluxes ---------------------------------------------------


def _pad_reflect(arr: np.ndarray, ax: int, sign: float) -> np.ndarray:
    """Append a ghost layer on both ends of ``ax`` equal to ``sign * edge``."""
    lo = np.take(arr, [0], axis=ax) * sign
    hi = np.take(arr, [-1], axis=ax) * sign
    return np.concatenate([lo, arr, hi], axis=ax)


def harmonic_faces(grid: Grid, coeff, harmonic: bool = True) -> tuple[np.ndarray, ...]:
    """Face coefficients; the wall face takes the adjacent cell value."""
    c = as_values(grid, coeff)
    out = []
    for a in range(grid.d):
        ax = grid.array_axis(a)
        p = _pad_reflect(c, ax, 1.0)
        left = np.take(p, range(0, p.shape[ax] - 1), axis=ax)
        right = np.take(p, range(1, p.shape[ax]), axis=ax)
        if harmonic:
            out.append(2.0 * left * right / (left + right))
        else:
            out.append(0.5 * (left + right))
    return tuple(out)


def zeta_faces(grid: Grid, zeta_cells: np.ndarray) -> tuple[np.ndarray, ...]:
    """Arithmetic face mean of the per-cell force vectors (shape ``grid.shape + (d,)``)."""
    z = np.asarray(zeta_cells, dtype=float)
    out = []
    for a in range(grid.d):
        ax = grid.array_axis(a)
        p = _pad_reflect(z[..., a], ax, 1.0)
        left = np.take(p, range(0, p.shape[ax] - 1), axis=ax)
        right = np.take(p, range(1, p.shape[ax]), axis=ax)
        out.append(0.5 * (left + right))
    return tuple(out)


def zeta_faces_from_function(grid: Grid, fn: Callable) -> tuple[np.ndarray, ...]:
    """Sample a manufactured force field ``fn(x[, y]) -> (d, ...)`` at face centers."""
    out = []
    for a in range(grid.d):
        xs = grid.face_coords(a)
        val = np.asarray(fn(*xs), dtype=float)
        if grid.d > 1 or val.ndim > len(grid.shape):
            val = val[a]
        out.append(np.broadcast_to(val, xs[0].shape).astype(float))
    return tuple(out)


def gradient(u, grid: Grid | None = None) -> tuple[np.ndarray, ...]:
    """Face gradients including the Dirichlet wall faces."""
    grid = grid or _grid_of(u)
    v = as_values(grid, u)
    out = []
    for a in range(grid.d):
        ax = grid.array_axis(a)
        p = _pad_reflect(v, ax, -1.0)
        out.append(np.diff(p, axis=ax) / grid.h[a])
    return tuple(out)


def divergence(flux: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    out = np.zeros(grid.shape)
    for a in range(grid.d):
        out += np.diff(flux[a], axis=grid.array_axis(a)) / grid.h[a]
    return out


def diffusive_flux(coeff, u, zeta=None, grid: Grid | None = None, harmonic: bool = True):
    """Two-point flux ``abar * (grad u + zeta_face)`` on every face.

    ``zeta`` is either per-cell force vectors or a tuple of face arrays.
    """
    grid = grid or _grid_of(*(x for x in (coeff, u) if isinstance(x, Field)))
    abar = harmonic_faces(grid, coeff, harmonic)
    grad = gradient(u, grid)
    if zeta is None:
        return tuple(ab * g for ab, g in zip(abar, grad))
    zf = zeta if isinstance(zeta, tuple) else zeta_faces(grid, zeta)
    return tuple(ab * (g + z) for ab, g, z in zip(abar, grad, zf))


class DiffusionOperator:
    """Matrix-free ``u -> -div(abar grad u) + reaction * u`` with Dirichlet closure."""

    def __init__(self, grid: Grid, coeff, reaction=None, harmonic: bool = True):
        c = as_values(grid, coeff)
        if np.any(c <= 0):
            raise GridError("diffusion coefficient must be > 0 in every cell")
        self.grid = grid
        self.face_coeff = harmonic_faces(grid, c, harmonic)
        r = np.zeros(grid.shape) if reaction is None else np.broadcast_to(
            np.asarray(reaction, dtype=float), grid.shape
        )
        if np.any(r < 0):
            raise GridError("reaction must be >= 0")
        self.reaction = np.array(r)
        self.shape = (grid.size, grid.size)

    def apply(self, u: np.ndarray) -> np.ndarray:
        v = u.reshape(self.grid.shape)
        flux = tuple(ab * g for ab, g in zip(self.face_coeff, gradient(v, self.grid)))
        return (-divergence(flux, self.grid) + self.reaction * v).reshape(u.shape)

    __call__ = apply
    matvec = apply

    def diagonal(self) -> np.ndarray:
        grid = self.grid
        diag = self.reaction.copy()
        for a in range(grid.d):
            ax = grid.array_axis(a)
            fc = self.face_coeff[a] / grid.h[a] ** 2
            n = fc.shape[ax]
            lo = np.take(fc, range(0, n - 1), axis=ax)
            hi = np.take(fc, range(1, n), axis=ax)
            # wall faces count twice through the reflected ghost
            wall = np.zeros_like(lo)
            idx = [slice(None)] * grid.d
            idx[ax] = 0
            wall[tuple(idx)] += lo[tuple(idx)]
            idx[ax] = -1
            wall[tuple(idx)] += hi[tuple(idx)]
            diag += lo + hi + wall
        return diag

    def to_sparse(self):
        import scipy.sparse as sp

        n = self.grid.size
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(self.apply(e))
        return sp.csr_matrix(np.column_stack(cols))

    def toarray(self) -> np.ndarray:
        return self.to_sparse().toarray()


def assemble_operator(coeff, reaction=None, grid: Grid | None = None, harmonic: bool = True):
    grid = grid or _grid_of(coeff)
    return DiffusionOperator(grid, coeff, reaction, harmonic)


def jump_faces(values, grid: Grid, theta: float) -> tuple[np.ndarray, ...]:
    """Interior faces where the cell-to-cell jump exceeds ``theta``."""
    v = as_values(grid, values)
    return tuple(np.abs(np.diff(v, axis=grid.array_axis(a))) > theta for a in range(grid.d))


def same_faces(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


# -- snapshot files --------------------------------------------------------------


def write_snapshot(path, field: Field, t: float = 0.0) -> None:
    g = field.grid
    head = [str(g.d), *map(str, g.cells), *map(repr, g.h), repr(float(t))]
    lines = [" ".join(head)]
    lines += [repr(float(v)) for v in field.flat()]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple[Field, float]:
    with open(path, encoding="ascii") as fh:
        head = fh.readline().split()
        d = int(head[0])
        cells = tuple(int(c) for c in head[1 : 1 + d])
        h = tuple(float(x) for x in head[1 + d : 1 + 2 * d])
        t = float(head[1 + 2 * d])
        vals = np.array([float(line) for line in fh if line.strip()])
    grid = Grid(tuple(c * hh for c, hh in zip(cells, h)), cells)
    return Field(grid, vals.reshape(grid.shape)), t
