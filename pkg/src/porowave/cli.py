"""``porowave`` command line: config parsing, run drivers and file output.

Config files are plain text with ``[section]`` headers and ``key = value``
lines; ``#`` starts a comment.  Example::

    [model]
    variant = viscous-small
    c1 = 0.25
    eps = 0.05
    R = 0.5

    [grid]
    cells = 128
    extent = 1

    [initial]
    region.1 = box 0.3 0.7 1
    value.1 = 0.3
    value.2 = 0.1

    [time]
    T = auto
    N = 64
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import elliptic, harness
from . import viscoelastic as ve
from . import viscous as vs
from .grid import (
    Field,
    Grid,
    GridError,
    Partition,
    affine_rule,
    constant_rule,
    gauss_rule,
    make_piecewise_initial,
    power_rule,
    read_snapshot,
    sine_rule,
    write_snapshot,
)
from .model import VARIANTS, CoefficientSet, ModelError, validate_assumptions
from .norms import RunReport, TimeSeries, bv_norm, lp_norm, w12_norm

logger = logging.getLogger("porowave")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BOUND = 3
EXIT_NONCONTRACTION = 4
EXIT_INTERNAL = 5

EXIT_CODES = {
    "horizon": EXIT_OK,
    "bound-exit": EXIT_BOUND,
    "non-contraction": EXIT_NONCONTRACTION,
    "error": EXIT_INTERNAL,
}

SECTIONS = ("model", "grid", "initial", "time", "output", "study")

_FIXED_KEYS = {
    "model": {"variant", "a0", "n", "b0", "m", "c0", "c1", "c2", "Q", "f", "eps", "R"},
    "grid": {"cells", "extent"},
    "initial": {"u0"},
    "time": {
        "T", "N", "mode", "picard_tol", "picard_max", "inner_tol", "inner_max", "xi_tol",
        "xi_max", "eps_min", "R_max", "frozen_u", "blowup", "window", "t_cap", "gamma",
        "elliptic_tol", "horizon_cap",
    },
    "output": {"stride", "vtk"},
    "study": {
        "levels", "deltas", "T_list", "scalings", "galerkin_levels", "substeps", "kind",
        "theta", "runs",
    },
}
_PATTERN_KEYS = {"initial": (re.compile(r"region\.\d+$"), re.compile(r"value\.\d+$"))}


class ConfigError(ValueError):
    """Parse or validation failure; ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: int | None = None, report=None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line
        self.report = report


@dataclass
class Config:
    """Ordered raw entries per section, with source line numbers."""

    entries: dict = field(default_factory=lambda: {s: {} for s in SECTIONS})
    lines: dict = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.entries[section].get(key, default)

    def line_of(self, section: str, key: str) -> int | None:
        return self.lines.get((section, key))

    def echo(self) -> str:
        out = []
        for s in SECTIONS:
            if not self.entries[s]:
                continue
            out.append(f"[{s}]")
            out.extend(f"{k} = {v}" for k, v in self.entries[s].items())
            out.append("")
        return "\n".join(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, Config) and self.entries == other.entries


def _key_allowed(section: str, key: str) -> bool:
    if key in _FIXED_KEYS[section]:
        return True
    return any(p.match(key) for p in _PATTERN_KEYS.get(section, ()))


def parse_text(text: str) -> Config:
    """Syntax pass: sections, keys, duplicates.  Values stay strings."""
    cfg = Config()
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        if section is None:
            raise ConfigError("entry before any [section] header", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise ConfigError("empty key or value", no)
        if not _key_allowed(section, key):
            raise ConfigError(f"unknown key {key!r} in [{section}]", no)
        if key in cfg.entries[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", no)
        cfg.entries[section][key] = " ".join(value.split())
        cfg.lines[(section, key)] = no
    return cfg


# -- typed views --------------------------------------------------------------------


def _floats(cfg: Config, section: str, key: str, default=None) -> list[float] | None:
    raw = cfg.get(section, key)
    if raw is None:
        return default
    try:
        return [float(tok) for tok in raw.split()]
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {raw!r}", cfg.line_of(section, key))


def _float(cfg: Config, section: str, key: str, default=None) -> float | None:
    vals = _floats(cfg, section, key)
    if vals is None:
        return default
    if len(vals) != 1:
        raise ConfigError(f"{key}: expected one number", cfg.line_of(section, key))
    return vals[0]


def _int(cfg: Config, section: str, key: str, default=None) -> int | None:
    v = _float(cfg, section, key)
    if v is None:
        return default
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer", cfg.line_of(section, key))
    return int(v)


def _bool(cfg: Config, section: str, key: str, default=False) -> bool:
    raw = cfg.get(section, key)
    if raw is None:
        return default
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false", cfg.line_of(section, key))


def build_grid(cfg: Config) -> Grid:
    cells = _floats(cfg, "grid", "cells")
    if cells is None:
        raise ConfigError("[grid] needs 'cells'")
    ext = _floats(cfg, "grid", "extent", [1.0])
    if len(ext) == 1:
        ext = ext * len(cells)
    try:
        return Grid(tuple(ext), tuple(int(c) for c in cells))
    except GridError as exc:
        raise ConfigError(str(exc), cfg.line_of("grid", "cells"))


def build_coeffs(cfg: Config, d: int) -> CoefficientSet:
    kw = {}
    for key in ("a0", "n", "b0", "m", "c0", "c1", "c2", "Q", "eps", "R"):
        v = _float(cfg, "model", key)
        if v is not None:
            kw[key] = v
    variant = cfg.get("model", "variant", "small-porosity")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}", cfg.line_of("model", "variant"))
    f = _floats(cfg, "model", "f", [1.0] + [0.0] * (d - 1))
    if len(f) != d:
        raise ConfigError(f"f needs {d} components", cfg.line_of("model", "f"))
    if variant.startswith("viscous") and "Q" not in kw:
        kw["Q"] = 0.0
    return CoefficientSet(f=tuple(f), variant=variant, **kw)


def parse_rule(text: str, grid: Grid, line: int | None = None):
    """Value rules: a number, ``const c``, ``affine base s1 [s2]``,
    ``power base amp x0 [y0] gamma``, ``gauss base amp x0 [y0] width``, ``sine base amp``."""
    tok = text.split()
    d = grid.d
    try:
        if len(tok) == 1:
            return constant_rule(float(tok[0]))
        name, nums = tok[0], [float(t) for t in tok[1:]]
        if name == "const" and len(nums) == 1:
            return constant_rule(nums[0])
        if name == "affine" and len(nums) == 1 + d:
            return affine_rule(nums[0], nums[1:])
        if name == "power" and len(nums) == 3 + d:
            return power_rule(nums[0], nums[1], nums[2 : 2 + d], nums[-1])
        if name == "gauss" and len(nums) == 3 + d:
            return gauss_rule(nums[0], nums[1], nums[2 : 2 + d], nums[-1])
        if name == "sine" and len(nums) == 2:
            return sine_rule(nums[0], nums[1], grid.extents)
    except ValueError:
        pass
    raise ConfigError(f"cannot parse value rule {text!r}", line)


def build_partition(cfg: Config, grid: Grid) -> Partition:
    boxes = []
    keys = sorted(
        (k for k in cfg.entries["initial"] if k.startswith("region.")),
        key=lambda k: int(k.split(".")[1]),
    )
    for k in keys:
        line = cfg.line_of("initial", k)
        tok = cfg.get("initial", k).split()
        if tok[0] != "box" or len(tok) != 2 + 2 * grid.d:
            raise ConfigError(f"{k}: expected 'box x0 x1{' y0 y1' if grid.d == 2 else ''} label'", line)
        try:
            bounds = [float(t) for t in tok[1:-1]]
            label = int(tok[-1])
        except ValueError:
            raise ConfigError(f"{k}: malformed box", line)
        if label < 1:
            raise ConfigError(f"{k}: labels start at 1", line)
        boxes.append((bounds, label))
    try:
        return Partition.from_boxes(grid, boxes) if boxes else Partition.single(grid)
    except GridError as exc:
        raise ConfigError(str(exc))


def build_initial(cfg: Config, grid: Grid) -> tuple[Partition, Field, Field]:
    part = build_partition(cfg, grid)
    rules = {}
    for k, v in cfg.entries["initial"].items():
        if k.startswith("value."):
            rules[int(k.split(".")[1])] = parse_rule(v, grid, cfg.line_of("initial", k))
    try:
        phi0 = make_piecewise_initial(part, rules)
    except GridError as exc:
        raise ConfigError(str(exc))
    u0_raw = cfg.get("initial", "u0")
    if u0_raw is None:
        u0 = Field(grid, np.zeros(grid.shape))
    else:
        rule = parse_rule(u0_raw, grid, cfg.line_of("initial", "u0"))
        u0 = Field(grid, np.broadcast_to(rule(*grid.coords()), grid.shape))
    return part, phi0, u0


@dataclass
class Setup:
    config: Config
    grid: Grid
    coeffs: CoefficientSet
    partition: Partition
    phi0: Field
    u0: Field
    seed: int = 0


def parse_config(path) -> Setup:
    """Read, validate and build a run setup; raises :class:`ConfigError`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    return setup_from_text(text)


def setup_from_text(text: str) -> Setup:
    cfg = parse_text(text)
    grid = build_grid(cfg)
    coeffs = build_coeffs(cfg, grid.d)
    rep = validate_assumptions(coeffs)
    if not rep.passed:
        raise ConfigError("structural check failed: " + "; ".join(rep.reasons), report=rep)
    part, phi0, u0 = build_initial(cfg, grid)
    return Setup(cfg, grid, coeffs, part, phi0, u0)


# -- output helpers -------------------------------------------------------------------


def fmt(v) -> str:
    return harness.fmt(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_vtk(path: Path, grid: Grid, t: float, fields_: dict) -> None:
    """Legacy ASCII STRUCTURED_POINTS file with cell data."""
    nx = grid.cells[0]
    ny = grid.cells[1] if grid.d > 1 else 1
    hx = grid.h[0]
    hy = grid.h[1] if grid.d > 1 else hx
    lines = [
        "# vtk DataFile Version 3.0",
        f"porowave t={fmt(float(t))}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        "ORIGIN 0 0 0",
        f"SPACING {fmt(hx)} {fmt(hy)} 1",
        f"CELL_DATA {nx * ny}",
    ]
    for name, vals in fields_.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        # array layout is (ny, nx) row-major, which is x-fastest as VTK expects
        lines += [fmt(float(v)) for v in np.asarray(vals).ravel()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


NORM_COLUMNS = ["t", "phi_inf", "phi_min", "phi_bv", "u_inf", "u_w12"]


def norm_rows(series: TimeSeries) -> list[list]:
    g = series.grid
    return [
        [t, lp_norm(p, np.inf), float(p.min()), bv_norm(p, g), lp_norm(u, np.inf), w12_norm(u, g)]
        for t, p, u in zip(series.times, series.phi, series.u)
    ]


def write_series(out: Path, series: TimeSeries, stride: int, vtk: bool) -> list[Path]:
    files = []
    p = out / "norms.csv"
    write_csv(p, NORM_COLUMNS, norm_rows(series))
    files.append(p)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    idx = list(range(0, len(series), stride))
    if idx[-1] != len(series) - 1:
        idx.append(len(series) - 1)
    for k in idx:
        t = float(series.times[k])
        for name in ("phi", "u"):
            path = snap / f"{name}_{k:06d}.txt"
            write_snapshot(path, Field(series.grid, getattr(series, name)[k]), t)
            files.append(path)
        if vtk:
            path = snap / f"fields_{k:06d}.vtk"
            write_vtk(path, series.grid, t, {"phi": series.phi[k], "u": series.u[k]})
            files.append(path)
    return files


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # noqa: BLE001 - metadata missing in odd installs
        return "unknown"


def write_manifest(out: Path, setup: Setup | None, command: str, termination: str,
                   wall: float, files: list[Path], extra: dict | None = None) -> Path:
    lines = [
        f"command = {command}",
        f"version = {_version()}",
        f"termination = {termination}",
        f"exit_code = {EXIT_CODES[termination]}",
        f"wall_time = {wall:.3f}",
    ]
    if setup is not None:
        g = setup.grid
        lines.append(f"grid = d={g.d} cells={' '.join(map(str, g.cells))} "
                     f"extent={' '.join(fmt(e) for e in g.extents)}")
        lines.append(f"seed = {setup.seed}")
        lines.append("voxelized_interfaces = true")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {fmt(v)}")
    lines.append("files =")
    lines += [f"  {p.relative_to(out).as_posix()}" for p in files]
    if setup is not None:
        lines.append("")
        lines.append("[config]")
        lines.append(setup.config.echo())
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- commands --------------------------------------------------------------------------


def _horizon(setup: Setup, viscous: bool) -> float:
    c = setup.config
    raw = c.get("time", "T", "auto")
    if raw != "auto":
        T = _float(c, "time", "T")
        if not T > 0:
            raise ConfigError("T must be > 0", c.line_of("time", "T"))
        return T
    cap = _float(c, "time", "horizon_cap", 1e6)
    if viscous:
        return vs.select_safe_horizon(
            setup.phi0, setup.coeffs, cap=cap, seed=setup.seed,
            frozen_u=_float(c, "time", "frozen_u"),
        )
    return ve.select_safe_horizon(setup.phi0, setup.coeffs, setup.u0, seed=setup.seed, cap=cap)


def viscous_config(setup: Setup, T: float | None = None) -> vs.ViscousRunConfig:
    c = setup.config
    T = _horizon(setup, True) if T is None else T
    return vs.ViscousRunConfig(
        setup.coeffs, setup.phi0, T, _int(c, "time", "N", 64),
        mode=c.get("time", "mode", "euler"),
        picard_tol=_float(c, "time", "picard_tol", 1e-10),
        picard_max=_int(c, "time", "picard_max", 60),
        eps_min=_float(c, "time", "eps_min"),
        R_max=_float(c, "time", "R_max"),
        frozen_u=_float(c, "time", "frozen_u"),
        elliptic_tol=_float(c, "time", "elliptic_tol", 1e-10),
    )


def visco_config(setup: Setup, T: float | None = None) -> ve.ViscoRunConfig:
    c = setup.config
    T = _horizon(setup, False) if T is None else T
    return ve.ViscoRunConfig(
        setup.coeffs, setup.phi0, T, _int(c, "time", "N", 64), u0=setup.u0,
        inner_tol=_float(c, "time", "inner_tol", 1e-10),
        inner_max=_int(c, "time", "inner_max", 30),
        xi_tol=_float(c, "time", "xi_tol", 1e-10),
        xi_max=_int(c, "time", "xi_max", 60),
        gamma=_float(c, "time", "gamma", 0.5),
        partition=setup.partition,
        eps_min=_float(c, "time", "eps_min"),
        R_max=_float(c, "time", "R_max"),
        elliptic_tol=_float(c, "time", "elliptic_tol", 1e-10),
    )


def cmd_solve_elliptic(setup: Setup, out: Path, opts) -> tuple[str, list[Path], dict]:
    co = setup.coeffs
    x = co.from_porosity(setup.phi0.values)
    prob = elliptic.EllipticProblem.from_state(
        setup.grid, x, co, tol=_float(setup.config, "time", "elliptic_tol", 1e-10)
    )
    sol = elliptic.solve(prob)
    rep = elliptic.uniform_bound_check(sol, prob)
    series = TimeSeries(setup.grid, [0.0], setup.phi0.values[None], sol.u.values[None])
    files = write_series(out, series, 1, opts.vtk)
    p = out / "energy.csv"
    write_csv(p, ["iteration", "J"], list(enumerate(sol.energy_trace)))
    files.append(p)
    extra = {
        "newton_iters": sol.newton_iters,
        "residual_norm": sol.residual_norm,
        "u_inf": rep.u_inf,
        "u_w12": rep.u_w12,
        "w12_ratio": rep.ratio,
    }
    return "horizon", files, extra


def _contraction_file(out: Path, rep: RunReport, files: list[Path]) -> None:
    p = out / "contraction.csv"
    write_csv(p, ["j", "q_j"], [[j + 1, q] for j, q in enumerate(rep.contraction)])
    files.append(p)


def cmd_run_viscous(setup: Setup, out: Path, opts) -> tuple[str, list[Path], dict]:
    c = setup.config
    if _bool(c, "time", "blowup"):
        co = setup.coeffs
        res = vs.continue_to_blowup(
            setup.phi0, co,
            window=_float(c, "time", "window", 1.0),
            dt=_float(c, "time", "T", 1.0) / _int(c, "time", "N", 64)
            if c.get("time", "T", "auto") != "auto" else 1e-2,
            eps_min=_float(c, "time", "eps_min", co.eps),
            R_max=_float(c, "time", "R_max", co.R),
            t_cap=_float(c, "time", "t_cap", 10.0),
            frozen_u=_float(c, "time", "frozen_u"),
            seed=setup.seed,
        )
        series, rep = res.series, res.report
    else:
        cfg = viscous_config(setup)
        if cfg.mode == "picard":
            series, rep = vs.picard_solve(cfg)
        elif cfg.mode == "euler":
            series, rep = vs.run_euler(cfg)
        else:
            raise ConfigError(f"unknown viscous mode {cfg.mode!r}", c.line_of("time", "mode"))
    files = write_series(out, series, opts.stride, opts.vtk)
    extra = {"achieved_T": rep.achieved_T}
    if rep.exit_time is not None:
        extra["exit_time"] = rep.exit_time
    if rep.contraction:
        _contraction_file(out, rep, files)
        extra["q_bar"] = rep.q_bar
    return rep.termination, files, extra


def cmd_run_viscoelastic(setup: Setup, out: Path, opts) -> tuple[str, list[Path], dict]:
    c = setup.config
    cfg = visco_config(setup)
    mode = c.get("time", "mode", "step")
    if mode == "xi":
        series, rep = ve.xi_solve(cfg)
    elif mode == "step":
        series, rep = ve.run_viscoelastic(cfg)
    else:
        raise ConfigError(f"unknown viscoelastic mode {mode!r}", c.line_of("time", "mode"))
    files = write_series(out, series, opts.stride, opts.vtk)
    if mode == "step":
        p = out / "mild_residual.csv"
        write_csv(p, ["t", "mild_residual", "inner_iters"],
                  [[s["t"], s["mild_residual"], s["inner_iters"]] for s in rep.steps])
        files.append(p)
        sb = ve.sup_bound_check(series, cfg.coeffs)
        extra = {"achieved_T": rep.achieved_T, "max_mild_residual": rep.extra["max_mild_residual"],
                 "sup_bound_C": sb.C_hat}
    else:
        extra = {"achieved_T": rep.achieved_T, "q_bar": rep.q_bar}
    if rep.exit_time is not None:
        extra["exit_time"] = rep.exit_time
    if rep.contraction:
        _contraction_file(out, rep, files)
    return rep.termination, files, extra


def _regrid(setup: Setup, cells: int) -> Setup:
    text = setup.config.echo()
    cfg = parse_text(text)
    cfg.entries["grid"]["cells"] = " ".join([str(cells)] * setup.grid.d)
    new = setup_from_text(cfg.echo())
    new.seed = setup.seed
    return new


def run_study(name: str, setup: Setup, threads: int) -> harness.StudyResult:
    c = setup.config
    viscous = setup.coeffs.viscous
    if name == "euler-convergence":
        levels = [int(v) for v in _floats(c, "study", "levels", [64, 128, 256, 512])]
        return harness.study_euler_convergence(viscous_config(setup), levels, threads=threads)
    if name == "bv-growth":
        levels = _floats(c, "study", "levels")
        return harness.study_bv_growth(
            viscous_config(setup), [int(v) for v in levels] if levels else None, threads=threads
        )
    if name == "jump-invariance":
        runs = (c.get("study", "runs") or ("viscous" if viscous else "viscoelastic")).split()
        cfgs = []
        for r in runs:
            if r == "viscous":
                vsetup = replace(setup, coeffs=replace(setup.coeffs, Q=0.0, variant="viscous-small")) \
                    if not viscous else setup
                cfgs.append(viscous_config(vsetup))
            elif r == "viscoelastic":
                co = setup.coeffs
                if viscous:
                    co = replace(co, variant="small-porosity", Q=co.Q or 1.0)
                cfgs.append(visco_config(replace(setup, coeffs=co)))
            else:
                raise ConfigError(f"unknown run kind {r!r}", c.line_of("study", "runs"))
        return harness.study_jump_invariance(
            cfgs, _float(c, "study", "theta"), partition=setup.partition, threads=threads
        )
    if name == "gronwall":
        deltas = _floats(c, "study", "deltas", [1e-2, 1e-3, 1e-4])
        kind = c.get("study", "kind", "linf")
        base = viscous_config(setup) if viscous else visco_config(setup)
        return harness.study_gronwall(
            base, deltas, kind=kind, partition=setup.partition,
            gamma=_float(c, "time", "gamma", 0.5), threads=threads,
        )
    if name == "contraction-scaling":
        base = viscous_config(setup) if viscous else visco_config(setup)
        T_list = _floats(c, "study", "T_list") or [base.T, base.T / 2, base.T / 4]
        return harness.study_contraction_scaling(base, T_list, threads=threads)
    if name == "variant-gap":
        scal = _floats(c, "study", "scalings", [0.5, 0.25, 0.125])
        return harness.study_variant_gap(visco_config(setup), scal, threads=threads)
    if name == "galerkin-crosscheck":
        raw = c.get("study", "galerkin_levels", "64:16 128:32 256:64")
        try:
            levels = [tuple(int(x) for x in tok.split(":")) for tok in raw.split()]
        except ValueError:
            raise ConfigError("galerkin_levels: expected 'cells:modes' pairs",
                              c.line_of("study", "galerkin_levels"))
        T = _horizon(setup, False)
        return harness.study_galerkin_crosscheck(
            lambda n: visco_config(_regrid(setup, n), T), levels,
            substeps=_int(c, "study", "substeps", 1000), threads=threads,
        )
    raise ConfigError(f"unknown study {name!r}; choose from {', '.join(harness.STUDIES)}")


def cmd_study(setup: Setup, out: Path, opts) -> tuple[str, list[Path], dict]:
    res = run_study(opts.name, setup, opts.threads)
    files = res.write(out)
    return "horizon", files, {"study": res.name, "verdict": res.verdict}


def cmd_emit_plots(run_dir: Path) -> list[Path]:
    """gnuplot-ready tables from the snapshot files of a finished run."""
    snap = run_dir / "snapshots"
    if not snap.is_dir():
        raise ConfigError(f"no snapshots under {run_dir}")
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    files = []
    script = ["# gnuplot script written by porowave emit-plots"]
    for path in sorted(snap.glob("*.txt")):
        f, t = read_snapshot(path)
        g = f.grid
        target = plots / (path.stem + ".dat")
        with open(target, "w", encoding="ascii") as fh:
            fh.write(f"# t = {fmt(t)}\n")
            if g.d == 1:
                for x, v in zip(g.centers_1d(0), f.values):
                    fh.write(f"{fmt(float(x))} {fmt(float(v))}\n")
            else:
                for row in f.values:
                    fh.write(" ".join(fmt(float(v)) for v in row) + "\n")
        files.append(target)
        if g.d == 1:
            script.append(f"plot '{target.name}' using 1:2 with lines title '{path.stem}'")
        else:
            script.append(f"plot '{target.name}' matrix with image title '{path.stem}'")
        script.append("pause -1")
    p = plots / "plot.gp"
    p.write_text("\n".join(script) + "\n", encoding="ascii")
    files.append(p)
    return files


COMMANDS = {
    "solve-elliptic": cmd_solve_elliptic,
    "run-viscous": cmd_run_viscous,
    "run-viscoelastic": cmd_run_viscoelastic,
    "study": cmd_study,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="porowave", description="Porosity-wave solvers, runs and verification studies."
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", default="porowave_out", help="output directory")
        sp.add_argument("--stride", type=int, default=None, help="snapshot stride in steps")
        sp.add_argument("--vtk", action="store_true", help="also write legacy VTK files")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads for studies (env POROWAVE_THREADS)")
        sp.add_argument("--seed", type=int, default=0, help="seed for sampled estimates")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in ("solve-elliptic", "run-viscous", "run-viscoelastic"):
        common(sub.add_parser(name))
    sp = sub.add_parser("study")
    sp.add_argument("name", choices=sorted(harness.STUDIES))
    common(sp)
    sp = sub.add_parser("emit-plots")
    sp.add_argument("run_dir")
    return p


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("POROWAVE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring POROWAVE_THREADS=%r", env)
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "emit-plots":
        try:
            files = cmd_emit_plots(Path(args.run_dir))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"wrote {len(files)} files to {Path(args.run_dir) / 'plots'}")
        return EXIT_OK

    args.threads = _threads(args.threads)
    out = Path(args.out)
    t0 = time.perf_counter()
    setup = None
    try:
        setup = parse_config(args.config)
        setup.seed = args.seed
        if args.stride is None:
            args.stride = _int(setup.config, "output", "stride", 1)
        if args.stride < 1:
            raise ConfigError("stride must be >= 1")
        args.vtk = args.vtk or _bool(setup.config, "output", "vtk")
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(setup.config.echo(), encoding="utf-8")
        termination, files, extra = COMMANDS[args.command](setup, out, args)
        files.insert(0, out / "config.echo")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except vs.NonContraction as exc:
        print(f"non-contraction: {exc}", file=sys.stderr)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, setup, args.command, "non-contraction",
                       time.perf_counter() - t0, [], {"message": str(exc)})
        return EXIT_NONCONTRACTION
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        if out.is_dir():
            write_manifest(out, setup, args.command, "error", time.perf_counter() - t0, [],
                           {"message": str(exc)})
        return EXIT_INTERNAL
    write_manifest(out, setup, args.command, termination, time.perf_counter() - t0, files, extra)
    code = EXIT_CODES[termination]
    msg = f"{args.command}: {termination}"
    if "exit_time" in extra:
        msg += f" at t={fmt(extra['exit_time'])}"
    if "verdict" in extra:
        msg += f" ({extra['study']}: {extra['verdict']})"
    print(msg)
    return code


if __name__ == "__main__":
    sys.exit(main())
