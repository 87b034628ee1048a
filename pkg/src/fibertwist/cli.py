"""Command line: ``fibertwist {simulate,reconstruct,verify,transform}``.

Settings come from an optional flat ``key = value`` file (``#`` starts a
comment) and are overridden by flags of the same name.  Every run is
deterministic; there is no seed.

Exit status: 0 success, 1 usage/config/input error, 2 non-convergence,
3 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import expr as _expr
from .diagnostics import (check_divergence_identity, check_energy_inequality,
                          check_linearization, energy_J)
from .errors import ConfigError, DimensionMismatch, GeometryError, NoConvergence
from .forward import picard_forward, profile_on, solve_forward
from .invert import MODES, reconstruct
from .model import BoundaryTrace, CoefficientProfile, Grid, transform_E_to_M
from .sideways import SidewaysData, check_matching, picard_sideways, solve_sideways

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_VERIFY = 0, 1, 2, 3
FMT = "%.17g"
EXAMPLE1 = "3*z^2*cos(10*z)*log(z+1)"


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class RunConfig:
    c: float = 0.5
    Z: float = math.pi / 2
    N: int = 32
    beta: Optional[str] = EXAMPLE1
    beta0: str = "z"
    K: Optional[float] = None
    tol: float = 1e-8
    max_iter: int = 100
    mode: str = "global"
    refine_data: bool = True
    interpolation: str = "linear"
    dump_field: bool = False
    out: str = "out"

    @property
    def grid(self) -> Grid:
        return Grid.create(self.c, self.Z, self.N)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _number(text: str) -> float:
    """Float literal or constant expression; ``pi`` is allowed."""
    try:
        return float(text)
    except ValueError:
        pass
    src = re.sub(r"\bpi\b", repr(math.pi), text)
    try:
        e = _expr.parse(src)
        if re.search(r"\bz\b", src):
            raise ConfigError(f"{text!r} must be a constant")
        return float(_expr.evaluate(e, 0.0))
    except _expr.ExprError as exc:
        raise ConfigError(f"cannot read number {text!r}: {exc}") from exc


def _convert(key: str, text: str):
    text = text.strip()
    if key in ("c", "Z", "tol"):
        return _number(text)
    if key == "K":
        return None if text.lower() in ("", "none") else _number(text)
    if key in ("N", "max_iter"):
        v = _number(text)
        if v != int(v):
            raise ConfigError(f"{key} must be an integer, got {text!r}")
        return int(v)
    if key in ("refine_data", "dump_field"):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key} must be a boolean, got {text!r}")
    if key == "beta":
        return None if text.lower() in ("", "none") else text
    return text


KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config_text(text: str) -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return values


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _convert(k, v) if isinstance(v, str) else v
    cfg = replace(RunConfig(), **values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Reject bad settings before any solve starts."""
    try:
        grid = cfg.grid
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.tol <= 0 or not math.isfinite(cfg.tol):
        raise ConfigError("tol must be positive")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg.mode == "stepped" and cfg.K is None:
        raise ConfigError("stepped mode needs K")
    if cfg.K is not None and cfg.K < 0:
        raise ConfigError("K must be non-negative")
    if cfg.interpolation not in ("linear", "cubic"):
        raise ConfigError("interpolation must be 'linear' or 'cubic'")
    # expressions are checked on the finest grid they will meet
    fine = grid.refined(2) if cfg.refine_data else grid
    if cfg.beta is not None:
        load_beta(cfg.beta, fine)
    _eval_check(cfg.beta0, grid, "beta0")


def _eval_check(text: str, grid: Grid, what: str) -> CoefficientProfile:
    try:
        return CoefficientProfile.on_grid(text, grid)
    except _expr.ExprError as exc:
        raise ConfigError(f"{what} = {text!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{what} = {text!r}: {exc}") from exc


def load_beta(spec: str, grid: Grid) -> CoefficientProfile:
    """Expression, or path to a ``z,beta`` CSV sampled uniformly from ``z = 0``."""
    if os.path.isfile(spec):
        prof = read_profile(spec)
        if prof.z0 != 0.0 or prof.z1 < grid.Z - 1e-9 * grid.Z:
            raise ConfigError(f"{spec}: profile must cover [0, {grid.Z:.17g}]")
        return profile_on(grid, prof)
    return _eval_check(spec, grid, "beta")


# --------------------------------------------------------------------- csv

def _write_csv(path: str, header: str, cols) -> None:
    arr = np.column_stack([np.asarray(c, dtype=float) for c in cols])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, arr, fmt=FMT, delimiter=",")


def _read_csv(path: str, header: str) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != header:
                raise ConfigError(f"{path}: expected header {header!r}, got {first!r}")
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    width = header.count(",") + 1
    rows = [r for r in rows if r]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    try:
        arr = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if arr.shape[1] != width:
        raise ConfigError(f"{path}: expected {width} columns")
    return arr


def _uniform_step(x: np.ndarray, path: str) -> float:
    if x.size < 2:
        raise ConfigError(f"{path}: need at least two rows")
    d = np.diff(x)
    h = (x[-1] - x[0]) / (x.size - 1)
    if np.max(np.abs(d - h)) > 1e-9 * h:
        raise ConfigError(f"{path}: samples are not uniformly spaced")
    return float(h)


def write_trace(path: str, trace: BoundaryTrace) -> None:
    _write_csv(path, "t,m1,m3", (trace.t, trace.m1, trace.m3))


def read_trace(path: str) -> BoundaryTrace:
    arr = _read_csv(path, "t,m1,m3")
    if arr[0, 0] != 0.0:
        raise ConfigError(f"{path}: trace must start at t = 0")
    h = _uniform_step(arr[:, 0], path)
    try:
        return BoundaryTrace(h, arr[:, 1], arr[:, 2])
    except (DimensionMismatch, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_profile(path: str, prof: CoefficientProfile) -> None:
    _write_csv(path, "z,beta", (prof.z, prof.samples))


def read_profile(path: str) -> CoefficientProfile:
    arr = _read_csv(path, "z,beta")
    h = _uniform_step(arr[:, 0], path)
    return CoefficientProfile(float(arr[0, 0]), h, arr[:, 1], source=path)


def write_field(path: str, field) -> None:
    rows = []
    for j in range(field.values.shape[1]):
        i, vals = field.level(j)
        if i.size:
            rows.append(np.column_stack([i * field.h, np.full(i.size, j * field.h), vals]))
    _write_csv(path, "z,t,m1,m2,m3,m4", np.vstack(rows).T)


def write_plot(stem: str, z, beta_exact, beta_app) -> None:
    """``stem.csv`` backing data and ``stem.svg``; byte-identical across reruns."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ex = np.full(len(z), np.nan) if beta_exact is None else beta_exact
    _write_csv(stem + ".csv", "z,beta_exact,beta_app", (z, ex, beta_app))
    with matplotlib.rc_context({"svg.hashsalt": "fibertwist", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        if beta_exact is not None:
            ax.plot(z, beta_exact, "k-", lw=1.2, label="exact")
        ax.plot(z, beta_app, "r--", lw=1.2, label="reconstructed")
        ax.set_xlabel("z")
        ax.set_ylabel("beta")
        ax.legend()
        fig.tight_layout()
        fig.savefig(stem + ".svg", format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------- commands

def _out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def cmd_simulate(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    if cfg.beta is None:
        raise ConfigError("simulate needs beta")
    grid = cfg.grid
    g = grid.refined(2) if cfg.refine_data else grid
    sol = solve_forward(g, load_beta(cfg.beta, g), cfg.interpolation)
    trace, field = sol.trace, sol.field
    if cfg.refine_data:
        trace, field = trace.restrict(2), field.restrict_to(2)
    out = _out_dir(cfg)
    write_trace(os.path.join(out, "trace.csv"), trace)
    if cfg.dump_field:
        write_field(os.path.join(out, "field.csv"), field)
    J0 = energy_J(field, 0, grid.c, grid.params.eps_star, grid.N)
    print(f"grid: c={grid.c:.6g} Z={grid.Z:.6g} N={grid.N} h={grid.h:.6g}"
          f"{' (data from 2N)' if cfg.refine_data else ''}", file=stdout)
    print(f"max |m|: {field.max_abs():.6e}", file=stdout)
    print(f"energy J(z=0): {J0:.6e}", file=stdout)
    return EXIT_OK


def _write_report(path: str, rep, cfg: RunConfig) -> None:
    lines = [f"mode = {rep.mode}", f"converged = {str(rep.converged).lower()}",
             f"total_iterations = {rep.total_iterations}"]
    for (i0, i1), it, hist in zip(rep.segments, rep.iterations, rep.history):
        lines.append(f"segment {i0}..{i1}: iterations = {it}")
        lines.append("  history = " + " ".join(FMT % d for d in hist))
    if rep.E2 is not None:
        lines.append(f"E2 = {FMT % rep.E2}")
        lines.append(f"Einf = {FMT % rep.Einf}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_reconstruct(cfg: RunConfig, trace_path: str, stdout=None) -> int:
    stdout = stdout or sys.stdout
    grid = cfg.grid
    trace = read_trace(trace_path)
    try:
        trace.check_grid(grid)
    except DimensionMismatch as exc:
        raise ConfigError(f"{trace_path}: {exc}") from exc
    exact = None
    if cfg.beta is not None:
        exact = load_beta(cfg.beta, grid).restrict(0, grid.n_sense)
    beta0 = CoefficientProfile.on_grid(cfg.beta0, grid)
    out = _out_dir(cfg)
    status = EXIT_OK
    try:
        rep = reconstruct(trace, grid, K=cfg.K, mode=cfg.mode, tol=cfg.tol,
                          max_iter=cfg.max_iter, beta0=beta0, beta_exact=exact,
                          interpolation=cfg.interpolation)
    except NoConvergence as exc:
        rep, status = exc.partial, EXIT_NOCONV
        print(f"no convergence: {exc}", file=stdout)
    app = rep.beta_app
    write_profile(os.path.join(out, "beta_app.csv"), app)
    _write_report(os.path.join(out, "report.txt"), rep, cfg)
    ex = None if exact is None else exact.samples[:len(app)]
    write_plot(os.path.join(out, "plot"), app.z, ex, app.samples)
    print(f"{'converged' if status == EXIT_OK else 'stopped'} after "
          f"{rep.total_iterations} iterations on [0, {app.z1:.6g}]", file=stdout)
    if rep.E2 is not None:
        print(f"E2 = {rep.E2:.6e}  Einf = {rep.Einf:.6e}", file=stdout)
    return status


def _shrink(coarse: float, fine: float, scale: float) -> bool:
    """Refinement probe: shrinks by 1.5x, or both sit at round-off."""
    floor = 1e-12 * max(1.0, scale)
    return (coarse <= floor and fine <= floor) or fine * 1.5 <= coarse


def run_battery(cfg: RunConfig) -> list[tuple[str, bool, str]]:
    """Oracle, energy, identity, linearization, round-trip and matching checks."""
    if cfg.beta is None:
        raise ConfigError("verify needs beta")
    results = []
    g1 = cfg.grid
    g2 = g1.refined(2)

    fw, sw, sp, dv = [], [], [], []
    for g in (g1, g2):
        b = load_beta(cfg.beta, g)
        f = solve_forward(g, b, cfg.interpolation)
        fw.append(f.field.common_max_abs_diff(picard_forward(g, b)))
        data = SidewaysData.from_trace(f.trace)
        bs = b.restrict(0, g.n_sense)
        side = solve_sideways(g, bs, data, cfg.interpolation)
        sw.append(side.common_max_abs_diff(picard_sideways(g, bs, data)))
        sp.append(side.max_abs())
        dv.append(check_divergence_identity(f.field, f.field, b, g.c))
        if g is g1:
            eng = check_energy_inequality(side, bs, g.params)
            mat = check_matching(data, float(b.samples[0]), g.c,
                                 tol=10 * g.h * max(1.0, float(np.max(np.abs(data.a)))))
            trace = f.trace
            scale = f.field.max_abs()
    results.append(("forward oracle", _shrink(fw[0], fw[1], scale),
                     f"max diff {fw[0]:.3e} -> {fw[1]:.3e}"))
    results.append(("sideways oracle", _shrink(sw[0], sw[1], max(sp)),
                     f"max diff {sw[0]:.3e} -> {sw[1]:.3e}"))
    results.append(("energy inequality", eng.passed,
                    f"worst ratio {eng.worst_ratio:.3e} (allowed {eng.slack:.4g})"))
    results.append(("divergence identity", _shrink(dv[0], dv[1], 1.0),
                    f"residual {dv[0]:.3e} -> {dv[1]:.3e}"))
    lin = check_linearization("z^2", g1, [1e-2, 1e-3, 1e-4])
    results.append(("linearization order", lin.passed,
                    f"slope {lin.slope}, m1 slope {lin.m1_slope}"))
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack([trace.t, trace.m1, trace.m3]), fmt=FMT, delimiter=",")
    back = np.loadtxt(io.StringIO(buf.getvalue()), delimiter=",", ndmin=2)
    same = (np.array_equal(back[:, 1], trace.m1) and np.array_equal(back[:, 2], trace.m3))
    results.append(("csv round-trip", same, "bit-exact" if same else "values changed"))
    results.append(("matching", mat.passed, f"r0 {mat.r0:.3e}, r1 {mat.r1:.3e}"))
    return results


def cmd_verify(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    results = run_battery(cfg)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stdout)
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print("failed: " + ", ".join(failed), file=stdout)
        return EXIT_VERIFY
    return EXIT_OK


TRANSFORM_IN = "E1z,E1t,E2z,E2t,E1,E2,beta"


def cmd_transform(in_path: str, out_path: str, c1: float, c2: float) -> int:
    arr = _read_csv(in_path, TRANSFORM_IN)
    try:
        m = transform_E_to_M(*arr.T, c1, c2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_csv(out_path, "m1,m2,m3,m4", m)
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fibertwist", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", help="key = value settings file")
        for key in KEYS:
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None)

    run_flags(sub.add_parser("simulate", help="forward solve, write the reflection trace"))
    rp = sub.add_parser("reconstruct", help="recover beta from a trace file")
    rp.add_argument("trace")
    run_flags(rp)
    run_flags(sub.add_parser("verify", help="run the check battery"))
    tp = sub.add_parser("transform", help="field channels to characteristic components")
    tp.add_argument("input", help=f"CSV with header {TRANSFORM_IN}")
    tp.add_argument("output")
    tp.add_argument("--c1", required=True, type=float)
    tp.add_argument("--c2", required=True, type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "transform":
            return cmd_transform(args.input, args.output, args.c1, args.c2)
        cfg = load_config(args.config, {k: getattr(args, k) for k in KEYS})
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.trace)
        return cmd_verify(cfg)
    except (ConfigError, DimensionMismatch, GeometryError, _expr.ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV


if __name__ == "__main__":
    sys.exit(main())
