"""Sideways problem: march the system in z from full data on a vertical segment.

Given ``h(X, t) = a(t)`` for ``X <= t <= 2Z - X/c`` and the closure
``h3 = rho*h4`` on ``t = z`` (``rho = (c-1)^2/(c+1)^2``), the solution is
determined on ``X <= z <= t <= 2Z - z/c``.  Rewritten as
``h_z = A^{-1}(h_t - beta B h)`` every component is transported in z along
``dt/dz = -1, +1, -1/c, +1/c`` with source ``-(beta/a_k) (B h)_k``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
import numpy as np

from .errors import DimensionMismatch, GeometryError, NonFiniteField
from .forward import _assemble, _iterate, _order, path_points
from .model import (SNAP, CoefficientProfile, Grid, WaveField, A_diagonal, B_matrix,
                    diagonal_ratio, interp_weights)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SidewaysData:
    """Samples ``a[j - i0] = h(X, j*h)`` for ``j = i0 .. top(i0)``, with ``X = i0*h``."""

    i0: int
    h: float
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[1] != 4 or a.shape[0] < 1:
            raise DimensionMismatch("segment data must have shape (n, 4)")
        if not np.all(np.isfinite(a)):
            raise ValueError("segment data must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def X(self) -> float:
        return self.i0 * self.h

    @property
    def t(self) -> np.ndarray:
        return self.h * (self.i0 + np.arange(self.a.shape[0]))

    @classmethod
    def from_trace(cls, trace) -> "SidewaysData":
        """Data at ``z = 0`` from reflection data: ``(m1, 0, m3, 0)``."""
        a = np.zeros((trace.m1.size, 4))
        a[:, 0] = trace.m1
        a[:, 2] = trace.m3
        return cls(0, trace.h, a)

    def check_grid(self, grid: Grid) -> None:
        if abs(self.h - grid.h) > 1e-12 * grid.h:
            raise DimensionMismatch("segment spacing differs from grid step")
        need = int(grid.top(self.i0)) - self.i0 + 1
        if self.a.shape[0] < need:
            raise GeometryError(
                f"data segment at X = {self.X:.6g} has {self.a.shape[0]} samples, needs {need}")


@dataclass(frozen=True)
class MatchingReport:
    r0: float
    r1: float
    passed: bool


def _one_sided_derivative(y: np.ndarray, h: float) -> float:
    if y.size >= 3:
        return float((-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h))
    if y.size == 2:
        return float((y[1] - y[0]) / h)
    raise ValueError("need at least two samples for a derivative")


def check_matching(data: SidewaysData, beta_at_X: float, c: float, tol: float) -> MatchingReport:
    """Corner compatibility of segment data with the diagonal closure.

    ``r0`` measures the closure itself at ``t = X``; ``r1`` its derivative
    along the diagonal, with the z-derivatives eliminated through the equation.
    """
    a = data.a
    Bm = B_matrix(c)
    Ba = Bm @ a[0]
    d3 = _one_sided_derivative(a[:, 2], data.h)
    d4 = _one_sided_derivative(a[:, 3], data.h)
    r0 = (c + 1) ** 2 * a[0, 2] - (1 - c) ** 2 * a[0, 3]
    r1 = ((c + 1) ** 2 * ((1 + c) * d3 - beta_at_X * Ba[2])
          - (c - 1) ** 2 * ((c - 1) * d4 + beta_at_X * Ba[3]))
    return MatchingReport(float(r0), float(r1), bool(max(abs(r0), abs(r1)) <= tol))


def _segment_profile(grid: Grid, beta: CoefficientProfile, i0: int):
    if abs(beta.h - grid.h) > 1e-12 * grid.h:
        raise DimensionMismatch("profile spacing differs from grid step")
    if beta.first_index != i0:
        raise DimensionMismatch(
            f"profile starts at node {beta.first_index}, data segment at node {i0}")
    i1 = i0 + len(beta) - 1
    if i1 > grid.n_sense:
        raise GeometryError(
            f"segment end z = {i1 * grid.h:.6g} beyond the sensing depth {grid.Y:.6g}")
    return np.asarray(beta.samples), i1


def solve_sideways(grid: Grid, beta: CoefficientProfile, data: SidewaysData,
                   interpolation: str = "linear") -> WaveField:
    """March columns ``i0+1 .. i1`` where ``beta`` covers ``[X, i1*h]``.

    Per column, the diagonal node is solved first from the three incoming
    characteristics plus the closure row ``h3 - rho*h4 = 0``; the other nodes
    follow from a 4x4 trapezoidal step each.  Near the diagonal the ``h4``
    characteristic enters from ``t = z`` and takes its foot value there.
    """
    order = _order(interpolation)
    data.check_grid(grid)
    b, i1 = _segment_profile(grid, beta, data.i0)
    i0, h, c = data.i0, grid.h, grid.c
    Bm = B_matrix(c)
    inv_a = 1.0 / A_diagonal(c)
    rho = diagonal_ratio(c)
    eye = np.eye(4)
    rise = inv_a  # t-offset of each foot on the previous column, in steps

    tops = np.array([int(grid.top(i)) for i in range(i0, i1 + 1)])
    ncols = i1 - i0 + 1
    V = np.zeros((ncols, tops[0] + 1, 4))
    V[0, i0:tops[0] + 1] = data.a[:tops[0] - i0 + 1]

    def beta_at(x):
        return beta.at(x * h, order)

    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        for k_col in range(1, ncols):
            i = i0 + k_col
            top_p, top_i = tops[k_col - 1], tops[k_col]
            prev = V[k_col - 1]
            bp, bi = b[k_col - 1], b[k_col]
            D_full = 0.5 * h * inv_a

            j = np.arange(i, top_i + 1)
            f = np.empty((j.size, 4))
            r = np.empty((j.size, 4))
            for k in range(4):
                idx, w = interp_weights(j + rise[k], i - 1, top_p, order)
                fv = np.einsum("np,npk->nk", w, prev[idx])
                f[:, k] = fv[:, k]
                r[:, k] = bp * (fv @ Bm[k])

            # diagonal node: rows 1-3 transport, row 4 closure
            M = eye + bi * D_full[:, None] * Bm
            rhs = f[0] - D_full * r[0]
            M[3] = (0.0, 0.0, 1.0, -rho)
            rhs[3] = 0.0
            diag_val = np.linalg.solve(M, rhs)

            M_full = eye + bi * D_full[:, None] * Bm
            out = (f - D_full * r) @ np.linalg.inv(M_full).T
            out[0] = diag_val

            # h4 feet below the previous column's diagonal: cross t = z mid-step
            cross = j - 1.0 / c < i - 1 - SNAP
            cross[0] = False
            if cross.any():
                jc = j[cross]
                dz = c * (jc - i) / (1.0 - c)        # z-distance from the crossing
                s = i - dz
                wgt = s - (i - 1)
                fv = (1.0 - wgt)[:, None] * prev[i - 1][None] + wgt[:, None] * diag_val[None]
                bs = beta_at(s)
                ff = f[cross].copy()
                rr = r[cross].copy()
                ff[:, 3] = fv[:, 3]
                rr[:, 3] = bs * (fv @ Bm[3])
                D = np.tile(D_full, (jc.size, 1))
                D[:, 3] *= dz
                Mc = eye[None] + bi * D[:, :, None] * Bm[None]
                out[cross] = np.linalg.solve(Mc, (ff - D * rr)[..., None])[..., 0]

            if not np.all(np.isfinite(out)):
                raise NonFiniteField(f"non-finite values in column {i} (z = {i * h:.6g})")
            V[k_col, i:top_i + 1] = out

    lo = np.arange(i0, i1 + 1)
    return WaveField(h, i0, lo, tops, V + 0.0, kind="sideways")


def advance_data(field: WaveField) -> SidewaysData:
    """Segment data on the last column of ``field``."""
    i = int(field.columns[-1])
    _, vals = field.column(i)
    return SidewaysData(i, field.h, vals.copy())


# ------------------------------------------------------------ Picard oracle

def picard_sideways(grid: Grid, beta: CoefficientProfile, data: SidewaysData,
                    tol: float = 1e-12, max_iter: int = 200, full_output: bool = False):
    """Picard iteration on the sideways integral equations.

    Node ``P = (z, t)``, component k: ``h_k(P) = h_k(end) - (1/a_k) * integral of
    beta (B h)_k dz`` along the backward z-characteristic, ending on ``z = X``.
    When the ``h4`` characteristic meets ``t = z`` first, at ``H``, its end
    value is ``h3(H)/rho`` with ``h3(H)`` expressed through the ``h3``
    characteristic from ``H`` back to ``z = X``.  Trapezoid quadrature,
    linear interpolation in t on grid columns and along the diagonal at
    fractional z.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    data.check_grid(grid)
    b, i1 = _segment_profile(grid, beta, data.i0)
    i0, h, c = data.i0, grid.h, grid.c
    Bm = B_matrix(c)
    inv_a = 1.0 / A_diagonal(c)
    rho = diagonal_ratio(c)
    tops = np.array([int(grid.top(i)) for i in range(i0, i1 + 1)])

    flat = -np.ones((i1 - i0 + 1, tops[0] + 1), dtype=np.int64)
    cols = [np.full(tops[k] - (i0 + k) + 1, i0 + k) for k in range(tops.size)]
    iP = np.concatenate(cols)
    jP = np.concatenate([np.arange(i0 + k, tops[k] + 1) for k in range(tops.size)])
    n = iP.size
    flat[iP - i0, jP] = np.arange(n)
    data_nodes = iP == i0
    g = np.zeros(4 * n)
    g.reshape(n, 4)[data_nodes] = data.a[jP[data_nodes] - i0]

    def beta_lin(x):
        return np.interp(x * h, beta.z, beta.samples)

    def stencil(z, t):
        """Nodes and weights reading ``h`` at ``(z, t)`` (index units)."""
        integral = np.abs(z - np.round(z)) <= SNAP
        zc = np.clip(np.round(z).astype(int), i0, i1)
        idx, w = interp_weights(t, zc, tops[zc - i0], 1)
        col_nodes = flat[zc[:, None] - i0, idx]
        fl = np.clip(np.floor(z + SNAP).astype(int), i0, i1)
        fl1 = np.minimum(fl + 1, i1)
        fr = z - fl
        dg_nodes = np.stack([flat[fl - i0, fl], flat[fl1 - i0, fl1]], axis=1)
        dg_w = np.stack([1.0 - fr, fr], axis=1)
        nodes = np.where(integral[:, None], col_nodes, dg_nodes)
        wts = np.where(integral[:, None], w, dg_w)
        if np.any((nodes < 0) & (wts != 0.0)):
            raise RuntimeError("sample outside the sideways domain")
        return nodes, wts

    rows, colidx, vals = [], [], []

    def add(owner_rows, nodes, wts, coef, terms):
        # coef * sum over stencil of sum_m bm * h_m
        for p in range(nodes.shape[1]):
            for m, bm in terms:
                rows.append(owner_rows)
                colidx.append(4 * nodes[:, p] + m)
                vals.append(coef * bm * wts[:, p])

    def path_terms(owner_rows, start_z, end_z, t_of, k, scale):
        """Add ``scale * (-(1/a_k)) * integral beta (B h)_k`` from end to start."""
        owner, s, w = path_points(start_z, end_z)
        t = t_of(owner, s)
        nodes, wts = stencil(s, t)
        coef = scale * (-inv_a[k]) * h * w * beta_lin(s)
        add(owner_rows[owner], nodes, wts, coef,
            [(m, Bm[k, m]) for m in np.nonzero(Bm[k])[0]])

    inner = ~data_nodes
    pi, pj = iP[inner].astype(float), jP[inner].astype(float)
    pid = np.nonzero(inner)[0]
    for k in range(4):
        if k < 3:
            ok = np.ones(pid.size, bool)
        else:
            ystar = (pi - c * pj) / (1.0 - c)
            ok = ystar <= i0 + SNAP
        # ends on z = X
        sel = np.nonzero(ok)[0]
        own = 4 * pid[sel] + k
        zi, tj = pi[sel], pj[sel]
        t_end = tj + (zi - i0) * inv_a[k]
        nodes, wts = stencil(np.full(sel.size, float(i0)), t_end)
        add(own, nodes, wts, np.ones(sel.size), [(k, 1.0)])
        path_terms(own, zi, np.full(sel.size, float(i0)),
                   lambda o, s, zi=zi, tj=tj, k=k: tj[o] + (zi[o] - s) * inv_a[k], k, 1.0)
        if k < 3 or ok.all():
            continue
        # h4 reflected at H = (y*, y*) on t = z
        sel = np.nonzero(~ok)[0]
        own = 4 * pid[sel] + 3
        zi, tj, ys = pi[sel], pj[sel], ystar[sel]
        path_terms(own, zi, ys,
                   lambda o, s, zi=zi, tj=tj: tj[o] + (zi[o] - s) * inv_a[3], 3, 1.0)
        # h3(H) / rho
        t_x = ys + (ys - i0) / c
        nodes, wts = stencil(np.full(sel.size, float(i0)), t_x)
        add(own, nodes, wts, np.full(sel.size, 1.0 / rho), [(2, 1.0)])
        path_terms(own, ys, np.full(sel.size, float(i0)),
                   lambda o, s, ys=ys: ys[o] + (ys[o] - s) / c, 2, 1.0 / rho)

    S = _assemble(np.concatenate(rows), np.concatenate(colidx), np.concatenate(vals), 4 * n)
    x, it, diff = _iterate(S, g, tol, max_iter, "picard_sideways")

    V = np.zeros((tops.size, tops[0] + 1, 4))
    V[iP - i0, jP] = x.reshape(n, 4)
    field = WaveField(h, i0, np.arange(i0, i1 + 1), tops, V + 0.0, kind="sideways")
    if full_output:
        from .forward import PicardResult
        return PicardResult(field, it, diff)
    return field
