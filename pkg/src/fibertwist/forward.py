"""Forward problem: the characteristic boundary value problem on the triangle D.

On ``0 <= z <= t <= 2Z - z`` solve ``m_t = A m_z + beta B m`` with

* ``m2 = m4 = 0`` on ``z = 0``;
* ``m1 = 0``, ``m3 = k3*beta``, ``m4 = k4*beta`` on ``t = z``.

:func:`solve_forward` marches t-levels with the trapezoidal rule along each
component's characteristic (``dz/dt = -1, +1, -c, +c``).  :func:`picard_forward`
iterates the equivalent Volterra integral equations and shares no stepping
code with it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NoConvergence, NonFiniteField
from .model import (SNAP, BoundaryTrace, CoefficientProfile, Grid, WaveField,
                    B_matrix, diagonal_coefficients, interp_weights)

log = logging.getLogger(__name__)

# characteristic speeds dz/dt of m1..m4
def _speeds(c):
    return np.array([-1.0, 1.0, -c, c])


_ORDERS = {"linear": 1, "cubic": 3}


def _order(interpolation: Union[str, int]) -> int:
    if interpolation in (1, 3):
        return int(interpolation)
    try:
        return _ORDERS[interpolation]
    except KeyError:
        raise ValueError(f"interpolation must be 'linear' or 'cubic', got {interpolation!r}")


@dataclass(frozen=True)
class ForwardSolution:
    field: WaveField
    trace: BoundaryTrace
    beta: CoefficientProfile


def _check_profile(grid: Grid, beta: CoefficientProfile, first: int, last: int):
    if abs(beta.h - grid.h) > 1e-12 * grid.h:
        raise DimensionMismatch(f"profile spacing {beta.h} differs from grid step {grid.h}")
    if abs(beta.z0 - beta.first_index * grid.h) > 1e-9 * grid.h:
        raise DimensionMismatch("profile does not start on a grid node")
    lo = beta.first_index
    hi = lo + len(beta) - 1
    if lo > first or hi < last:
        raise DimensionMismatch(
            f"profile covers nodes {lo}..{hi}, solver needs {first}..{last}")
    return np.asarray(beta.samples[first - lo:last - lo + 1])


def _gather(rows: np.ndarray, x, lo, hi, order: int) -> np.ndarray:
    idx, w = interp_weights(x, lo, hi, order)
    return np.einsum("np,npk->nk", w, rows[idx])


def solve_forward(grid: Grid, beta: CoefficientProfile,
                  interpolation: str = "linear") -> ForwardSolution:
    """March the forward CBVP through t-levels ``j = 1..2N``.

    Each component is advanced along its own characteristic with the
    trapezoidal rule; off-grid feet are interpolated in z on the previous
    level (linear by default, cubic on request).  Feet that cross ``t = z``
    inside the step take the diagonal data at the crossing point.  The
    implicit coupling at a node is a 4x4 system ``(I - dt/2 beta B) m = rhs``,
    solved directly (``I - a B`` is invertible for antisymmetric ``B``).

    Raises
    ------
    DimensionMismatch
        ``beta`` does not cover ``[0, Z]`` at the grid spacing.
    NonFiniteField
        Some node became inf/nan.
    """
    order = _order(interpolation)
    N, h, c = grid.N, grid.h, grid.c
    b = _check_profile(grid, beta, 0, N)
    Bm = B_matrix(c)
    k3, k4 = diagonal_coefficients(c)
    v = _speeds(c)
    eye = np.eye(4)

    # per-node implicit matrices for full steps; row 0 carries m2 = m4 = 0
    mats = eye[None] - 0.5 * h * b[:, None, None] * Bm[None]
    mats[0, 1] = eye[1]
    mats[0, 3] = eye[3]
    inv = np.linalg.inv(mats)

    def beta_at(x):
        return beta.at(x * h, order)

    V = np.zeros((N + 1, 2 * N + 1, 4))
    V[0, 0] = (0.0, 0.0, k3 * b[0], 0.0)

    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        for j in range(1, 2 * N + 1):
            L = grid.level_extent(j - 1)
            prev = V[:L + 1, j - 1]
            diag = j <= N
            if diag:
                foot = V[j - 1, j - 1]
                m3d, m4d = k3 * b[j], k4 * b[j]
                r_foot = b[j - 1] * (Bm[1] @ foot)
                r_here = b[j] * (Bm[1, 2] * m3d + Bm[1, 3] * m4d)
                V[j, j] = (0.0, foot[1] + 0.5 * h * (r_foot + r_here), m3d, m4d)
            n = j if diag else grid.level_extent(j) + 1
            i = np.arange(n)

            rhs = np.empty((n, 4))
            for k in range(4):
                xf = i - v[k]
                fv = _gather(prev, xf, 0, L, order)
                rhs[:, k] = fv[:, k] + 0.5 * h * beta_at(xf) * (fv @ Bm[k])
            rhs[0, 1] = rhs[0, 3] = 0.0
            out = np.einsum("nkl,nl->nk", inv[:n], rhs)

            if diag:
                # node (j-1, j): the m1 and m3 characteristics leave through t = z
                i_c = j - 1
                dt = np.array([0.5, 1.0, 1.0 / (1.0 + c), 1.0])
                r = rhs[i_c].copy()
                d_lo, d_hi = V[j - 1, j - 1], V[j, j]
                for k in (0, 2):
                    s = j - dt[k]
                    f = s - (j - 1)
                    bs = beta_at(s)
                    fv = np.array([0.0, (1 - f) * d_lo[1] + f * d_hi[1], k3 * bs, k4 * bs])
                    r[k] = fv[k] + 0.5 * dt[k] * h * bs * (Bm[k] @ fv)
                M = eye - 0.5 * h * b[i_c] * dt[:, None] * Bm
                if i_c == 0:
                    M[1], M[3] = eye[1], eye[3]
                    r[1] = r[3] = 0.0
                out[i_c] = np.linalg.solve(M, r)

                if order == 3 and j == 2:
                    # level 1 has two nodes only; the m3 characteristic of (0, 2)
                    # meets t = z within 4/3 steps, so take its foot there instead
                    dt3 = 2.0 / (1.0 + c)
                    s = j - dt3
                    bs = beta_at(s)
                    fv = np.array([0.0, (1 - s) * V[0, 0, 1] + s * V[1, 1, 1], k3 * bs, k4 * bs])
                    r = rhs[0].copy()
                    r[2] = fv[2] + 0.5 * dt3 * h * bs * (Bm[2] @ fv)
                    M = eye - 0.5 * h * b[0] * np.array([1.0, 1.0, dt3, 1.0])[:, None] * Bm
                    M[1], M[3] = eye[1], eye[3]
                    out[0] = np.linalg.solve(M, r)

            if not np.all(np.isfinite(out)):
                raise NonFiniteField(f"non-finite values on t-level {j} (t = {j * h:.6g})")
            V[:n, j] = out

    lo = np.arange(N + 1)
    # adding +0.0 turns the -0.0 of k3*0 into +0.0
    field = WaveField(h, 0, lo, 2 * N - lo, V + 0.0, kind="D")
    return ForwardSolution(field, extract_traces_from_field(field), beta)


def extract_traces_from_field(field: WaveField) -> BoundaryTrace:
    j, vals = field.column(0)
    if j[0] != 0:
        raise DimensionMismatch("field does not contain the z = 0 column from t = 0")
    return BoundaryTrace(field.h, vals[:, 0].copy(), vals[:, 2].copy())


def extract_traces(sol: ForwardSolution) -> BoundaryTrace:
    """Copy ``(m1, m3)`` on ``z = 0`` into a :class:`BoundaryTrace`."""
    return extract_traces_from_field(sol.field)


def profile_on(grid: Grid, beta: Union[str, CoefficientProfile], depth=None,
               order: int = 3) -> CoefficientProfile:
    """Sample ``beta`` on ``[0, depth]`` at the grid step.

    Expressions are evaluated exactly; bare sample arrays are re-interpolated.
    """
    depth = grid.Z if depth is None else depth
    if isinstance(beta, str):
        return CoefficientProfile.on_grid(beta, grid, depth)
    if beta.expr is not None:
        return CoefficientProfile.from_expression(beta.expr, 0.0, depth, grid.h)
    z = grid.h * np.arange(int(round(depth / grid.h)) + 1)
    return CoefficientProfile(0.0, grid.h, beta.at(z, order))


def generate_data(grid: Grid, beta: Union[str, CoefficientProfile], refine: bool = True,
                  interpolation: str = "linear") -> BoundaryTrace:
    """Reflection data on ``grid``.

    With ``refine`` the forward problem is solved on a grid twice as fine and
    the trace restricted, so the inversion never sees its own discretization.
    """
    g = grid.refined(2) if refine else grid
    trace = solve_forward(g, profile_on(g, beta), interpolation).trace
    return trace.restrict(2) if refine else trace


# ------------------------------------------------------------ Picard oracle

def path_points(start, end):
    """Sample positions on descending paths ``start -> end`` (node-index units).

    Each path visits its start, every integer strictly between the two
    endpoints, and its end.  Returns ``(owner, pos, weight)`` where ``weight``
    are composite-trapezoid weights along the path.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n_paths = start.size
    degenerate = start - end <= SNAP
    first = np.floor(end + SNAP).astype(int) + 1
    last = np.ceil(start - SNAP).astype(int) - 1
    n_int = np.where(degenerate, 0, np.maximum(last - first + 1, 0))
    n_pts = np.where(degenerate, 1, n_int + 2)
    owner = np.repeat(np.arange(n_paths), n_pts)
    offs = np.concatenate([[0], np.cumsum(n_pts)[:-1]])
    q = np.arange(owner.size) - offs[owner]
    pos = last[owner] - (q - 1).astype(float)
    is_start = q == 0
    is_end = (q == n_pts[owner] - 1) & ~degenerate[owner]
    pos = np.where(is_start, start[owner], pos)
    pos = np.where(is_end, end[owner], pos)

    w = np.zeros(owner.size)
    nxt = np.where(q < n_pts[owner] - 1, np.roll(pos, -1), pos)
    prv = np.where(q > 0, np.roll(pos, 1), pos)
    w = 0.5 * ((prv - pos) + (pos - nxt))
    return owner, pos, w


def _is_integral(x):
    return np.abs(x - np.round(x)) <= SNAP


def _assemble(rows, cols, vals, n):
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))


def _iterate(S, g, tol, max_iter, what):
    x = np.zeros_like(g)
    diff = np.inf
    for it in range(1, max_iter + 1):
        x_new = g + S @ x
        diff = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        x = x_new
        if not np.all(np.isfinite(x)):
            raise NonFiniteField(f"{what}: iterate became non-finite at iteration {it}")
        if diff <= tol:
            log.info("%s converged in %d iterations (last change %.3e)", what, it, diff)
            return x, it, diff
    raise NoConvergence(f"{what}: no convergence in {max_iter} iterations "
                        f"(last change {diff:.3e})", max_iter, diff, partial=x)


@dataclass(frozen=True)
class PicardResult:
    field: WaveField
    iterations: int
    residual: float


def picard_forward(grid: Grid, beta: CoefficientProfile, tol: float = 1e-12,
                   max_iter: int = 200, full_output: bool = False):
    """Solve the forward problem by Picard iteration on its integral equations.

    For a node P and component k the equation reads
    ``v_k(P) = boundary value at the foot + integral of (beta B v)_k`` along the
    backward characteristic through P; the foot lies on ``t = z`` (m1, m3 and
    m4 below ``z = ct``) or on ``z = 0`` (m2, m4 above it).  Integrals use the
    composite trapezoid rule at the t-levels the path crosses, with linear
    interpolation in z; end points on a boundary interpolate along it.

    The iteration starts from zero and stops once successive iterates differ
    by at most ``tol`` in max norm.  Memory grows like ``N**3``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    N, h, c = grid.N, grid.h, grid.c
    _check_profile(grid, beta, 0, N)
    Bm = B_matrix(c)
    k3, k4 = diagonal_coefficients(c)
    speeds = _speeds(c)

    flat = -np.ones((N + 1, 2 * N + 1), dtype=np.int64)
    ii, jj = [], []
    for i in range(N + 1):
        js = np.arange(i, 2 * N - i + 1)
        ii.append(np.full(js.size, i))
        jj.append(js)
    iP = np.concatenate(ii)
    jP = np.concatenate(jj)
    n_nodes = iP.size
    flat[iP, jP] = np.arange(n_nodes)

    def beta_lin(x):
        return np.interp(x * h, beta.z, beta.samples)

    g = np.zeros(4 * n_nodes)
    rows, cols, vals = [], [], []
    for k in range(4):
        v = speeds[k]
        if k == 0:
            s_end = (iP + jP) / 2.0
            on_diag = np.ones(n_nodes, bool)
        elif k == 1:
            s_end = (jP - iP).astype(float)
            on_diag = np.zeros(n_nodes, bool)
        elif k == 2:
            s_end = (iP + c * jP) / (1.0 + c)
            on_diag = np.ones(n_nodes, bool)
        else:
            on_diag = iP > c * jP + SNAP
            s_end = np.where(on_diag, (iP - c * jP) / (1.0 - c), jP - iP / c)

        if k == 2:
            g[4 * np.arange(n_nodes) + k] = k3 * beta_lin(s_end)
        elif k == 3:
            g[4 * np.arange(n_nodes) + k] = np.where(on_diag, k4 * beta_lin(s_end), 0.0)

        owner, s, w = path_points(jP.astype(float), s_end)
        x = iP[owner] + v * (s - jP[owner])
        level = _is_integral(s)

        # stencils: on a t-level interpolate in z; elsewhere along the boundary
        sl = np.round(s).astype(int)
        idx_l, w_l = interp_weights(x, 0, np.minimum(sl, 2 * N - sl), 1)
        lev_nodes = flat[idx_l, sl[:, None]]
        fl = np.floor(s + SNAP).astype(int)
        fr = s - fl
        bd = on_diag[owner]
        fd0, fd1 = np.minimum(fl, N), np.minimum(fl + 1, N)
        fa0, fa1 = np.clip(fl, 0, 2 * N), np.clip(fl + 1, 0, 2 * N)
        n0 = np.where(bd, flat[fd0, fd0], flat[0, fa0])
        n1 = np.where(bd, flat[fd1, fd1], flat[0, fa1])
        bnd_nodes = np.stack([n0, n1], axis=1)
        bnd_w = np.stack([1.0 - fr, fr], axis=1)
        nodes = np.where(level[:, None], lev_nodes, bnd_nodes)
        wts = np.where(level[:, None], w_l, bnd_w)
        coef = h * w * beta_lin(x)
        for m in np.nonzero(Bm[k])[0]:
            for p in range(2):
                rows.append(4 * owner + k)
                cols.append(4 * nodes[:, p] + m)
                vals.append(coef * Bm[k, m] * wts[:, p])

        # zero-weight stencil slots may point outside the triangle
        for p in range(2):
            bad = (nodes[:, p] < 0) & (wts[:, p] != 0.0)
            if bad.any():
                raise RuntimeError("path sample outside the forward triangle")
    S =_assemble(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), 4 * n_nodes)
    x, it, diff = _iterate(S, g, tol, max_iter, "picard_forward")

    V = np.zeros((N + 1, 2 * N + 1, 4))
    V[iP, jP] = x.reshape(n_nodes, 4)
    lo = np.arange(N + 1)
    field = WaveField(h, 0, lo, 2 * N - lo, V + 0.0, kind="D")
    return PicardResult(field, it, diff) if full_output else field
