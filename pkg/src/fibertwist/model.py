"""Model constants, grid/profile/field containers and the small pointwise formulas.

The fiber state is the 4-vector ``m = (m1, m2, m3, m4)``: left/right movers of
the fast channel (speed 1) and left/right movers of the slow channel (speed
``c``).  It obeys ``m_t = A m_z + beta(z) B m`` with

    A = diag(1, -1, c, -c)

    B = 1/2 * [[ 0,    0,   -1-c, -1+c],
               [ 0,    0,    1-c,  1+c],
               [ 1+c, -1+c,  0,    0  ],
               [ 1-c, -1-c,  0,    0  ]]

Index conventions used throughout the package: ``i`` counts z-steps, ``j``
counts t-steps, both of length ``h = Z/N``; node ``(i, j)`` sits at
``(z, t) = (i*h, j*h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import expr as _expr
from .errors import DimensionMismatch

# slack used when snapping geometric positions (in units of h) to node indices
SNAP = 1e-9


# ----------------------------------------------------------- matrices

def B_matrix(c: float) -> np.ndarray:
    """Coupling matrix, including the factor 1/2.  Antisymmetric."""
    return 0.5 * np.array([
        [0.0, 0.0, -1.0 - c, -1.0 + c],
        [0.0, 0.0, 1.0 - c, 1.0 + c],
        [1.0 + c, -1.0 + c, 0.0, 0.0],
        [1.0 - c, -1.0 - c, 0.0, 0.0],
    ])


def A_diagonal(c: float) -> np.ndarray:
    return np.array([1.0, -1.0, c, -c])


def apply_B(v, c: float) -> np.ndarray:
    """``B @ v`` for a 4-vector or any array whose last axis has length 4."""
    return np.asarray(v, dtype=float) @ B_matrix(c).T


def apply_A(v, c: float) -> np.ndarray:
    return np.asarray(v, dtype=float) * A_diagonal(c)


def diagonal_coefficients(c: float) -> tuple[float, float]:
    """Factors ``(k3, k4)`` with ``m3 = k3*beta`` and ``m4 = k4*beta`` on ``t = z``."""
    return (c - 1.0) / (2.0 * (c + 1.0)), (c + 1.0) / (2.0 * (c - 1.0))


def diagonal_ratio(c: float) -> float:
    """``(c-1)^2/(c+1)^2``: the ratio ``m3/m4`` imposed on ``t = z``."""
    return (c - 1.0) ** 2 / (c + 1.0) ** 2


def char_boundary_values(beta_at_z, c: float):
    """Values ``(m1, m3, m4)`` carried by the characteristic ``t = z``."""
    k3, k4 = diagonal_coefficients(c)
    beta_at_z = np.asarray(beta_at_z, dtype=float)
    m1 = np.zeros_like(beta_at_z)
    if m1.ndim == 0:
        return 0.0, float(k3 * beta_at_z), float(k4 * beta_at_z)
    return m1, k3 * beta_at_z, k4 * beta_at_z


def transform_E_to_M(E1z, E1t, E2z, E2t, E1, E2, beta, c1, c2) -> np.ndarray:
    """Left/right moving components built from the two transverse field channels.

    ``c1``, ``c2`` are the channel speeds ``c0/sqrt(1 + alpha_i)``.
    """
    if c1 <= 0 or c2 <= 0:
        raise ValueError("channel speeds must be positive")
    u = E1z - beta * E2
    w = E2z + beta * E1
    return 0.5 * np.array([u + E1t / c1, u - E1t / c1, w + E2t / c2, w - E2t / c2])


def channel_speed(c0: float, alpha: float) -> float:
    if 1.0 + alpha <= 0:
        raise ValueError("need 1 + alpha > 0")
    return c0 / math.sqrt(1.0 + alpha)


# ------------------------------------------------------------ parameters

@dataclass(frozen=True)
class ModelParams:
    """Slow speed ``c`` and half observation time ``Z`` (fast speed is 1)."""

    c: float
    Z: float

    def __post_init__(self):
        if not (0.0 < self.c < 1.0):
            raise ValueError(f"slow speed must satisfy 0 < c < 1, got {self.c}")
        if not (self.Z > 0.0 and math.isfinite(self.Z)):
            raise ValueError(f"Z must be positive and finite, got {self.Z}")

    @property
    def Y(self) -> float:
        """Sensing depth reachable with data on ``[0, 2Z]``."""
        return 2.0 * self.c * self.Z / (1.0 + self.c)

    @property
    def eps_star(self) -> float:
        """Largest admissible weight of the slow right mover in the sideways energy."""
        c = self.c
        return c * (1.0 - c) ** 3 / (1.0 + c) ** 4


@dataclass(frozen=True)
class Grid:
    """Uniform grid with equal z- and t-step ``h = Z/N``.

    The forward triangle holds nodes ``i <= j <= 2N - i``; the sideways
    triangle holds ``i <= j <= top(i)`` with ``top(i) = floor(2N - i/c)``.
    """

    params: ModelParams
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @classmethod
    def create(cls, c: float, Z: float, N: int) -> "Grid":
        return cls(ModelParams(c, Z), N)

    @property
    def c(self) -> float:
        return self.params.c

    @property
    def Z(self) -> float:
        return self.params.Z

    @property
    def Y(self) -> float:
        return self.params.Y

    @property
    def h(self) -> float:
        return self.params.Z / self.N

    def z(self, i):
        return np.asarray(i) * self.h

    def in_forward(self, i: int, j: int) -> bool:
        return 0 <= i <= j <= 2 * self.N - i

    def level_extent(self, j: int) -> int:
        """Largest z index on forward t-level ``j``."""
        return min(j, 2 * self.N - j)

    def top(self, i):
        """Largest t index of sideways column ``i``."""
        return np.floor(2 * self.N - np.asarray(i) / self.c + SNAP).astype(int)

    @property
    def n_sense(self) -> int:
        """Index of the last column reachable by sideways marching (z close to Y)."""
        i = int(math.floor(self.Y / self.h + SNAP))
        while i > 0 and self.top(i) < i:
            i -= 1
        return i

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.params, self.N * factor)


# -------------------------------------------------------- interpolation

def interp_weights(x, lo, hi, order: int = 1):
    """Lagrange weights for sampling at fractional node positions.

    Parameters
    ----------
    x : array
        Positions in node-index units.
    lo, hi : int or array
        Inclusive range of usable node indices for each position.
    order : 1 or 3
        Linear or cubic; cubic drops to quadratic or linear where the range
        holds only three or two nodes.  Positions slightly past ``hi`` are
        extrapolated from the last stencil.

    Returns
    -------
    idx : int array, shape (n, order + 1)
    w : float array, same shape (unused slots carry weight 0)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo = np.broadcast_to(np.asarray(lo), x.shape).astype(int)
    hi = np.broadcast_to(np.asarray(hi), x.shape).astype(int)
    if order == 1:
        base = np.clip(np.floor(x + SNAP).astype(int), lo, np.maximum(hi - 1, lo))
        frac = x - base
        single = hi == lo
        frac = np.where(single, 0.0, frac)
        idx = np.stack([base, np.where(single, base, base + 1)], axis=1)
        w = np.stack([1.0 - frac, frac], axis=1)
        return idx, w
    if order != 3:
        raise ValueError("interpolation order must be 1 or 3")
    # cubic where four nodes are available, quadratic with three, else linear
    width = np.minimum(hi - lo, 3)
    npts = np.maximum(width, 0) + 1
    idx = np.empty((x.size, 4), dtype=int)
    w = np.zeros((x.size, 4))
    for p in (1, 2, 3, 4):
        sel = npts == p
        if not sel.any():
            continue
        xs = x[sel]
        base = np.clip(np.floor(xs + SNAP).astype(int) - (p - 1) // 2,
                       lo[sel], hi[sel] - (p - 1))
        nodes = base[:, None] + np.arange(p)[None, :]
        ws = np.ones((xs.size, p))
        for a in range(p):
            for b in range(p):
                if a != b:
                    ws[:, a] *= (xs - nodes[:, b]) / (a - b)
        idx[sel] = np.pad(nodes, ((0, 0), (0, 4 - p)), mode="edge")
        w[sel, :p] = ws
    return idx, w


# ---------------------------------------------------------------- profile

def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CoefficientProfile:
    """Twist ``beta`` sampled at ``z0 + k*h``."""

    z0: float
    h: float
    samples: np.ndarray
    source: Optional[str] = None
    expr: Optional[_expr.Expr] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(self.samples))
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("profile samples must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("profile samples must be finite")

    @classmethod
    def from_expression(cls, text: Union[str, _expr.Expr], z0: float, z1: float,
                        h: float) -> "CoefficientProfile":
        e = _expr.parse(text) if isinstance(text, str) else text
        z = z0 + h * np.arange(node_count(z0, z1, h))
        return cls(z0, h, _expr.evaluate(e, z),
                   source=text if isinstance(text, str) else None, expr=e)

    @classmethod
    def zeros(cls, z0: float, z1: float, h: float) -> "CoefficientProfile":
        return cls(z0, h, np.zeros(node_count(z0, z1, h)))

    @classmethod
    def on_grid(cls, text, grid: Grid, depth: Optional[float] = None):
        """Profile on ``[0, depth]`` (default ``[0, Z]``) at the grid spacing."""
        return cls.from_expression(text, 0.0, grid.Z if depth is None else depth, grid.h)

    @property
    def z1(self) -> float:
        return self.z0 + self.h * (self.samples.size - 1)

    @property
    def z(self) -> np.ndarray:
        return self.z0 + self.h * np.arange(self.samples.size)

    @property
    def first_index(self) -> int:
        """Grid index of the first sample (profiles live on the grid)."""
        return int(round(self.z0 / self.h))

    def __len__(self):
        return self.samples.size

    def at(self, z, order: int = 1):
        """Interpolate the samples at arbitrary ``z``."""
        x = (np.asarray(z, dtype=float) - self.z0) / self.h
        idx, w = interp_weights(np.ravel(x), 0, self.samples.size - 1, order)
        out = np.sum(self.samples[idx] * w, axis=1).reshape(np.shape(z))
        return float(out) if out.ndim == 0 else out

    def restrict(self, i_start: int, i_stop: int) -> "CoefficientProfile":
        """Sub-profile on grid indices ``i_start..i_stop`` (inclusive, absolute)."""
        a = i_start - self.first_index
        b = i_stop - self.first_index
        if a < 0 or b >= self.samples.size or b < a:
            raise DimensionMismatch(
                f"indices {i_start}..{i_stop} outside profile "
                f"{self.first_index}..{self.first_index + self.samples.size - 1}")
        return CoefficientProfile(self.z0 + a * self.h, self.h, self.samples[a:b + 1],
                                  self.source, self.expr)

    def with_samples(self, samples) -> "CoefficientProfile":
        return CoefficientProfile(self.z0, self.h, samples)

    def l2_norm(self) -> float:
        """Riemann-sum L2 norm ``sqrt(h * sum_{k>=1} beta_k^2)``."""
        return math.sqrt(self.h * float(np.sum(self.samples[1:] ** 2)))


def node_count(z0: float, z1: float, h: float) -> int:
    return int(round((z1 - z0) / h)) + 1


def l2_distance(a: CoefficientProfile, b: CoefficientProfile) -> float:
    if a.samples.shape != b.samples.shape:
        raise DimensionMismatch("profiles have different lengths")
    return math.sqrt(a.h * float(np.sum((a.samples[1:] - b.samples[1:]) ** 2)))


def validate_beta(profile: CoefficientProfile, slope_tol: Optional[float] = None) -> list[str]:
    """Check the admissibility conditions ``beta(0) = 0`` and ``beta'(0) = 0``.

    Only warns: initial guesses such as ``beta0(z) = z`` violate them on purpose.
    The slope test uses the one-sided difference ``(beta_1 - beta_0)/h`` against
    ``slope_tol`` (default ``10*h``).  Profiles not starting at ``z = 0`` are
    not checked.
    """
    if abs(profile.z0) > SNAP * profile.h:
        return []
    out = []
    if profile.samples[0] != 0.0:
        out.append(f"beta(0) != 0 (beta(0) = {profile.samples[0]:.6g})")
    if profile.samples.size > 1:
        tol = 10.0 * profile.h if slope_tol is None else slope_tol
        slope = (profile.samples[1] - profile.samples[0]) / profile.h
        if abs(slope) > tol:
            out.append(f"beta'(0) != 0 (one-sided slope {slope:.6g})")
    return out


# ------------------------------------------------------------------ fields

@dataclass(frozen=True)
class WaveField:
    """4-component values on a column-wise described subdomain.

    Column ``i`` (absolute grid index, ``i0 <= i < i0 + ncols``) holds t indices
    ``lo[i - i0] .. hi[i - i0]``.  ``values[k, j, :]`` is the state at node
    ``(i0 + k, j)``; entries outside the subdomain are zero and masked out.
    """

    h: float
    i0: int
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray
    kind: str = "D"

    def __post_init__(self):
        lo = np.array(self.lo, dtype=int)
        hi = np.array(self.hi, dtype=int)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[2] != 4 or vals.shape[0] != lo.size:
            raise DimensionMismatch("values must have shape (ncols, nt, 4)")
        for a in (lo, hi, vals):
            a.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "values", vals)

    @property
    def ncols(self) -> int:
        return self.lo.size

    @property
    def columns(self) -> np.ndarray:
        return self.i0 + np.arange(self.ncols)

    @property
    def mask(self) -> np.ndarray:
        j = np.arange(self.values.shape[1])[None, :]
        return (j >= self.lo[:, None]) & (j <= self.hi[:, None])

    def column(self, i: int):
        """Return ``(j, values)`` of column ``i``."""
        k = i - self.i0
        j = np.arange(self.lo[k], self.hi[k] + 1)
        return j, self.values[k, self.lo[k]:self.hi[k] + 1]

    def at(self, i: int, j: int) -> np.ndarray:
        k = i - self.i0
        if not (0 <= k < self.ncols and self.lo[k] <= j <= self.hi[k]):
            raise IndexError(f"node ({i}, {j}) outside field")
        return self.values[k, j]

    def level(self, j: int):
        """Return ``(i, values)`` of all nodes on t-level ``j``."""
        sel = (self.lo <= j) & (j <= self.hi)
        return self.columns[sel], self.values[sel, j]

    def diagonal(self):
        """``(i, values)`` at the nodes ``(i, i)`` that belong to the field."""
        cols = self.columns
        sel = self.lo == cols
        return cols[sel], self.values[np.nonzero(sel)[0], cols[sel]]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values[self.mask])))

    def max_abs(self) -> float:
        m = self.mask
        return float(np.max(np.abs(self.values[m]))) if m.any() else 0.0

    def common_max_abs_diff(self, other: "WaveField") -> float:
        """Max |difference| over nodes present in both fields (same grid)."""
        if abs(self.h - other.h) > SNAP * self.h:
            raise DimensionMismatch("fields live on different grids")
        a0 = max(self.i0, other.i0)
        a1 = min(self.i0 + self.ncols, other.i0 + other.ncols)
        best = 0.0
        for i in range(a0, a1):
            ka, kb = i - self.i0, i - other.i0
            lo = max(self.lo[ka], other.lo[kb])
            hi = min(self.hi[ka], other.hi[kb])
            if hi >= lo:
                d = self.values[ka, lo:hi + 1] - other.values[kb, lo:hi + 1]
                best = max(best, float(np.max(np.abs(d))))
        return best

    def restrict_to(self, factor: int) -> "WaveField":
        """Subsample a field computed on a grid ``factor`` times finer."""
        if self.i0 % factor:
            raise DimensionMismatch("first column not on the coarse grid")
        keep = np.arange(0, self.ncols, factor)
        keep = keep[(self.i0 + keep) % factor == 0]
        lo = -(-self.lo[keep] // factor)
        hi = self.hi[keep] // factor
        vals = self.values[keep][:, ::factor]
        return WaveField(self.h * factor, self.i0 // factor, lo, hi, vals, self.kind)


@dataclass(frozen=True)
class BoundaryTrace:
    """Reflection data ``(m1(0,t), m3(0,t))`` at ``t = j*h``, ``j = 0..2N``."""

    h: float
    m1: np.ndarray
    m3: np.ndarray

    def __post_init__(self):
        m1, m3 = _readonly(self.m1), _readonly(self.m3)
        if m1.shape != m3.shape or m1.ndim != 1 or m1.size % 2 != 1:
            raise DimensionMismatch("trace arrays must be 1-d with odd equal length 2N+1")
        if not (np.all(np.isfinite(m1)) and np.all(np.isfinite(m3))):
            raise ValueError("trace values must be finite")
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m3", m3)

    @property
    def N(self) -> int:
        return (self.m1.size - 1) // 2

    @property
    def t(self) -> np.ndarray:
        return self.h * np.arange(self.m1.size)

    def restrict(self, factor: int) -> "BoundaryTrace":
        return BoundaryTrace(self.h * factor, self.m1[::factor], self.m3[::factor])

    def check_grid(self, grid: Grid) -> None:
        if self.m1.size != 2 * grid.N + 1:
            raise DimensionMismatch(
                f"trace has {self.m1.size} samples, grid needs {2 * grid.N + 1}")
        if abs(self.h - grid.h) > 1e-12 * grid.h:
            raise DimensionMismatch("trace spacing differs from grid step")
