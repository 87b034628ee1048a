"""Twist reconstruction from reflection data by fixed-point iteration.

``Q(beta)(z) = 2(c+1)/(c-1) * h3(z, z)`` where ``h`` solves the sideways
problem with the guess ``beta``; the true twist is the fixed point.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import EmptySupport, NoConvergence, NonFiniteField
from .model import (BoundaryTrace, CoefficientProfile, Grid, ModelParams,
                    diagonal_coefficients, l2_distance)
from .sideways import SidewaysData, advance_data, solve_sideways

log = logging.getLogger(__name__)

MODES = ("global", "stepped")

# relative size below which an exact profile sample is treated as a root
ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class SegmentConstants:
    J_X: float
    K_X: float
    delta: float
    lam: float
    sigma: float
    delta_star: float


@dataclass
class ReconstructionReport:
    beta_app: CoefficientProfile
    iterations: list[int]
    history: list[list[float]]
    mode: str
    converged: bool = True
    E2: Optional[float] = None
    Einf: Optional[float] = None
    segments: list[tuple[int, int]] = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))


def q_scale(c: float) -> float:
    """``2(c+1)/(c-1)``, the inverse of the diagonal factor ``k3``."""
    return 1.0 / diagonal_coefficients(c)[0]


def q_map(beta_guess: CoefficientProfile, data: SidewaysData, grid: Grid,
          interpolation: str = "linear") -> CoefficientProfile:
    """One application of Q on the segment covered by ``beta_guess``."""
    sol = solve_sideways(grid, beta_guess, data, interpolation)
    _, diag = sol.diagonal()
    return beta_guess.with_samples(q_scale(grid.c) * diag[:, 2])


def _clip(beta: CoefficientProfile, radius_sq: Optional[float]) -> CoefficientProfile:
    if radius_sq is None:
        return beta
    n2 = beta.l2_norm() ** 2
    if n2 <= radius_sq or n2 == 0.0:
        return beta
    return beta.with_samples(beta.samples * math.sqrt(radius_sq / n2))


def fixed_point(beta0: CoefficientProfile, data: SidewaysData, grid: Grid,
                tol: float = 1e-8, max_iter: int = 100, ball: Optional[float] = None,
                interpolation: str = "linear"):
    """Iterate ``beta <- Q(beta)`` from ``beta0``.

    Stops when ``||beta_new - beta|| <= tol * max(1, ||beta||)`` (discrete L2 on
    the segment).  With ``ball`` set, each iterate is scaled back radially into
    ``||beta||^2 <= ball``.

    Returns ``(beta, history)`` where ``history[n]`` is the n-th successive
    distance; ``len(history)`` is the number of Q applications.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = _clip(beta0, ball)
    history: list[float] = []
    for n in range(max_iter):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                new = _clip(q_map(beta, data, grid, interpolation), ball)
                d = l2_distance(new, beta)
        except (NonFiniteField, ValueError) as exc:
            # ValueError: a profile refused non-finite samples
            raise NoConvergence(f"iterates diverged at iteration {n + 1}: {exc}",
                                iterations=n + 1, residual=math.inf,
                                history=history + [math.inf], partial=beta) from exc
        history.append(d)
        if not math.isfinite(d):
            raise NoConvergence(f"iterates diverged at iteration {n + 1}",
                                iterations=n + 1, residual=d, history=history, partial=beta)
        done = d <= tol * max(1.0, beta.l2_norm())
        beta = new
        if done:
            return beta, history
    raise NoConvergence(
        f"fixed point not reached in {max_iter} iterations (last step {history[-1]:.3e})",
        iterations=max_iter, residual=history[-1], history=history, partial=beta)


def segment_constants(data: SidewaysData, K: float, params: ModelParams,
                      eps: Optional[float] = None) -> SegmentConstants:
    """Energy of the segment data and the admissible step it allows."""
    if K < 0:
        raise ValueError("K must be non-negative")
    c = params.c
    eps = params.eps_star if eps is None else eps
    a = data.a
    integrand = a[:, 0] ** 2 + a[:, 1] ** 2 + c * a[:, 2] ** 2 + c * eps * a[:, 3] ** 2
    J = float(np.trapezoid(integrand, dx=data.h)) if a.shape[0] > 1 else 0.0
    K_X = 8.0 * (1 + c) ** 2 / (1 - c) ** 2 * J
    room = max(params.Y - data.X, 0.0)
    if J == 0.0:
        delta, lam = room, math.inf
    else:
        delta = min(room, c * c * eps * eps / (256.0 * K_X))
        lam = (c * eps * (1 - c) ** 2 / (64.0 * (1 + c) ** 2 * J)
               * math.exp(-4.0 * math.sqrt(K_X * delta) / (c * eps)))
    expo = -4.0 * math.sqrt(K * params.Y) / (c * eps)
    delta_star = c * c * (1 - c) ** 2 * eps * eps / (2048.0 * (1 + c) ** 2) * math.exp(expo)
    return SegmentConstants(J, K_X, delta, lam, 0.5, delta_star)


def _initial(beta0: Union[str, CoefficientProfile], grid: Grid, i0: int, i1: int):
    if isinstance(beta0, CoefficientProfile):
        return beta0.restrict(i0, i1)
    return CoefficientProfile.from_expression(beta0, i0 * grid.h, i1 * grid.h, grid.h)


def reconstruct(trace: BoundaryTrace, grid: Grid, K: Optional[float] = None,
                mode: str = "global", tol: float = 1e-8, max_iter: int = 100,
                beta0: Union[str, CoefficientProfile] = "z",
                beta_exact: Optional[CoefficientProfile] = None,
                interpolation: str = "linear") -> ReconstructionReport:
    """Recover ``beta`` on ``[0, Y]`` from ``(m1(0,t), m3(0,t))``.

    ``mode="global"`` iterates Q once over the whole depth range.
    ``mode="stepped"`` advances segment by segment with the step allowed by
    the data energy (never below one grid step) and keeps iterates inside the
    ball ``||beta||^2 <= K_X``; ``K`` is then the a priori bound on
    ``||beta||^2`` and is used for the reported global step.

    Raises :class:`NoConvergence` whose ``partial`` is the report so far.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    trace.check_grid(grid)
    data = SidewaysData.from_trace(trace)
    n = grid.n_sense

    if mode == "global":
        b0 = _initial(beta0, grid, 0, n)
        try:
            beta, hist = fixed_point(b0, data, grid, tol, max_iter, None, interpolation)
        except NoConvergence as exc:
            rep = ReconstructionReport(exc.partial, [exc.iterations], [exc.history],
                                       mode, converged=False, segments=[(0, n)])
            _attach_errors(rep, beta_exact, grid)
            exc.partial = rep
            raise
        rep = ReconstructionReport(beta, [len(hist)], [hist], mode, segments=[(0, n)])
        return _attach_errors(rep, beta_exact, grid)

    if K is None or K < 0:
        raise ValueError("stepped mode needs an a priori bound K >= 0")
    samples = np.zeros(n + 1)
    iters, hists, segs = [], [], []
    i0 = 0
    while i0 < n:
        sc = segment_constants(data, K, grid.params)
        steps = max(1, int(math.floor(sc.delta / grid.h + 1e-9)))
        i1 = min(i0 + steps, n)
        b0 = _initial(beta0, grid, i0, i1)
        ball = sc.K_X
        try:
            beta, hist = fixed_point(b0, data, grid, tol, max_iter, ball, interpolation)
        except NoConvergence as exc:
            samples[i0:i1 + 1] = exc.partial.samples
            rep = ReconstructionReport(CoefficientProfile(0.0, grid.h, samples[:i1 + 1]),
                                       iters + [exc.iterations], hists + [exc.history],
                                       mode, converged=False, segments=segs + [(i0, i1)])
            exc.partial = rep
            raise
        samples[i0 + (1 if i0 else 0):i1 + 1] = beta.samples[(1 if i0 else 0):]
        iters.append(len(hist))
        hists.append(hist)
        segs.append((i0, i1))
        log.debug("segment %d..%d: %d iterations, delta=%.3g", i0, i1, len(hist), sc.delta)
        data = advance_data(solve_sideways(grid, beta, data, interpolation))
        i0 = i1
    rep = ReconstructionReport(CoefficientProfile(0.0, grid.h, samples), iters, hists,
                               mode, segments=segs)
    return _attach_errors(rep, beta_exact, grid)


def _attach_errors(rep: ReconstructionReport, beta_exact, grid: Grid):
    if beta_exact is None:
        return rep
    n = len(rep.beta_app) - 1
    exact = beta_exact.restrict(0, n) if len(beta_exact) != n + 1 else beta_exact
    rep.E2, rep.Einf = error_metrics(exact, rep.beta_app, grid)
    return rep


def error_metrics(beta_exact: CoefficientProfile, beta_app: CoefficientProfile,
                  grid: Optional[Grid] = None, zero_rtol: float = ZERO_RTOL) -> tuple[float, float]:
    """``E2 = sqrt(h * sum_{i>=1} (beta - beta_app)^2)`` and the relative max error
    ``Einf = max over beta(z_i) != 0 of |beta - beta_app| / |beta|``.

    Samples with ``|beta| <= zero_rtol * max|beta|`` count as zeros: an exact
    root such as ``cos(5*pi/2)`` evaluates to ~1e-16, not 0.
    """
    if beta_exact.samples.shape != beta_app.samples.shape:
        raise ValueError("profiles must share their nodes")
    h = grid.h if grid is not None else beta_exact.h
    diff = beta_exact.samples - beta_app.samples
    E2 = math.sqrt(h * float(np.sum(diff[1:] ** 2)))
    scale = float(np.max(np.abs(beta_exact.samples)))
    nz = np.abs(beta_exact.samples) > zero_rtol * scale
    if not nz.any():
        raise EmptySupport("beta vanishes at every node; relative error undefined")
    Einf = float(np.max(np.abs(diff[nz] / beta_exact.samples[nz])))
    return E2, Einf
