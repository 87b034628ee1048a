import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fibertwist.errors import DimensionMismatch, GeometryError
from fibertwist.forward import solve_forward
from fibertwist.model import CoefficientProfile, diagonal_ratio
from fibertwist.sideways import (SidewaysData, advance_data, check_matching, picard_sideways,
                                 solve_sideways)

from conftest import EX1, make_grid

# constants over h, frozen from the calibrated N = 2^5 and 2^6 runs
C_SIDE_VS_FORWARD = 35.0     # measured 27.2, 29.1
C_MATCHING = 0.05            # measured 0.024, 0.013 (r1 is in fact O(h^2))
C_ADVANCE = 1.0              # measured 0.56, 0.38


def _forward_setup(N, expr=EX1, c=0.5):
    g = make_grid(N, c=c)
    beta = CoefficientProfile.on_grid(expr, g)
    sol = solve_forward(g, beta)
    return g, beta, sol, SidewaysData.from_trace(sol.trace)


def _zero_data(g):
    return SidewaysData(0, g.h, np.zeros((2 * g.N + 1, 4)))


def test_zero_data_zero_field():
    g = make_grid(16)
    beta = CoefficientProfile.on_grid(EX1, g).restrict(0, g.n_sense)
    f = solve_sideways(g, beta, _zero_data(g))
    assert not f.values.any() and not np.signbit(f.values).any()
    r = picard_sideways(g, beta, _zero_data(g), full_output=True)
    assert r.iterations == 1 and not r.field.values.any()
    assert not advance_data(f).a.any()


def test_diagonal_closure_exact():
    g, beta, _, data = _forward_setup(32)
    f = solve_sideways(g, beta.restrict(0, g.n_sense), data)
    _, dv = f.diagonal()
    assert diagonal_ratio(0.5) == pytest.approx(1 / 9, rel=1e-15)
    np.testing.assert_allclose(dv[1:, 2], dv[1:, 3] / 9, rtol=0, atol=1e-12 * np.abs(dv).max())


def test_matches_forward_field():
    g, beta, sol, data = _forward_setup(64)
    f = solve_sideways(g, beta.restrict(0, g.n_sense), data)
    assert f.common_max_abs_diff(sol.field) <= C_SIDE_VS_FORWARD * g.h


def test_advance_reproduces_forward_column():
    g, beta, sol, data = _forward_setup(64)
    nxt = advance_data(solve_sideways(g, beta.restrict(0, 5), data))
    assert nxt.i0 == 5 and nxt.X == pytest.approx(5 * g.h)
    _, col = sol.field.column(5)
    n = min(len(col), nxt.a.shape[0])
    assert np.max(np.abs(nxt.a[:n] - col[:n])) <= C_ADVANCE * g.h


def test_advance_zero_length_is_identity():
    g, beta, _, data = _forward_setup(32)
    one = solve_sideways(g, beta.restrict(0, 0), data)
    assert one.ncols == 1
    again = advance_data(one)
    assert np.array_equal(again.a, data.a[:again.a.shape[0]])


def test_free_transport_of_h3():
    # beta = 0, a = (0, 0, g, 0): h3 is carried along dt/dz = -1/c
    g = make_grid(128)
    t = g.h * np.arange(2 * g.N + 1)
    a = np.zeros((t.size, 4))
    a[:, 2] = np.sin(t)
    f = solve_sideways(g, CoefficientProfile.zeros(0, g.n_sense * g.h, g.h), SidewaysData(0, g.h, a))
    err = 0.0
    for i in range(1, g.n_sense + 1, 7):
        j, vals = f.column(i)
        z, tt = i * g.h, j * g.h
        ok = tt + z / g.c <= 2 * g.Z
        err = max(err, np.max(np.abs(vals[ok, 2] - np.sin(tt[ok] + z / g.c))))
    assert err <= 2 * g.h ** 2


@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)),
       arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
def test_linear_in_data(p, q):
    g = make_grid(16)
    t = g.h * np.arange(2 * g.N + 1)
    basis = np.stack([np.ones_like(t), t, t * t])

    def data(coef):
        return SidewaysData(0, g.h, (coef.T @ basis).T)

    beta = CoefficientProfile.on_grid(EX1, g).restrict(0, g.n_sense)
    fa = solve_sideways(g, beta, data(p)).values
    fb = solve_sideways(g, beta, data(q)).values
    fab = solve_sideways(g, beta, data(p + q)).values
    scale = 1 + np.abs(fa).max() + np.abs(fb).max()
    np.testing.assert_allclose(fab, fa + fb, atol=1e-12 * scale, rtol=0)


def test_picard_agrees_at_half():
    # at c = 1/2 every foot is a grid node, so both schemes coincide to round-off
    g, beta, _, data = _forward_setup(32)
    bs = beta.restrict(0, g.n_sense)
    f = solve_sideways(g, bs, data)
    d = f.common_max_abs_diff(picard_sideways(g, bs, data))
    assert d <= 1e-12 * f.max_abs()


def test_picard_refinement_generic_speed():
    d = []
    for N in (32, 64):
        g, beta, _, data = _forward_setup(N, "z^2*exp(-z)", c=0.6)
        bs = beta.restrict(0, g.n_sense)
        d.append(solve_sideways(g, bs, data).common_max_abs_diff(picard_sideways(g, bs, data)))
    assert d[1] * 1.5 <= d[0]


def test_matching_examples():
    g = make_grid(16)
    rep = check_matching(_zero_data(g), 3.0, 0.5, 1e-12)
    assert rep.r0 == 0 and rep.r1 == 0 and rep.passed
    a = np.zeros((5, 4))
    a[:, 2] = 1.0
    rep = check_matching(SidewaysData(0, 0.1, a), 0.0, 0.5, 1e-6)
    assert rep.r0 == pytest.approx(2.25) and not rep.passed


@pytest.mark.parametrize("N", [32, 64])
def test_matching_forward_data(N):
    g, beta, _, data = _forward_setup(N)
    assert check_matching(data, float(beta.samples[0]), g.c, C_MATCHING * g.h).passed


def test_matching_after_advance():
    g, beta, _, data = _forward_setup(64)
    nxt = advance_data(solve_sideways(g, beta.restrict(0, 8), data))
    assert check_matching(nxt, float(beta.samples[8]), g.c, 2 * C_MATCHING * g.h).passed


def test_geometry_errors():
    g, beta, _, data = _forward_setup(16)
    short = SidewaysData(0, g.h, data.a[:10])
    with pytest.raises(GeometryError):
        solve_sideways(g, beta.restrict(0, 3), short)
    with pytest.raises(GeometryError):
        solve_sideways(g, beta, data)  # beta reaches past the sensing depth
    with pytest.raises(DimensionMismatch):
        solve_sideways(g, beta.restrict(1, 3), data)
    with pytest.raises(ValueError):
        SidewaysData(0, g.h, np.full((5, 4), np.nan))
