import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fibertwist.diagnostics import boundary_energy_balance, check_linearization
from fibertwist.errors import DimensionMismatch, NonFiniteField
from fibertwist.forward import (extract_traces, generate_data, picard_forward, profile_on,
                                solve_forward)
from fibertwist.model import CoefficientProfile, char_boundary_values, diagonal_ratio

from conftest import EX1, EX2, make_grid

# oracle gap over h for Example 1, frozen from the calibrated N = 2^5 and 2^6 runs
# (2.919/h and 1.777/h, i.e. 59.5 and 72.4)
C_EX1_ORACLE = 75.0


def _solve(expr, N, **kw):
    g = make_grid(N)
    return g, solve_forward(g, CoefficientProfile.on_grid(expr, g), **kw)


@pytest.mark.parametrize("interpolation", ["linear", "cubic"])
def test_zero_twist_gives_bitwise_zero(interpolation):
    g = make_grid(16)
    sol = solve_forward(g, CoefficientProfile.zeros(0, g.Z, g.h), interpolation)
    v = sol.field.values
    assert not v.any() and not np.signbit(v).any()
    assert not sol.trace.m1.any() and not sol.trace.m3.any()


def test_boundary_rows_are_exact():
    g, sol = _solve(EX1, 32)
    f = sol.field
    j, col = f.column(0)
    assert np.array_equal(sol.trace.m1, col[:, 0])
    assert np.array_equal(sol.trace.m3, col[:, 2])
    assert not col[:, 1].any() and not col[:, 3].any()
    i, dv = f.diagonal()
    beta = CoefficientProfile.on_grid(EX1, g).samples
    m1, m3, m4 = char_boundary_values(beta[i], g.c)
    assert np.array_equal(dv[:, 0], m1)
    assert np.array_equal(dv[:, 2], m3)
    assert np.array_equal(dv[:, 3], m4)
    np.testing.assert_allclose(dv[:, 2], diagonal_ratio(g.c) * dv[:, 3], rtol=1e-14, atol=1e-300)


@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from(["linear", "cubic"]))
def test_boundary_rows_any_polynomial(a, b, interpolation):
    g = make_grid(8)
    beta = CoefficientProfile.from_expression(f"({a!r})*z^2+({b!r})*z^3", 0, g.Z, g.h)
    f = solve_forward(g, beta, interpolation).field
    _, col = f.column(0)
    assert not col[:, 1].any() and not col[:, 3].any()
    i, dv = f.diagonal()
    _, m3, m4 = char_boundary_values(beta.samples[i], g.c)
    assert np.array_equal(dv[:, 2], m3) and np.array_equal(dv[:, 3], m4)


def test_first_trace_sample():
    g = make_grid(16)
    sol = solve_forward(g, CoefficientProfile.on_grid("1+z", g))
    tr = extract_traces(sol)
    assert tr.m1[0] == 0.0
    assert tr.m3[0] == pytest.approx((g.c - 1) / (2 * (g.c + 1)))
    assert len(tr.m1) == 2 * g.N + 1
    assert solve_forward(g, CoefficientProfile.on_grid(EX1, g)).trace.m3[0] == 0.0


def test_deterministic():
    _, a = _solve(EX1, 32)
    _, b = _solve(EX1, 32)
    assert a.field.values.tobytes() == b.field.values.tobytes()


def test_errors():
    g = make_grid(8)
    with pytest.raises(DimensionMismatch):
        solve_forward(g, CoefficientProfile.on_grid("z", make_grid(16)))
    with pytest.raises(DimensionMismatch):
        solve_forward(g, CoefficientProfile.from_expression("z", 0, g.Z / 2, g.h))
    with pytest.raises(NonFiniteField):
        solve_forward(g, CoefficientProfile.on_grid("1e200*z", g))
    with pytest.raises(ValueError):
        solve_forward(g, CoefficientProfile.on_grid("z", g), interpolation="spline")


def test_linearization_at_fine_grid():
    # m3(0,t) against -(1/6) eta phi(t/3): halving eta cuts the remainder at
    # least 4x (measured 8x, the eta^2 term of m3 vanishes); m1 is exactly O(eta^2)
    rep = check_linearization("z^2", make_grid(512), [1e-4, 5e-5])
    assert rep.slope is not None and rep.slope >= 1.8
    assert rep.deviation[0] / rep.deviation[1] >= 3.6
    assert rep.m1_max[0] / rep.m1_max[1] == pytest.approx(4.0, rel=1e-3)


def test_oracle_agreement_example1():
    d = []
    for N in (32, 64):
        g, sol = _solve(EX1, N)
        d.append(sol.field.common_max_abs_diff(picard_forward(g, CoefficientProfile.on_grid(EX1, g))))
        assert d[-1] <= C_EX1_ORACLE * g.h
    assert 1.5 <= d[0] / d[1] <= 2.5


def test_picard_zero_in_one_iteration():
    g = make_grid(8)
    r = picard_forward(g, CoefficientProfile.zeros(0, g.Z, g.h), full_output=True)
    assert r.iterations == 1 and not r.field.values.any()


def test_picard_example2_iterations():
    g = make_grid(32)
    r = picard_forward(g, CoefficientProfile.on_grid(EX2, g), tol=1e-12, full_output=True)
    assert r.iterations == 13  # regression baseline
    assert r.residual <= 1e-12


def test_picard_refinement_example2():
    # sin(100 z) is under-resolved at N = 16; the probe starts one level up
    fields = {}
    for N in (32, 64, 128):
        g = make_grid(N)
        fields[N] = picard_forward(g, CoefficientProfile.on_grid(EX2, g))
    d1 = fields[64].restrict_to(2).common_max_abs_diff(fields[32])
    d2 = fields[128].restrict_to(2).common_max_abs_diff(fields[64])
    assert d2 * 1.5 <= d1


@pytest.mark.parametrize("expr", ["z^2", "z^2*exp(-z)", EX1])
def test_energy_balance_shrinks(expr):
    rel = []
    for N in (64, 128, 256):
        g, sol = _solve(expr, N, interpolation="cubic")
        rel.append(boundary_energy_balance(sol.field, g.c).relative)
    assert rel[1] * 1.5 <= rel[0] and rel[2] * 1.5 <= rel[1]


def test_energy_balance_diagonal_closed_form():
    # on t = z the flux density is (1+3c^2)/(2(1-c^2)) beta^2
    g, sol = _solve(EX1, 128)
    beta = CoefficientProfile.on_grid(EX1, g).samples
    c = g.c
    expect = (1 + 3 * c * c) / (2 * (1 - c * c)) * np.trapezoid(beta ** 2, dx=g.h)
    assert boundary_energy_balance(sol.field, c).diagonal == pytest.approx(expect, rel=1e-12)


def test_generate_data_refines():
    g = make_grid(16)
    tr = generate_data(g, EX1)
    fine = solve_forward(g.refined(2), CoefficientProfile.on_grid(EX1, g.refined(2))).trace
    assert np.array_equal(tr.m3, fine.m3[::2])
    assert tr.h == g.h
    same = generate_data(g, EX1, refine=False)
    assert np.array_equal(same.m3, solve_forward(g, CoefficientProfile.on_grid(EX1, g)).trace.m3)


def test_profile_on_resamples_arrays():
    g = make_grid(16)
    raw = CoefficientProfile(0.0, g.h / 2, np.linspace(0, 1, 33))
    p = profile_on(g, raw)
    np.testing.assert_allclose(p.samples, np.linspace(0, 1, 17), atol=1e-14)
