import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fibertwist.expr import (BinOp, Call, DomainError, ExprError, ExprSyntaxError, Neg, Num,
                             UnknownFunction, UnknownVariable, Var, evaluate, parse,
                             register_function)

from conftest import EX1


def test_parse_examples():
    e = parse(EX1)
    assert isinstance(e, BinOp)
    assert parse("z") == Var()
    assert isinstance(parse("z*sin(100*z)*exp(3*z)"), BinOp)


def test_eval_examples():
    assert evaluate(parse(EX1), 0.0) == 0.0
    assert evaluate(parse("z"), 0.5) == 0.5
    # independent reference: 3*cos(10)*ln 2 from the math module
    ref = 3 * math.cos(10.0) * math.log(2.0)
    assert ref == pytest.approx(-1.7448001940023954, rel=1e-15)
    assert evaluate(parse(EX1), 1.0) == pytest.approx(ref, rel=1e-14)


def test_precedence():
    assert evaluate(parse("2+3*4"), 0.0) == 14
    assert evaluate(parse("2^3^2"), 0.0) == 512
    # unary minus sits below '^' in the grammar: (-2)^2
    assert evaluate(parse("-2^2"), 0.0) == 4
    assert evaluate(parse("-(2^2)"), 0.0) == -4
    assert evaluate(parse("(1-2)-3"), 0.0) == -4
    assert evaluate(parse("1-2-3"), 0.0) == -4
    assert evaluate(parse("8/4/2"), 0.0) == 1
    assert evaluate(parse(" 2 *\tz "), 3.0) == 6


@pytest.mark.parametrize("text,offset", [("", 0), ("z+", 2), ("(z", 2), ("z)", 1), ("3 $ z", 2),
                                         ("sin(z", 5), ("2**3", 2)])
def test_syntax_errors(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text)
    assert info.value.offset == offset


def test_name_errors():
    with pytest.raises(UnknownFunction):
        parse("tan(z)")
    with pytest.raises(UnknownVariable):
        parse("x+1")
    with pytest.raises(UnknownVariable):
        parse("pi")
    with pytest.raises(UnknownVariable):
        parse("sin z")


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse("log(z)"), 0.0)
    with pytest.raises(DomainError):
        evaluate(parse("1/z"), 0.0)
    with pytest.raises(DomainError):
        evaluate(parse("z^0.5"), np.array([1.0, -1.0]))
    assert evaluate(parse("z^0.5"), 4.0) == pytest.approx(2.0)
    assert evaluate(parse("z^2"), -3.0) == 9.0


def test_array_evaluation():
    z = np.linspace(0, 1, 7)
    np.testing.assert_allclose(evaluate(parse("3+0*z"), z), np.full(7, 3.0))
    np.testing.assert_allclose(evaluate(parse("exp(-z)"), z), np.exp(-z))


def test_register_function():
    register_function("sq", np.square)
    assert evaluate(parse("sq(z+1)"), 2.0) == 9.0
    with pytest.raises(ValueError):
        register_function("z", np.abs)


# ten expressions, each as text, as a hand-built tree and as a numpy lambda
Z = Var()
BATTERY = [
    ("z", Z, lambda z: z),
    ("2.5", Num(2.5), lambda z: 2.5 + 0 * z),
    ("-z+1", BinOp("+", Neg(Z), Num(1.0)), lambda z: 1 - z),
    ("z^2*3", BinOp("*", BinOp("^", Z, Num(2.0)), Num(3.0)), lambda z: 3 * z ** 2),
    ("sin(z)/(1+z)", BinOp("/", Call("sin", Z), BinOp("+", Num(1.0), Z)), lambda z: np.sin(z) / (1 + z)),
    ("exp(-(z^2))", Call("exp", Neg(BinOp("^", Z, Num(2.0)))), lambda z: np.exp(-z ** 2)),
    ("log(z+1)*cos(10*z)", BinOp("*", Call("log", BinOp("+", Z, Num(1.0))), Call("cos", BinOp("*", Num(10.0), Z))),
     lambda z: np.log(z + 1) * np.cos(10 * z)),
    ("z-z-z", BinOp("-", BinOp("-", Z, Z), Z), lambda z: -z),
    ("2^z^2", BinOp("^", Num(2.0), BinOp("^", Z, Num(2.0))), lambda z: 2.0 ** (z ** 2)),
    ("9*z^2*cos(100*z)*log(z+1)",
     BinOp("*", BinOp("*", BinOp("*", Num(9.0), BinOp("^", Z, Num(2.0))), Call("cos", BinOp("*", Num(100.0), Z))),
           Call("log", BinOp("+", Z, Num(1.0)))),
     lambda z: 9 * z ** 2 * np.cos(100 * z) * np.log(z + 1)),
]


@pytest.mark.parametrize("text,tree,ref", BATTERY, ids=[b[0] for b in BATTERY])
def test_round_trip_battery(text, tree, ref):
    z = np.linspace(0.0, 2.0, 100)
    assert parse(text) == tree
    got = evaluate(parse(text), z)
    np.testing.assert_allclose(got, evaluate(tree, z), rtol=1e-12, atol=0)
    np.testing.assert_allclose(got, ref(z), rtol=1e-12, atol=1e-14)


@given(st.text(alphabet="z0123456789.+-*/^() sincoxplg", max_size=30))
def test_parse_never_panics(text):
    try:
        parse(text)
    except ExprError:
        pass


def _trees(depth):
    leaf = st.one_of(st.just(("z", lambda z: z)),
                     st.integers(0, 9).map(lambda k: (str(k), lambda z, k=k: k + 0 * z)))
    if depth == 0:
        return leaf

    def combine(a, b, op):
        fa, fb = a[1], b[1]
        fns = {"+": lambda z: fa(z) + fb(z), "-": lambda z: fa(z) - fb(z),
               "*": lambda z: fa(z) * fb(z)}
        return (f"({a[0]}{op}{b[0]})", fns[op])

    sub = _trees(depth - 1)
    return st.one_of(leaf,
                     st.builds(combine, sub, sub, st.sampled_from("+-*")),
                     sub.map(lambda a: (f"sin({a[0]})", lambda z, f=a[1]: np.sin(f(z)))),
                     sub.map(lambda a: (f"-{a[0]}", lambda z, f=a[1]: -f(z))))


@given(_trees(3), st.floats(-2, 2))
def test_generated_expressions_match(tree, z):
    text, fn = tree
    assert evaluate(parse(text), z) == pytest.approx(fn(z), rel=1e-12, abs=1e-12)
