import math

import pytest
from hypothesis import given, strategies as st

from natstar import expr as ex
from natstar.jets import Jet, defect

VARS = ["x", "y"]


@pytest.mark.parametrize(
    "text,point,expected",
    [
        ("x + y*2", (1.0, 3.0), 7.0),
        ("-x^2", (3.0, 0.0), -9.0),
        ("2^-1", (0.0, 0.0), 0.5),
        ("2^3^2", (0.0, 0.0), 512.0),
        ("x/y/2", (8.0, 2.0), 2.0),
        ("sin(pi/2) + cos(0)", (0.0, 0.0), 2.0),
        ("sqrt(x) * ln(exp(y))", (4.0, 1.5), 3.0),
        ("tan(x)", (0.3, 0.0), math.tan(0.3)),
        ("x^0.5", (9.0, 0.0), 3.0),
        ("1e-3 * x", (2.0, 0.0), 2e-3),
    ],
)
def test_point_evaluation(text, point, expected):
    e = ex.parse(text, VARS)
    assert math.isclose(ex.eval_point(e, point), expected, rel_tol=1e-14)
    assert math.isclose(ex.eval_jet(e, point, 3).value, expected, rel_tol=1e-14)


@pytest.mark.parametrize(
    "text,cls,start",
    [
        ("x +", ex.ParseError, 3),
        ("(x + y", ex.UnbalancedParens, 0),
        ("x + y)", ex.UnbalancedParens, 5),
        ("foo(x)", ex.UnknownIdentifier, 0),
        ("x + z", ex.UnknownIdentifier, 4),
        ("sin()", ex.ArityError, 0),
        ("sin(x, y)", ex.ArityError, 5),
        ("sin x", ex.ArityError, 0),
        ("2x", ex.ParseError, 1),
        ("x $ y", ex.LexError, 2),
        ("", ex.ParseError, 0),
    ],
)
def test_errors_carry_spans(text, cls, start):
    with pytest.raises(cls) as info:
        ex.parse(text, VARS)
    assert info.value.span.start == start
    assert "^" in str(info.value)


def test_domain_error_points_at_subexpression():
    text = "x + ln(y)"
    e = ex.parse(text, VARS)
    with pytest.raises(ex.ExprDomainError) as info:
        ex.eval_jet(e, (1.0, -1.0), 2, text)
    assert text[info.value.span.start : info.value.span.end] == "ln(y)"


def test_reserved_variable_names():
    with pytest.raises(ValueError):
        ex.parse("sin", ["sin"])


def test_jet_derivatives_against_finite_differences():
    text = "sin(x) * y^2 + exp(x*y)"
    e = ex.parse(text, VARS)
    p = (0.4, 0.9)
    j = ex.eval_jet(e, p, 4)
    h = 1e-5
    f = lambda u, v: ex.eval_point(e, (u, v))
    fx = (f(p[0] + h, p[1]) - f(p[0] - h, p[1])) / (2 * h)
    fxy = (f(p[0] + h, p[1] + h) - f(p[0] + h, p[1] - h) - f(p[0] - h, p[1] + h) + f(p[0] - h, p[1] - h)) / (4 * h * h)
    assert math.isclose(j.derivative_value((1, 0)), fx, rel_tol=1e-8)
    assert math.isclose(j.derivative_value((1, 1)), fxy, rel_tol=1e-5)


def test_jet_matches_arithmetic_on_jets():
    x, y = Jet.variables([0.3, 1.2], 5)
    e = ex.parse("x^3 - 2*x*y + 1/y", VARS)
    assert defect(ex.eval_jet(e, (0.3, 1.2), 5), x**3 - x * y * 2.0 + y.inverse()) < 1e-14


# random expression trees for the print/parse round trip
leaf = st.one_of(
    st.sampled_from(["x", "y", "pi"]),
    st.integers(0, 9).map(str),
    st.floats(0.1, 9.9).map(lambda v: repr(round(v, 3))),
)


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(lambda t: f"({t[0]}){t[1]}({t[2]})")
    unary = children.map(lambda c: f"-({c})")
    call = st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda t: f"{t[0]}({t[1]})")
    return st.one_of(binop, unary, call)


expressions = st.recursive(leaf, _combine, max_leaves=8)


@given(expressions)
def test_print_parse_round_trip(text):
    e = ex.parse(text, VARS)
    assert ex.parse(ex.to_string(e), VARS) == e
