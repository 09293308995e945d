import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from natstar.jets import (
    BudgetExhausted,
    DimensionMismatch,
    HbarSeries,
    Jet,
    JetDomainError,
    contract,
    defect,
    determinant,
    embed,
    jet_compose,
    jet_function,
    matrix_inverse,
    restrict,
)

coeff = st.floats(-2.0, 2.0, allow_nan=False)


def _poly(c, order=6):
    """Bivariate polynomial from a flat coefficient list over monomials of degree <= 2."""
    exps = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    return Jet.from_terms(2, dict(zip(exps, c)), order)


def _eval_poly(j: Jet, h):
    """Evaluate the stored Taylor polynomial at the displacement ``h`` (oracle for products)."""
    from natstar.jets import basis

    b = basis(j.nvars, j.order)
    mon = np.prod(np.asarray(h, dtype=float) ** b.exps, axis=1)
    return j.coeffs @ mon


@given(st.lists(coeff, min_size=6, max_size=6), st.lists(coeff, min_size=6, max_size=6))
def test_product_matches_pointwise_product(ca, cb):
    a, b = _poly(ca), _poly(cb)
    h = (0.3, -0.7)
    # degree 4 product fits inside order 6, so evaluation is exact
    assert math.isclose(_eval_poly(a * b, h), _eval_poly(a, h) * _eval_poly(b, h), abs_tol=1e-12)


@given(st.lists(coeff, min_size=6, max_size=6), st.lists(coeff, min_size=6, max_size=6), st.lists(coeff, min_size=6, max_size=6))
def test_ring_axioms(ca, cb, cc):
    a, b, c = _poly(ca), _poly(cb), _poly(cc)
    assert defect((a * b) * c, a * (b * c)) < 1e-12
    assert defect(a * b, b * a) < 1e-14
    assert defect(a * (b + c), a * b + a * c) < 1e-12


@pytest.mark.parametrize("name,fn", [("exp", math.exp), ("sin", math.sin), ("cos", math.cos), ("ln", math.log), ("sqrt", math.sqrt), ("tan", math.tan)])
def test_elementary_functions_against_finite_differences(name, fn):
    x0, order = 0.7, 6
    j = jet_function(name, Jet.variable(1, 0, x0, order))
    assert math.isclose(j.value, fn(x0), rel_tol=1e-14)
    h = 1e-4
    fd1 = (fn(x0 + h) - fn(x0 - h)) / (2 * h)
    fd2 = (fn(x0 + h) - 2 * fn(x0) + fn(x0 - h)) / h**2
    assert math.isclose(j.derivative_value((1,)), fd1, rel_tol=1e-7)
    assert math.isclose(j.derivative_value((2,)), fd2, rel_tol=1e-5)


def test_ln_domain_error():
    with pytest.raises(JetDomainError):
        jet_function("ln", Jet.variable(1, 0, -1.0, 4))


def test_inverse_and_sqrt_identities(rng):
    x = Jet.random_polynomial(rng, 3, 3, 6) + 3.0
    assert defect(x * x.inverse(), Jet.constant(3, 1.0, 6)) < 1e-13
    r = x.sqrt()
    assert defect(r * r, x) < 1e-13


def test_partial_consumes_budget():
    x, y = Jet.variables([0.5, 1.0], 4)
    f = x**3 * y
    d = f.partial(0)
    assert d.valid_order == 3
    assert math.isclose(d.value, 3 * 0.25 * 1.0)
    with pytest.raises(BudgetExhausted):
        d.coefficient((4, 0))


def test_gradient_of_quadratic():
    x, y = Jet.variables([1.0, 2.0], 5)
    g = (x * x * y).gradient()
    assert np.allclose(g.value, [2 * 1 * 2, 1])


def test_mismatched_variable_counts():
    with pytest.raises(DimensionMismatch):
        Jet.variable(2, 0, 0.0, 3) + Jet.variable(3, 0, 0.0, 3)


def test_contract_matches_einsum_on_values(rng):
    A = Jet(2, rng.normal(size=(3, 4, 6)), 2)
    B = Jet(2, rng.normal(size=(4, 5, 6)), 2)
    C = contract("ij,jk->ik", A, B)
    assert np.allclose(C.value, A.value @ B.value)
    # first-order coefficients follow the product rule
    assert np.allclose(C.coeffs[..., 1], A.coeffs[..., 1] @ B.value + A.value @ B.coeffs[..., 1])


def test_matrix_inverse_and_determinant(rng):
    M = Jet(3, rng.normal(size=(3, 3, 10)) * 0.2, 2) + Jet.constant(3, np.eye(3) * 2, 2)
    Minv = matrix_inverse(M)
    eye = contract("ij,jk->ik", M, Minv)
    assert defect(eye, Jet.constant(3, np.eye(3), 2)) < 1e-13
    assert math.isclose(determinant(M).value, np.linalg.det(M.value), rel_tol=1e-13)


def test_composition_with_polar_map():
    # f(u, v) = u^2 + v^2 composed with (r cos t, r sin t) is r^2
    order = 5
    r, t = Jet.variables([1.5, 0.4], order)
    phi = [r * jet_function("cos", t), r * jet_function("sin", t)]
    at = [p.value for p in phi]
    u, v = Jet.variables(at, order)
    f = u * u + v * v
    assert defect(jet_compose(f, phi, at), r * r) < 1e-13


def test_embed_and_restrict_round_trip(rng):
    a = Jet.random_polynomial(rng, 2, 3, 4)
    big = embed(a, 4, [0, 2])
    assert defect(restrict(big, [0, 2]), a) == 0.0


def test_hbar_series_product():
    one = Jet.constant(1, 1.0, 2)
    s = HbarSeries((one, one * 2.0, one * 0.0))
    sq = s * s
    assert [t.value for t in sq.terms] == [1.0, 4.0, 4.0]
    assert s.evaluate(0.5).value == 2.0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_defect_is_relative_above_one(u, v):
    a, b = Jet.constant(1, u, 0), Jet.constant(1, v, 0)
    expected = abs(u - v) / max(1.0, abs(u), abs(v))
    assert math.isclose(defect(a, b), expected, rel_tol=1e-12, abs_tol=1e-300)
