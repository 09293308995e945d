
import pytest
from hypothesis import given, strategies as st

from natstar import expr as ex
from natstar.geometry import connection_field, get_model
from natstar.jets import Jet, defect
from natstar.morphism import build_S_ab
from natstar.operators import DiffOperator
from natstar.quantize import (
    MomentumSymbol,
    QuantizeError,
    apply_operator,
    coefficient_discrepancy,
    formal_adjoint,
    laplace_beltrami,
    op_closed_form,
    op_quadratic,
    s_order,
    weyl_order,
)

ORDER = 10


def _random_symbol(rng, n, d, order=ORDER):
    comps = [Jet.random_polynomial(rng, n, 2, order) for _ in range(n**d)]
    return MomentumSymbol.symmetrize(Jet.stack(comps).reshape((n,) * d))


def _jet(model, text, x0, order=ORDER):
    return ex.eval_jet(ex.parse(text, model.variables), x0, order)


def test_weyl_ordering_of_xp():
    # Weyl(x p) = (x P + P x) / 2 = -i hbar (x d_x + 1/2)
    model = get_model("euclidean-cartesian")
    x0 = (0.7, -0.2)
    conn = connection_field(model, x0, 4)
    K = Jet.stack([_jet(model, "x", x0, 4), Jet.zeros(2, 4)])
    A = weyl_order(MomentumSymbol(K), conn)
    psi = _jet(model, "x^2*y", x0, 4)
    expected = (_jet(model, "2*x^2*y", x0, 4) + psi * 0.5) * (-1j)
    assert defect(apply_operator(A, psi), expected) < 1e-14


@pytest.mark.parametrize(
    "name,psi,eigen",
    [
        ("euclidean-polar", "r^2", None),
        ("unit-sphere", "cos(theta)", -2.0),
        ("unit-sphere", "sin(theta)*cos(phi)", -2.0),
        ("hyperbolic-half-plane", "y^2", 2.0),
    ],
)
def test_laplace_beltrami_against_known_functions(name, psi, eigen, rng):
    model = get_model(name)
    x0 = tuple(model.sample_point(rng))
    conn = connection_field(model, x0, ORDER)
    f = _jet(model, psi, x0)
    got = apply_operator(laplace_beltrami(conn), f)
    if eigen is None:  # Laplacian of r^2 in the plane
        assert abs(got.value - 4.0) < 1e-12
    else:
        assert abs(got.value - eigen * f.value) < 1e-12


@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere", "hyperbolic-half-plane"])
def test_minimal_quadratic_operator_is_half_laplacian(name, rng):
    model = get_model(name)
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    op = op_quadratic(conn.metric.ginv * 0.5, conn, 1.0, 1.0)
    ref = laplace_beltrami(conn).scale(-0.5, hbar_shift=2)
    assert op.defect(ref, degree=0) < 1e-13


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("a,b", [(0.0, 0.0), (1.0, 1.0), (0.3, 0.7)])
@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere"])
def test_s_ordering_matches_closed_form_low_degree(name, a, b, d, rng):
    model = get_model(name)
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    H = _random_symbol(rng, 2, d)
    A = s_order(H, build_S_ab(conn, (0.0, 0.0), a, b), conn)
    B = op_closed_form(H, conn, a, b)
    assert A.defect(B, degree=0) < 1e-10


@pytest.mark.parametrize("b", [0.0, 0.4, 1.0])
@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere", "hyperbolic-half-plane"])
def test_cubic_with_rebalanced_weight_matches_s_ordering(name, b, rng):
    model = get_model(name)
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    H = _random_symbol(rng, 2, 3)
    A = s_order(H, build_S_ab(conn, (0.0, 0.0), 0.3, b), conn)
    B = op_closed_form(H, conn, 0.3, b, consistent=True)
    assert A.defect(B, degree=0) < 1e-10


def test_default_cubic_agrees_at_zero_b(rng):
    model = get_model("unit-sphere")
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    H = _random_symbol(rng, 2, 3)
    default = op_closed_form(H, conn, 0.7, 0.0)
    assert default.defect(op_closed_form(H, conn, 0.7, 0.0, consistent=True), degree=0) == 0.0
    disc = coefficient_discrepancy(default, op_closed_form(H, conn, 0.7, 1.0))
    assert all(k.startswith("hbar^3") for k in disc)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere", "hyperbolic-half-plane"])
def test_closed_forms_are_formally_self_adjoint(name, d, rng):
    model = get_model(name)
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    B = op_closed_form(_random_symbol(rng, 2, d), conn, 0.3, 0.7)
    assert formal_adjoint(B, conn).defect(B, degree=0) < 1e-9


def test_adjoint_of_first_order_operator_on_sphere():
    # A = sin(phi) d_theta; against the area element sin(theta) the adjoint is
    # A* psi = -d_theta(sin(phi) psi) - cot(theta) sin(phi) psi
    model = get_model("unit-sphere")
    x0 = (1.1, 0.4)
    conn = connection_field(model, x0, ORDER)
    c = _jet(model, "sin(phi)", x0)
    A = DiffOperator(2, {(0, (1, 0)): c})
    psi = _jet(model, "exp(theta)*cos(phi) + theta^3", x0)
    got = apply_operator(formal_adjoint(A, conn), psi)
    expected = -(c * psi).partial(0) - _jet(model, "cos(theta)/sin(theta)*sin(phi)", x0) * psi
    assert abs(got.value - expected.value) < 1e-13
    # and the Laplacian is its own adjoint
    L = laplace_beltrami(conn)
    assert formal_adjoint(L, conn).defect(L, degree=0) < 1e-12


@pytest.mark.parametrize("name,expected", [("unit-sphere", 0.25), ("hyperbolic-half-plane", -0.25), ("euclidean-polar", 0.0)])
def test_natural_hamiltonian_scalar_shift(name, expected, rng):
    model = get_model(name)
    conn = connection_field(model, tuple(model.sample_point(rng)), ORDER)
    K = conn.metric.ginv * 0.5
    shift = op_quadratic(K, conn, 0.0, 0.0) - op_quadratic(K, conn, 1.0, 0.0)
    key = (2, (0, 0))
    assert abs(shift.terms[key].value - expected) < 1e-10
    assert max(abs(c.value) for k, c in shift.terms.items() if k != key) < 1e-12


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_natural_hamiltonian_is_b_independent(a, b):
    model = get_model("unit-sphere")
    conn = connection_field(model, (1.2, 0.3), 6)
    K = conn.metric.ginv * 0.5
    assert op_quadratic(K, conn, a, b).defect(op_quadratic(K, conn, a, 0.0), degree=0) < 1e-12


def test_quartic_symbols_are_rejected():
    with pytest.raises(QuantizeError, match="max 3"):
        MomentumSymbol(Jet.zeros(2, 4, (2, 2, 2, 2)))
