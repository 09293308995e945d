import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from natstar.geometry import connection_field, get_model, lift_flat, lift_general, point_transform, poisson_bracket
from natstar.jets import HbarSeries, Jet, defect, jet_function
from natstar.starprod import (
    CurvedConnectionError,
    FamilyData,
    StarError,
    VectorFieldSet,
    associativity_defect,
    covariant_star,
    curvilinear_star,
    engine,
    fedosov_like_star,
    moyal_star,
    star_family_a,
    vectorfield_star,
)

ORDER = 8
K = 4


def _exp_linear(coef, z0, order=ORDER):
    """exp(coef . z) expanded at z0."""
    zs = Jet.variables(z0, order)
    lin = sum((z * c for z, c in zip(zs[1:], coef[1:])), zs[0] * coef[0])
    return jet_function("exp", lin)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_moyal_on_exponentials(a, b):
    # closed form: e^{a.z} * e^{b.z} = exp((i hbar / 2)(a_x b_p - a_p b_x)) e^{(a+b).z}
    z0 = (0.2, -0.1, 0.3, 0.4)
    f, g = _exp_linear(a, z0), _exp_linear(b, z0)
    s = moyal_star(f, g, K)
    w = a[0] * b[2] + a[1] * b[3] - a[2] * b[0] - a[3] * b[1]
    prod = _exp_linear([u + v for u, v in zip(a, b)], z0)
    for k in range(K + 1):
        ref = prod * ((0.5j * w) ** k / math.factorial(k))
        assert defect(s[k], ref) < 1e-12


def test_moyal_canonical_commutator():
    x, y, px, py = Jet.variables((0.5, 0.0, 2.0, 0.0), 4)
    s = moyal_star(x, px, 2)
    assert s[0].value == 1.0
    assert s[1].value == 0.5j
    assert s[2].max_abs() == 0.0


def _phase_point(model, rng):
    x0, p0 = model.sample_phase_point(rng)
    return tuple(x0), tuple(p0)


@pytest.mark.parametrize(
    "name,kind",
    [
        ("euclidean-polar", "curvilinear"),
        ("euclidean-polar", "covariant"),
        ("unit-sphere", "family-a"),
        ("hyperbolic-half-plane", "fedosov"),
    ],
)
def test_low_orders_are_product_and_bracket(name, kind, rng):
    model = get_model(name)
    x0, p0 = _phase_point(model, rng)
    conn = connection_field(model, x0, ORDER)
    if kind == "curvilinear":
        star = engine(kind, conn=conn, p0=p0)
    elif kind == "covariant":
        star = engine(kind, lift=lift_flat(conn, p0))
    else:
        star = engine(kind, lift=lift_general(conn, p0), a=0.5)
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    s = star(f, g, 3)
    assert defect(s[0], f * g) < 1e-13
    anti = (s[1] - star(g, f, 3)[1]) * 0.5
    assert defect(anti, poisson_bracket(f, g) * 0.5j) < 1e-12


def test_vectorfield_star_with_coordinate_fields_is_moyal(rng):
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    V = VectorFieldSet.coordinate(2, ORDER)
    assert max(vectorfield_star(f, g, V, K).defects(moyal_star(f, g, K))) < 1e-14


@pytest.mark.parametrize("name", ["euclidean-polar", "euclidean-spherical"])
def test_curvilinear_star_is_covariant(name, rng):
    model = get_model(name)
    n = model.dimension
    T = model.point_transformation()
    x0, p0 = _phase_point(model, rng)
    conn = connection_field(model, x0, ORDER)
    F, G = (Jet.random_polynomial(rng, 2 * n, 3, ORDER) for _ in range(2))
    lhs = curvilinear_star(point_transform(T, F, x0, p0), point_transform(T, G, x0, p0), conn, p0, K)
    rhs = moyal_star(F, G, K).map(lambda t: point_transform(T, t, x0, p0))
    assert max(lhs.defects(rhs)) < 1e-9


def test_vectorfield_star_from_polar_map(rng):
    model = get_model("euclidean-polar")
    x0, p0 = _phase_point(model, rng)
    V = VectorFieldSet.from_point_transformation(model.point_transformation(), x0, p0, ORDER)
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    conn = connection_field(model, x0, ORDER)
    assert max(vectorfield_star(f, g, V, K).defects(curvilinear_star(f, g, conn, p0, K))) < 1e-9


@pytest.mark.parametrize("name", ["euclidean-polar", "euclidean-cartesian"])
def test_covariant_equals_curvilinear_on_flat(name, rng):
    model = get_model(name)
    x0, p0 = _phase_point(model, rng)
    conn = connection_field(model, x0, ORDER)
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    lhs = covariant_star(f, g, lift_flat(conn, p0), K)
    assert max(lhs.defects(curvilinear_star(f, g, conn, p0, K))) < 1e-9


def test_flat_engines_refuse_curved_input():
    conn = connection_field(get_model("unit-sphere"), (1.0, 0.3), ORDER)
    f = Jet.variable(4, 0, 1.0, ORDER)
    with pytest.raises(CurvedConnectionError):
        curvilinear_star(f, f, conn, (0.0, 0.0), 2)
    with pytest.raises(CurvedConnectionError):
        covariant_star(f, f, lift_general(conn, (0.0, 0.0)), 2)


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("name", ["unit-sphere", "hyperbolic-half-plane"])
def test_family_is_associative_through_third_order(name, a, rng):
    model = get_model(name)
    x0, p0 = _phase_point(model, rng)
    data = FamilyData.from_lift(lift_general(connection_field(model, x0, ORDER), p0))
    f, g, h = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(3))
    d = associativity_defect(engine("family-a", lift=data, a=a), f, g, h, 3)
    scale = max(1.0, f.max_abs() * g.max_abs() * h.max_abs())
    assert max(d.defects()) / scale < 1e-8


def test_family_at_zero_is_fedosov(rng):
    model = get_model("unit-sphere")
    x0, p0 = _phase_point(model, rng)
    data = FamilyData.from_lift(lift_general(connection_field(model, x0, ORDER), p0))
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    assert max(star_family_a(f, g, data, 0.0, 3).defects(fedosov_like_star(f, g, data, 3))) < 1e-9


def test_family_truncation_limit():
    data = FamilyData.from_lift(lift_general(connection_field(get_model("unit-sphere"), (1.0, 0.3), ORDER), (0, 0)))
    f = Jet.variable(4, 0, 1.0, ORDER)
    with pytest.raises(StarError):
        star_family_a(f, f, data, 0.0, 4)


def test_moyal_associativity_on_series(rng):
    f, g, h = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(3))
    d = associativity_defect(moyal_star, f, g, h, K)
    assert max(d.defects()) < 1e-12
    assert isinstance(d, HbarSeries)
