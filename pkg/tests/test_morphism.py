import numpy as np
import pytest

from natstar.geometry import NotFlat, connection_field, get_model, lift_flat, lift_general
from natstar.jets import HbarSeries, Jet, defect
from natstar.morphism import (
    A2_closed_form,
    A3_closed_form,
    A_alpha_k,
    apply_S,
    apply_S_inverse,
    build_S_ab,
    build_S_curved,
    build_S_flat,
    eq28_defects,
    equivalence_defect,
    quantum_canonicity_defect,
    three_factor_defect,
    transported_star,
    verify_eq26,
)
from natstar.starprod import FamilyData, engine

ORDER = 8


def _setup(name, rng, flat=False):
    model = get_model(name)
    x0, p0 = model.sample_phase_point(rng)
    conn = connection_field(model, x0, ORDER)
    lift = lift_flat(conn, p0) if flat else lift_general(conn, p0)
    return model, conn, tuple(p0), lift


def _rel(series, *factors):
    scale = max(1.0, float(np.prod([f.max_abs() for f in factors])))
    return max(series.defects()) / scale


@pytest.mark.parametrize("name", ["euclidean-polar", "euclidean-cartesian"])
def test_flat_morphism_intertwines_covariant_star(name, rng):
    _, _, _, lift = _setup(name, rng, flat=True)
    S = build_S_flat(lift)
    assert S.odd_slots_vanish()
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    assert _rel(equivalence_defect(S, engine("covariant", lift=lift), f, g), f, g) < 1e-9


def test_flat_morphism_refuses_curved(rng):
    _, _, _, lift = _setup("unit-sphere", rng)
    with pytest.raises(NotFlat):
        build_S_flat(lift)


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("name", ["unit-sphere", "hyperbolic-half-plane"])
def test_curved_morphism_intertwines_family(name, a, rng):
    _, _, _, lift = _setup(name, rng)
    S = build_S_curved(lift, a)
    star = engine("family-a", lift=FamilyData.from_lift(lift), a=a)
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    assert _rel(equivalence_defect(S, star, f, g), f, g) < 1e-8


def test_three_factor_extension(rng):
    _, _, _, lift = _setup("unit-sphere", rng)
    S = build_S_curved(lift, 0.5)
    star = engine("family-a", lift=FamilyData.from_lift(lift), a=0.5)
    f, g, h = (Jet.random_polynomial(rng, 4, 2, ORDER) for _ in range(3))
    assert _rel(three_factor_defect(S, star, f, g, h), f, g, h) < 1e-8


@pytest.mark.parametrize("a", [0.0, 0.6, 1.0])
def test_curved_morphism_is_coordinate_form_with_rescaled_parameter(a, rng):
    # the phase-space Ricci of the lift is (2/3) Ric, which rescales the parameter by 3
    _, conn, p0, lift = _setup("unit-sphere", rng)
    lhs = build_S_curved(lift, a).S2
    rhs = build_S_ab(conn, p0, a / 3.0, 0.0).S2
    assert lhs.defect(rhs, degree=0) < 1e-12


def test_inverse_round_trip(rng):
    _, conn, p0, _ = _setup("hyperbolic-half-plane", rng)
    S = build_S_ab(conn, p0, 0.3, 0.7)
    f = Jet.random_polynomial(rng, 4, 4, ORDER)
    back = apply_S(S, apply_S_inverse(S, f))
    assert max(back.defects(HbarSeries.from_jet(f, S.K))) < 1e-12


@pytest.mark.parametrize("a,b", [(0.0, 0.0), (1.0, 1.0), (0.3, 0.7)])
def test_transported_star_is_intertwined(a, b, rng):
    _, conn, p0, _ = _setup("euclidean-polar", rng)
    S = build_S_ab(conn, p0, a, b)
    f, g = (Jet.random_polynomial(rng, 4, 3, ORDER) for _ in range(2))
    assert _rel(equivalence_defect(S, transported_star(S), f, g), f, g) < 1e-8


@pytest.mark.parametrize("name", ["euclidean-polar", "euclidean-spherical"])
def test_commutator_identities_on_flat_models(name, rng):
    model, _, _, lift = _setup(name, rng, flat=True)
    fs = [Jet.random_polynomial(rng, 2 * model.dimension, 4, ORDER) for _ in range(2)]
    assert verify_eq26(build_S_flat(lift), lift, fs)["max"] < 1e-9


def test_commutator_identities_refuse_curved(rng):
    _, conn, p0, lift = _setup("unit-sphere", rng)
    with pytest.raises(NotFlat):
        verify_eq26(build_S_ab(conn, p0, 0, 0), lift, [Jet.variable(4, 0, 1.0, ORDER)])


@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere", "hyperbolic-half-plane"])
def test_closed_forms_of_coordinate_terms(name, rng):
    _, _, _, lift = _setup(name, rng)
    f = Jet.random_polynomial(rng, 4, 4, ORDER)
    for alpha in range(4):
        assert defect(A_alpha_k(lift, alpha, 2, f), A2_closed_form(lift, alpha, f)) < 1e-9
        if name == "euclidean-polar":
            # the third-order closed form drops curvature terms
            assert defect(A_alpha_k(lift, alpha, 3, f), A3_closed_form(lift, alpha, f)) < 1e-9


@pytest.mark.parametrize("name", ["euclidean-polar", "unit-sphere", "hyperbolic-half-plane", "euclidean-spherical"])
def test_third_derivative_identities_and_canonicity(name, rng):
    model, _, _, lift = _setup(name, rng)
    assert max(eq28_defects(lift)) < 1e-9
    n2 = 2 * model.dimension
    worst = max(quantum_canonicity_defect(lift, i, j, 3).max_abs() for i in range(n2) for j in range(n2))
    assert worst < 1e-10


def test_canonicity_needs_odd_order(rng):
    _, _, _, lift = _setup("unit-sphere", rng)
    with pytest.raises(ValueError):
        quantum_canonicity_defect(lift, 0, 1, 2)
