"""Verification suites: each check samples points of a model and records the worst defect."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .geometry import (
    MetricModel,
    connection_field,
    lift_flat,
    lift_general,
    point_transform,
)
from .jets import HbarSeries, Jet, defect
from .morphism import (
    build_S_ab,
    build_S_curved,
    build_S_flat,
    eq28_defects,
    equivalence_defect,
    quantum_canonicity_defect,
    transported_star,
    verify_eq26,
)
from .quantize import (
    MomentumSymbol,
    apply_operator,
    coefficient_discrepancy,
    formal_adjoint,
    op_closed_form,
    op_quadratic,
    s_order,
)
from .starprod import (
    FamilyData,
    associativity_defect,
    covariant_star,
    curvilinear_star,
    engine,
    fedosov_like_star,
    fedosov_operators,
    moyal_star,
    star_family_a,
)

__all__ = ["CheckConfig", "CheckRecord", "CHECKS", "SUITES", "run_check", "run_suite", "suite_checks", "SuiteRefused"]


class SuiteRefused(ValueError):
    """The requested suite does not apply to the model."""


@dataclass(frozen=True)
class CheckConfig:
    order: int = 8
    K: int = 4
    seed: int = 0
    samples: int = 20
    a: float = 0.0
    b: float = 0.0
    tol: float | None = None  # overrides every per-check tolerance when set
    operator_order: int = 12
    psi_samples: int = 30


@dataclass
class CheckRecord:
    id: str
    model: str
    point: list
    max_defect: float
    tol: float
    passed: bool
    per_order: list | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _series_defect(lhs: HbarSeries, rhs: HbarSeries, upto: int) -> list:
    return lhs.defects(rhs)[: upto + 1]


def _random_phase(rng, n: int, order: int, count: int, degree: int = 3) -> list:
    return [Jet.random_polynomial(rng, 2 * n, degree, order) for _ in range(count)]


class _Worst:
    """Tracks the worst sample of a check."""

    def __init__(self):
        self.value = -1.0
        self.point: list = []
        self.per_order: list | None = None
        self.details: dict = {}

    def update(self, value: float, point, per_order=None, details=None):
        if value > self.value:
            self.value = float(value)
            self.point = [float(v) for v in point]
            self.per_order = None if per_order is None else [float(v) for v in per_order]
            self.details = details or {}


def _points(model: MetricModel, rng, samples: int, phase: bool = True):
    for _ in range(samples):
        if phase:
            x0, p0 = model.sample_phase_point(rng)
            yield tuple(float(v) for v in x0), tuple(float(v) for v in p0)
        else:
            yield tuple(float(v) for v in model.sample_point(rng)), ()


# ---------------------------------------------------------------------------
# individual checks; each returns (worst, default tolerance)


def _moyal_associativity(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        f, g, h = _random_phase(rng, n, cfg.order, 3)
        left = moyal_star(f, g, cfg.K)
        lhs = associativity_defect(moyal_star, f, g, h, cfg.K)
        scale = max(1.0, max(t.max_abs() for t in left.terms))
        per = [d / scale for d in lhs.defects()]
        w.update(max(per), x0 + p0, per)
    return w, 1e-9


def _covariance(model, cfg, rng):
    T = model.point_transformation()
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        conn = connection_field(model, x0, cfg.order)
        F, G = _random_phase(rng, n, cfg.order, 2)
        lhs = curvilinear_star(point_transform(T, F, x0, p0), point_transform(T, G, x0, p0), conn, p0, cfg.K)
        ms = moyal_star(F, G, cfg.K)
        rhs = HbarSeries(tuple(point_transform(T, t, x0, p0) for t in ms.terms))
        per = _series_defect(lhs, rhs, cfg.K)
        w.update(max(per), x0 + p0, per)
    return w, 1e-9


def _covariant_vs_curvilinear(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        conn = connection_field(model, x0, cfg.order)
        f, g = _random_phase(rng, n, cfg.order, 2)
        lhs = covariant_star(f, g, lift_flat(conn, p0), cfg.K)
        rhs = curvilinear_star(f, g, conn, p0, cfg.K)
        per = _series_defect(lhs, rhs, cfg.K)
        w.update(max(per), x0 + p0, per)
    return w, 1e-9


def _lift_torsion(model, cfg, rng):
    w = _Worst()
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_general(connection_field(model, x0, cfg.order), p0)
        adopted = lift.to_adopted()
        # the Darboux form is symmetric by construction; the adopted-frame torsion
        # cancels structure constants against large coefficients, so it is relative
        dar = lift.torsion_defect()
        ado = adopted.torsion_defect() / max(1.0, adopted.gamma.max_abs())
        w.update(max(dar, ado), x0 + p0, details={"darboux": dar, "adopted": ado})
    return w, 1e-12


def _lift_symplectic(model, cfg, rng):
    w = _Worst()
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_general(connection_field(model, x0, cfg.order), p0)
        da, db = lift.symplectic_defects()
        w.update(max(da, db), x0 + p0, details={"upper": da, "lower": db})
    return w, 1e-10


def _frame_consistency(model, cfg, rng):
    w = _Worst()
    for x0, p0 in _points(model, rng, cfg.samples):
        conn = connection_field(model, x0, cfg.order)
        dar = lift_general(conn, p0, "darboux")
        ado = lift_general(conn, p0, "adopted")
        d1 = defect(dar.to_adopted().gamma, ado.gamma)
        d2 = defect(ado.to_darboux().gamma, dar.gamma)
        w.update(max(d1, d2), x0 + p0, details={"darboux->adopted": d1, "adopted->darboux": d2})
    return w, 1e-9


def _flat_reduction(model, cfg, rng):
    w = _Worst()
    for x0, p0 in _points(model, rng, cfg.samples):
        conn = connection_field(model, x0, cfg.order)
        full = lift_general(conn, p0)
        w.update(defect(full.gamma, lift_flat(conn, p0).gamma), x0 + p0)
    return w, 1e-12


def _commutator_identities(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_flat(connection_field(model, x0, cfg.order), p0)
        rep = verify_eq26(build_S_flat(lift), lift, _random_phase(rng, n, cfg.order, 2, degree=4))
        w.update(rep["max"], x0 + p0, details=rep)
    return w, 1e-9


def _third_derivative_identities(model, cfg, rng):
    w = _Worst()
    for x0, p0 in _points(model, rng, cfg.samples):
        da, db = eq28_defects(lift_general(connection_field(model, x0, cfg.order), p0))
        w.update(max(da, db), x0 + p0, details={"first": da, "second": db})
    return w, 1e-9


def _quantum_canonicity(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_general(connection_field(model, x0, cfg.order), p0)
        worst = max(
            quantum_canonicity_defect(lift, al, be, 3).max_abs() for al in range(2 * n) for be in range(al, 2 * n)
        )
        w.update(worst, x0 + p0)
    return w, 1e-10


def _equivalence_flat(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    K = min(cfg.K, 3)
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_flat(connection_field(model, x0, cfg.order), p0)
        f, g = _random_phase(rng, n, cfg.order, 2)
        S = build_S_flat(lift)
        res = equivalence_defect(S, engine("covariant", lift=lift), f, g, K)
        scale = max(1.0, f.max_abs() * g.max_abs())
        per = [d / scale for d in res.defects()]
        w.update(max(per), x0 + p0, per)
    return w, 1e-9


def _equivalence_transported(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    K = min(cfg.K, 3)
    for x0, p0 in _points(model, rng, cfg.samples):
        conn = connection_field(model, x0, cfg.order)
        S = build_S_ab(conn, p0, cfg.a, cfg.b)
        f, g = _random_phase(rng, n, cfg.order, 2)
        res = equivalence_defect(S, transported_star(S), f, g, K)
        scale = max(1.0, f.max_abs() * g.max_abs())
        per = [d / scale for d in res.defects()]
        w.update(max(per), x0 + p0, per)
    return w, 1e-8


def _equivalence_curved(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    K = min(cfg.K, 3)
    for x0, p0 in _points(model, rng, cfg.samples):
        lift = lift_general(connection_field(model, x0, cfg.order), p0)
        data = FamilyData.from_lift(lift)
        f, g = _random_phase(rng, n, cfg.order, 2)
        res = equivalence_defect(build_S_curved(lift, cfg.a), engine("family-a", lift=data, a=cfg.a), f, g, K)
        scale = max(1.0, f.max_abs() * g.max_abs())
        per = [d / scale for d in res.defects()]
        w.update(max(per), x0 + p0, per)
    return w, 1e-8


def _family_associativity(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    K = min(cfg.K, 3)
    for x0, p0 in _points(model, rng, cfg.samples):
        data = FamilyData.from_lift(lift_general(connection_field(model, x0, cfg.order), p0))
        f, g, h = _random_phase(rng, n, cfg.order, 3)
        res = associativity_defect(engine("family-a", lift=data, a=cfg.a), f, g, h, K)
        scale = max(1.0, f.max_abs() * g.max_abs() * h.max_abs())
        per = [d / scale for d in res.defects()]
        w.update(max(per), x0 + p0, per)
    return w, 1e-8


def _fedosov_reduction(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    K = min(cfg.K, 3)
    for x0, p0 in _points(model, rng, cfg.samples):
        data = FamilyData.from_lift(lift_general(connection_field(model, x0, cfg.order), p0))
        f, g = _random_phase(rng, n, cfg.order, 2)
        per = _series_defect(star_family_a(f, g, data, 0.0, K), fedosov_like_star(f, g, data, K), K)
        w.update(max(per), x0 + p0, per)
    return w, 1e-9


def _d3_symmetry(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    for x0, p0 in _points(model, rng, cfg.samples):
        data = FamilyData.from_lift(lift_general(connection_field(model, x0, cfg.order), p0))
        (f,) = _random_phase(rng, n, cfg.order, 1)
        D = fedosov_operators(f, data, 3)[3]
        worst = max(defect(D, D.transpose(p)) for p in [(1, 0, 2), (0, 2, 1), (2, 1, 0)])
        w.update(worst, x0 + p0)
    return w, 1e-9


def _random_symbol(rng, n: int, d: int, order: int) -> MomentumSymbol:
    comps = [Jet.random_polynomial(rng, n, 2, order) for _ in range(n**d)]
    return MomentumSymbol.symmetrize(Jet.stack(comps).reshape((n,) * d))


def _operator_crosscheck(model, cfg, rng):
    w = _Worst()
    n = model.dimension
    order = cfg.operator_order
    for x0, _ in _points(model, rng, cfg.samples, phase=False):
        conn = connection_field(model, x0, order)
        S = build_S_ab(conn, [0.0] * n, cfg.a, cfg.b)
        psis = [Jet.random_polynomial(rng, n, 6, order, True) for _ in range(cfg.psi_samples)]
        per_degree = []
        report = {}
        for d in (1, 2, 3):
            H = _random_symbol(rng, n, d, order)
            A = s_order(H, S, conn)
            B = op_closed_form(H, conn, cfg.a, cfg.b)
            dd = max(defect(apply_operator(A, p), apply_operator(B, p)) for p in psis)
            per_degree.append(dd)
            disc = coefficient_discrepancy(A, B)
            large = {k: v for k, v in disc.items() if v > 1e-8}
            if large:
                report[f"degree {d}"] = large
        w.update(max(per_degree), x0, per_degree, details=report)
    return w, 1e-8


def _operator_hermiticity(model, cfg, rng):
    """Formal adjoint against the metric volume, compared coefficient-wise at each point."""
    w = _Worst()
    n = model.dimension
    order = cfg.order
    for x0, _ in _points(model, rng, cfg.samples, phase=False):
        conn = connection_field(model, x0, order)
        per = []
        for d in (1, 2, 3):
            B = op_closed_form(_random_symbol(rng, n, d, order), conn, cfg.a, cfg.b)
            per.append(formal_adjoint(B, conn).defect(B, degree=0))
        w.update(max(per), x0, per)
    return w, 1e-9


def _natural_hamiltonian(model, cfg, rng):
    """b-independence everywhere; a-dependence equal to ``hbar^2 (1-a) K^{ij} R_ij / 4``.

    Operators are compared through their normal-form coefficients at each sampled point.
    """
    w = _Worst()
    for x0, _ in _points(model, rng, cfg.samples, phase=False):
        conn = connection_field(model, x0, cfg.order)
        K = conn.metric.ginv * 0.5
        base = op_quadratic(K, conn, cfg.a, 0.0)
        b_dep = op_quadratic(K, conn, cfg.a, 1.0).defect(base, degree=0)
        ref = op_quadratic(K, conn, 1.0, cfg.b)
        shift = op_quadratic(K, conn, cfg.a, cfg.b) - ref
        scalar_curv = sum(conn.ricci[i, j] * conn.metric.ginv[i, j] for i in range(model.dimension) for j in range(model.dimension))
        expected = scalar_curv * ((1 - cfg.a) / 8.0)
        key = (2, (0,) * model.dimension)
        others = max((abs(c.value) for k, c in shift.terms.items() if k != key), default=0.0)
        got = shift.terms.get(key, Jet.zeros(model.dimension, 0))
        a_dep = max(others, abs(got.value - expected.value))
        details = {"b_dependence": b_dep, "a_shift_defect": a_dep, "shift_value": float(np.real(got.value))}
        w.update(max(b_dep, a_dep), x0, details=details)
    return w, 1e-12


CHECKS: dict[str, Callable] = {
    "moyal-associativity": _moyal_associativity,
    "covariance": _covariance,
    "covariant-vs-curvilinear": _covariant_vs_curvilinear,
    "lift-torsion": _lift_torsion,
    "lift-symplectic": _lift_symplectic,
    "lift-frame-consistency": _frame_consistency,
    "lift-flat-reduction": _flat_reduction,
    "appendix-commutators": _commutator_identities,
    "appendix-third-derivative-identities": _third_derivative_identities,
    "quantum-canonicity": _quantum_canonicity,
    "equivalence-flat": _equivalence_flat,
    "equivalence-transported": _equivalence_transported,
    "equivalence-curved": _equivalence_curved,
    "family-associativity": _family_associativity,
    "fedosov-reduction": _fedosov_reduction,
    "fedosov-symmetry": _d3_symmetry,
    "operator-crosscheck": _operator_crosscheck,
    "operator-hermiticity": _operator_hermiticity,
    "natural-hamiltonian": _natural_hamiltonian,
}

_COMMON = [
    "moyal-associativity",
    "lift-torsion",
    "lift-symplectic",
    "lift-frame-consistency",
    "appendix-third-derivative-identities",
    "quantum-canonicity",
    "operator-crosscheck",
    "operator-hermiticity",
    "natural-hamiltonian",
]

SUITES: dict[str, list] = {
    "flat": _COMMON
    + [
        "covariance",
        "covariant-vs-curvilinear",
        "lift-flat-reduction",
        "appendix-commutators",
        "equivalence-flat",
        "equivalence-transported",
    ],
    "curved": _COMMON
    + [
        "equivalence-curved",
        "family-associativity",
        "fedosov-reduction",
        "fedosov-symmetry",
    ],
}


def _seed_for(cfg: CheckConfig, check_id: str, model: MetricModel) -> np.random.Generator:
    # independent deterministic stream per (seed, check, model)
    salt = [ord(c) for c in f"{check_id}|{model.name}"]
    return np.random.default_rng([cfg.seed, *salt])


def run_check(check_id: str, model: MetricModel, cfg: CheckConfig) -> CheckRecord:
    fn = CHECKS[check_id]
    worst, tol = fn(model, cfg, _seed_for(cfg, check_id, model))
    tol = cfg.tol if cfg.tol is not None else tol
    value = worst.value
    passed = bool(math.isfinite(value) and value < tol)
    return CheckRecord(check_id, model.name, worst.point, value, tol, passed, worst.per_order, worst.details)


def suite_checks(suite: str, model: MetricModel) -> list:
    if suite not in SUITES:
        raise SuiteRefused(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    if suite == "flat" and not model.flat:
        raise SuiteRefused(f"model {model.name} is not flat; the flat suite does not apply")
    ids = list(SUITES[suite])
    if "covariance" in ids and model.to_cartesian is None:
        ids.remove("covariance")
    return sorted(ids)


def run_suite(suite: str, model: MetricModel, cfg: CheckConfig) -> list:
    """Run every check of the suite sequentially; records are ordered by check id."""
    return [run_check(cid, model, cfg) for cid in suite_checks(suite, model)]
