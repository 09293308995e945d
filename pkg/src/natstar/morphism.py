"""Equivalence morphisms ``S = id + hbar^2 S_2 + O(hbar^4)`` to the Moyal product."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    ConnectionField,
    LiftedConnection,
    NotFlat,
    _lift_to_phase,
    _momenta,
    omega_up,
    raise_all,
)
from .jets import HbarSeries, Jet, contract, defect
from .operators import DiffOperator
from .starprod import (
    _as_series,
    full_contraction,
    iterated_covariant_derivative,
    moyal_star,
    star_series,
)

__all__ = [
    "MorphismS",
    "sharp_tensor",
    "build_S_flat",
    "build_S_curved",
    "build_S_ab",
    "apply_S",
    "apply_S_inverse",
    "transported_star",
    "equivalence_defect",
    "three_factor_defect",
    "A_alpha_k",
    "A2_closed_form",
    "A3_closed_form",
    "commutator_z",
    "commutator_sharp",
    "verify_eq26",
    "quantum_canonicity_defect",
    "eq28_defects",
]


@dataclass(frozen=True)
class MorphismS:
    """``S = id + hbar^2 S_2``; only the hbar^2 operator is specified."""

    S2: DiffOperator
    a: float = 0.0
    b: float = 0.0
    K: int = 4
    frame: str = "darboux"

    @property
    def nvars(self) -> int:
        return self.S2.nvars

    def odd_slots_vanish(self) -> bool:
        return all(h == 0 for h in self.S2.hbar_powers())


def sharp_tensor(T: Jet, n: int) -> Jet:
    """Coefficients of ``T_{a1..ak} d^{a1}..d^{ak}`` on ``d_{b1}..d_{bk}``, where
    ``d^a = omega^{ab} d_b``."""
    k = len(T.shape)
    return raise_all(T, n) * ((-1.0) ** k)


def _raise_axes(T: Jet, n: int, axes) -> Jet:
    """Apply ``omega^{ab}`` to the listed batch axes only."""
    w = omega_up(n)

    def fn(c):
        for axis in axes:
            c = np.moveaxis(np.tensordot(w, c, axes=([1], [axis])), 0, axis)
        return c

    return T.map_coeffs(fn)


def _require_flat(lift: LiftedConnection, tol: float):
    curv = lift.curvature_size()
    if curv > tol:
        raise NotFlat(f"connection is curved (relative |R| = {curv:.3g})")


def _gamma_gamma(lift: LiftedConnection) -> Jet:
    G = lift.to_darboux().gamma
    return contract("mna,nmb->ab", G, G)


def build_S_flat(lift: LiftedConnection, tol: float = 1e-9, K: int = 4) -> MorphismS:
    _require_flat(lift, tol)
    return build_S_curved(lift, 0.0, K=K)


def build_S_curved(lift: LiftedConnection, a: float, K: int = 4) -> MorphismS:
    """Flat-form morphism plus the Ricci term ``(a/16) R_{ab} d^a d^b``.

    ``R_{ab}`` is the Ricci contraction of the phase-space curvature, which on the
    lift equals ``(2/3) Ric`` in the position block.  Hence this operator coincides
    with ``build_S_ab(conn, p0, a / 3, 0)``.
    """
    d = lift.to_darboux()
    n = d.n
    cubic = sharp_tensor(d.lowered(), n) * (-1.0 / 24.0)
    quad = _gamma_gamma(d)
    if a != 0:
        quad = quad + d.ricci * a
    S2 = DiffOperator.from_tensor(cubic) + DiffOperator.from_tensor(sharp_tensor(quad, n) * (1.0 / 16.0))
    return MorphismS(S2, a=a, b=0.0, K=K)


def _fiber_operator(conn: ConnectionField, p0: Sequence[float]) -> DiffOperator:
    """``sum_k d_{p_k} (d_{x^k} + gamma^r_{kn} p_r d_{p_n})`` in normal form."""
    n = conn.dimension
    G = _lift_to_phase(conn.gamma)
    v = G.valid_order
    P = _momenta(n, p0, v)
    coupling = contract("r,rkn->kn", P, G)
    out = None
    for k in range(n):
        Dk = DiffOperator.partial(2 * n, k, v)
        for m in range(n):
            Dk = Dk + DiffOperator.multiplication(coupling[k, m]).compose(DiffOperator.partial(2 * n, n + m, v))
        term = DiffOperator.partial(2 * n, n + k, v).compose(Dk)
        out = term if out is None else out + term
    return out


def build_S_ab(conn: ConnectionField, p0: Sequence[float], a: float, b: float, K: int = 4) -> MorphismS:
    """Coordinate form of the morphism with the extra ``b`` term (operators composed as written)."""
    n = conn.dimension
    G = conn.gamma
    v = G.valid_order - 1
    X, F = slice(0, n), slice(n, 2 * n)
    gg = contract("ilj,lik->jk", G, G)
    quad_base = (gg + conn.ricci * a) * 3.0
    cubic_mixed = G * 3.0
    P = _momenta(n, p0, v)
    poly = contract("inl,njk->ijkl", G, G) * 2.0 - G.gradient()
    cubic_fiber = contract("i,ijkl->jkl", P, _lift_to_phase(poly))
    M2 = _lift_to_phase(quad_base).truncate(v)
    M3 = _lift_to_phase(cubic_mixed).truncate(v)
    c2 = np.zeros((2 * n, 2 * n) + M2.coeffs.shape[-1:])
    c2[F, F] = M2.coeffs
    c3 = np.zeros((2 * n,) * 3 + M2.coeffs.shape[-1:])
    c3[X, F, F] = M3.coeffs
    c3[F, F, F] = cubic_fiber.truncate(v).coeffs
    S2 = DiffOperator.from_tensor(Jet(2 * n, c2, v)) + DiffOperator.from_tensor(Jet(2 * n, c3, v))
    if b != 0:
        E = _fiber_operator(conn, p0)
        S2 = S2 + E.compose(E).scale(-3.0 * b)
    return MorphismS(S2.scale(1.0 / 24.0), a=a, b=b, K=K)


def apply_S(S: MorphismS, f, K: int | None = None) -> HbarSeries:
    """``S f`` for a jet or an hbar series."""
    K = S.K if K is None else K
    F = _as_series(f, K).truncate_hbar(K)
    terms = list(F.terms)
    for k in range(2, K + 1):
        if F[k - 2].max_abs() == 0:
            continue
        terms[k] = terms[k] + S.S2.apply(F[k - 2])
    return HbarSeries(tuple(terms))


def apply_S_inverse(S: MorphismS, f, K: int | None = None) -> HbarSeries:
    """Truncated Neumann inverse ``sum_j (-hbar^2 S_2)^j``."""
    K = S.K if K is None else K
    F = _as_series(f, K).truncate_hbar(K)
    total = list(F.terms)
    current = list(F.terms)
    for _ in range(1, K // 2 + 1):
        nxt = [None] * (K + 1)
        for k in range(K + 1):
            if k >= 2 and current[k - 2] is not None and current[k - 2].max_abs() != 0:
                nxt[k] = -S.S2.apply(current[k - 2])
        for k, t in enumerate(nxt):
            if t is not None:
                total[k] = total[k] + t
        fill = min(t.valid_order for t in total)
        current = [t if t is not None else Jet.zeros(F.nvars, fill) for t in nxt]
    return HbarSeries(tuple(total))


def transported_star(S: MorphismS):
    """The product ``S(S^-1 f *_M S^-1 g)`` induced by ``S`` from the Moyal product."""

    def star(f, g, K):
        return apply_S(S, star_series(moyal_star, apply_S_inverse(S, f, K), apply_S_inverse(S, g, K), K), K)

    return star


def equivalence_defect(S: MorphismS, star, f: Jet, g: Jet, K: int = 3) -> HbarSeries:
    """``S(f *_M g) - (S f) * (S g)`` through hbar^K."""
    lhs = apply_S(S, moyal_star(f, g, K), K)
    rhs = star_series(star, apply_S(S, f, K), apply_S(S, g, K), K)
    return lhs - rhs


def three_factor_defect(S: MorphismS, star, f: Jet, g: Jet, h: Jet, K: int = 3) -> HbarSeries:
    """``S(f *_M g *_M h) - Sf * Sg * Sh`` through hbar^K."""
    fg = star_series(moyal_star, f, g, K)
    lhs = apply_S(S, star_series(moyal_star, fg, h, K), K)
    left = star_series(star, apply_S(S, f, K), apply_S(S, g, K), K)
    rhs = star_series(star, left, apply_S(S, h, K), K)
    return lhs - rhs


# ---------------------------------------------------------------------------
# verification of the hbar^2 system


def _coordinate(lift: LiftedConnection, alpha: int, order: int) -> Jet:
    return Jet.variable(2 * lift.n, alpha, lift.point[alpha], order)


def A_alpha_k(lift: LiftedConnection, alpha: int, k: int, f: Jet) -> Jet:
    """``(1/k!) omega..omega (nabla^k z^alpha)(nabla^k f)``."""
    if k not in (2, 3):
        raise ValueError("A_alpha_k is defined for k in {2, 3}")
    d = lift.to_darboux()
    z = _coordinate(d, alpha, f.valid_order)
    Dz = iterated_covariant_derivative(z, d, k)[k]
    Df = iterated_covariant_derivative(f, d, k)[k]
    return full_contraction(Dz, raise_all(Df, d.n)) * (1.0 / math.factorial(k))


def A2_closed_form(lift: LiftedConnection, alpha: int, f: Jet) -> Jet:
    """``-1/2 G^a_{mn} d^m d^n f - 1/2 omega^{ma} G^n_{mr} G^r_{ns} d^s f``."""
    d = lift.to_darboux()
    n = d.n
    w = omega_up(n)
    G = d.gamma
    up1 = raise_all(f.gradient(), n)
    up2 = raise_all(f.gradient().gradient(), n)
    first = full_contraction(G[alpha], up2)
    GG = contract("nmr,rns->ms", G, G)
    vec = contract("ms,s->m", GG, up1)
    second = sum((vec[m] * w[m, alpha] for m in range(2 * n) if w[m, alpha] != 0), Jet.zeros(2 * n, vec.valid_order))
    return first * (-0.5) - second * 0.5


def A3_closed_form(lift: LiftedConnection, alpha: int, f: Jet) -> Jet:
    """Rewritten form of ``A^alpha_3`` obtained with the identities for
    ``omega (nabla^3 z^alpha)`` and quantum canonicity."""
    d = lift.to_darboux()
    n = d.n
    w = omega_up(n)
    G = d.gamma
    dG = G.gradient()  # [n1, m2, m3, m1] = d_{m1} G^{n1}_{m2 m3}
    R = d.curvature  # [n1, m2, m3, m1]
    rowa = w[alpha]  # omega^{alpha m1}
    wj = Jet.constant(2 * n, rowa, dG.valid_order)
    X1 = contract("abcd,d->abc", dG + R, wj)  # [n1, m2, m3]
    R_swapped = R.transpose(0, 2, 1, 3)  # R^{n1}_{m3 m2 m1} at [n1, m2, m3, m1]
    X2 = contract("abcd,d->abc", dG + R * (1.0 / 3.0) + R_swapped * (2.0 / 3.0), wj)
    g1 = f.gradient()
    g2 = g1.gradient()
    g3 = g2.gradient()
    # d_{n1} d^{m2} d^{m3} f
    t3 = _raise_axes(g3, n, (1, 2))
    first = full_contraction(X1, t3) * (1.0 / 6.0)
    up2 = raise_all(g2, n)  # d^{m3} d^{n2} f
    Y = contract("abc,bad->cd", X2, G)  # sum_{n1, m2} X2[n1, m2, m3] G^{m2}_{n1 n2} -> [m3, n2]
    second = full_contraction(Y, up2) * 0.5
    return first + second


def commutator_z(S2: DiffOperator, alpha: int, f: Jet, point) -> Jet:
    """``[S_2, z^alpha] f``."""
    z = Jet.variable(f.nvars, alpha, point[alpha], f.valid_order)
    return S2.apply(z * f) - z * S2.apply(f)


def commutator_sharp(S2: DiffOperator, alpha: int, f: Jet) -> Jet:
    """``[S_2, d^alpha] f`` with ``d^alpha = omega^{alpha b} d_b``."""
    n = f.nvars // 2
    w = omega_up(n)

    def sharp(h):
        return sum((h.partial(b) * w[alpha, b] for b in range(2 * n) if w[alpha, b] != 0), Jet.zeros(h.nvars, h.valid_order - 1))

    return S2.apply(sharp(f)) - sharp(S2.apply(f))


def verify_eq26(S: MorphismS, lift: LiftedConnection, fs: Sequence[Jet], tol: float = 1e-9) -> dict:
    """Max defects of ``[S_2, z] = -A_2/4`` and ``[S_2, d^alpha] = -A_3/4`` over test jets."""
    _require_flat(lift, tol)
    d = lift.to_darboux()
    n2 = 2 * d.n
    worst_a = worst_b = 0.0
    order = max(f.valid_order for f in fs)
    Dz = [iterated_covariant_derivative(_coordinate(d, al, order), d, 3) for al in range(n2)]
    for f in fs:
        Df = iterated_covariant_derivative(f, d, 3)
        hat2 = raise_all(Df[2], d.n)
        hat3 = raise_all(Df[3], d.n)
        for alpha in range(n2):
            rhs = full_contraction(Dz[alpha][2], hat2) * (-0.25 / 2)
            worst_a = max(worst_a, defect(commutator_z(S.S2, alpha, f, d.point), rhs))
            rhs = full_contraction(Dz[alpha][3], hat3) * (-0.25 / 6)
            worst_b = max(worst_b, defect(commutator_sharp(S.S2, alpha, f), rhs))
    return {"z": worst_a, "sharp": worst_b, "max": max(worst_a, worst_b)}


def quantum_canonicity_defect(lift: LiftedConnection, alpha: int, beta: int, k: int, order: int | None = None) -> Jet:
    """``omega^k``-contraction of ``nabla^k z^alpha`` with ``nabla^k z^beta`` (odd ``k``)."""
    if k < 3 or k % 2 == 0:
        raise ValueError("quantum canonicity is stated for odd k >= 3")
    d = lift.to_darboux()
    order = d.gamma.valid_order if order is None else order
    za = _coordinate(d, alpha, order)
    zb = _coordinate(d, beta, order)
    Da = iterated_covariant_derivative(za, d, k)[k]
    Db = iterated_covariant_derivative(zb, d, k)[k]
    return full_contraction(Da, raise_all(Db, d.n))


def eq28_defects(lift: LiftedConnection) -> tuple[float, float]:
    """Defects of the two identities expressing ``omega (nabla^3 z^alpha)`` through
    ``d G + R`` (first and second slot contracted)."""
    d = lift.to_darboux()
    n = d.n
    w = omega_up(n)
    G = d.gamma
    dG = G.gradient()
    R = d.curvature
    S = dG + R  # [n, m2, m3, m1]
    worst_a = worst_b = 0.0
    for alpha in range(2 * n):
        z = _coordinate(d, alpha, G.valid_order)
        T = iterated_covariant_derivative(z, d, 3)[3]  # [m1, m2, m3]
        wa = Jet.constant(2 * n, w[alpha], S.valid_order)
        # first slot: sum_m1 omega[m1, n1] T[m1, m2, m3]  vs  omega[alpha, m1] S[n1, m2, m3, m1]
        lhs = T.map_coeffs(lambda c: np.tensordot(w, c, axes=([0], [0])))
        rhs = contract("abcd,d->abc", S, wa)
        worst_a = max(worst_a, (lhs - rhs).max_abs())
        # second slot: sum_m2 omega[m2, n2] T[m1, m2, m3] vs omega[alpha, m2] S[n2, m1, m3, m2]
        lhs = T.map_coeffs(lambda c: np.moveaxis(np.tensordot(w, c, axes=([0], [1])), 0, 1))
        rhs = contract("abcd,d->bac", S, wa)
        worst_b = max(worst_b, (lhs - rhs).max_abs())
    return worst_a, worst_b
