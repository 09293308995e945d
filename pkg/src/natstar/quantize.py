"""Configuration-space operators for observables polynomial in momenta.

Operators are ``DiffOperator`` instances on the N base variables; powers of
hbar are carried in the operator's hbar grading, so ``-i hbar d_j`` is the term
``(1, e_j) -> -i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, combinations_with_replacement
from math import factorial
from typing import Sequence

import numpy as np

from .geometry import ConnectionField, _momenta, covariant_derivative
from .jets import BudgetExhausted, Jet, contract, embed, restrict
from .morphism import MorphismS
from .operators import DiffOperator

__all__ = [
    "QuantizeError",
    "MomentumSymbol",
    "momentum_operator",
    "weyl_order",
    "weyl_order_terms",
    "symbol_terms",
    "s_order",
    "op_linear",
    "op_quadratic",
    "op_cubic",
    "op_closed_form",
    "laplace_beltrami",
    "formal_adjoint",
    "apply_operator",
    "coefficient_discrepancy",
]


class QuantizeError(ValueError):
    pass


@dataclass(frozen=True)
class MomentumSymbol:
    """``H = K^{i..}(x) p_i .. + V(x)``; ``K`` is a symmetric tensor of base jets."""

    K: Jet
    V: Jet | None = None

    def __post_init__(self):
        d = len(self.K.shape)
        if d > 3:
            raise QuantizeError(f"symbols of degree {d} are not supported (max 3)")
        if any(s != self.K.nvars for s in self.K.shape):
            raise QuantizeError(f"coefficient shape {self.K.shape} does not match {self.K.nvars} variables")
        if self.V is not None and (self.V.shape or self.V.nvars != self.K.nvars):
            raise QuantizeError("potential must be a scalar jet on the base variables")

    @property
    def degree(self) -> int:
        return len(self.K.shape)

    @property
    def nvars(self) -> int:
        return self.K.nvars

    def symmetry_defect(self) -> float:
        d = self.degree
        worst = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                perm = list(range(d))
                perm[i], perm[j] = perm[j], perm[i]
                worst = max(worst, (self.K - self.K.transpose(*perm)).max_abs())
        return worst

    @classmethod
    def symmetrize(cls, K: Jet, V: Jet | None = None) -> "MomentumSymbol":
        from itertools import permutations

        d = len(K.shape)
        if d < 2:
            return cls(K, V)
        perms = list(permutations(range(d)))
        total = K.transpose(*perms[0])
        for p in perms[1:]:
            total = total + K.transpose(*p)
        return cls(total * (1.0 / len(perms)), V)

    def phase_jet(self, p0: Sequence[float] | None = None) -> Jet:
        """The symbol as a jet on the 2N phase variables expanded at ``(x0, p0)``."""
        n = self.nvars
        p0 = [0.0] * n if p0 is None else p0
        T = embed(self.K, 2 * n, range(n))
        P = _momenta(n, p0, T.order)
        for _ in range(self.degree):
            T = contract("...a,a->...", T, P)
        if self.V is not None:
            T = T + embed(self.V, 2 * n, range(n))
        return T


def _trace_gamma(conn: ConnectionField) -> list:
    """``Gamma^k_{jk}`` for each ``j`` (the gradient of ``ln sqrt|g|``)."""
    n = conn.dimension
    G = conn.gamma
    return [sum((G[k, j, k] for k in range(1, n)), G[0, j, 0]) for j in range(n)]


def momentum_operator(conn: ConnectionField, j: int) -> DiffOperator:
    """``-i hbar (d_j + 1/2 Gamma^k_{jk})``."""
    n = conn.dimension
    tr = _trace_gamma(conn)[j]
    return (DiffOperator.partial(n, j, tr.valid_order) + DiffOperator.multiplication(tr * 0.5)).scale(-1j, hbar_shift=1)


def _weyl_monomial(c: Jet, momenta: Sequence[DiffOperator]) -> DiffOperator:
    """Average of the ``2^d`` placements of ``c`` among commuting momentum operators."""
    d = len(momenta)
    mult = DiffOperator.multiplication(c)
    total = None
    for r in range(d + 1):
        for left in combinations(range(d), r):
            op = None
            for k in left:
                op = momenta[k] if op is None else op.compose(momenta[k])
            op = mult if op is None else op.compose(mult)
            for k in range(d):
                if k not in left:
                    op = op.compose(momenta[k])
            total = op if total is None else total + op
    return total.scale(1.0 / 2**d)


def weyl_order_terms(terms: dict, conn: ConnectionField, hbar_shift: int = 0) -> DiffOperator:
    """Weyl ordering of ``sum_beta c_beta(x) p^beta`` (``terms`` maps multi-indices to base jets)."""
    n = conn.dimension
    phat = [momentum_operator(conn, j) for j in range(n)]
    total = None
    for beta, c in terms.items():
        if c.max_abs() == 0:
            continue
        idx = [j for j, k in enumerate(beta) for _ in range(k)]
        if len(idx) > 3:
            raise QuantizeError("Weyl ordering is implemented up to cubic symbols")
        op = _weyl_monomial(c, [phat[j] for j in idx])
        total = op if total is None else total + op
    if total is None:
        return DiffOperator(n, {})
    return total.scale(1.0, hbar_shift=hbar_shift)


def _tensor_terms(H: MomentumSymbol) -> dict:
    n, d = H.nvars, H.degree
    terms = {}
    for idx in combinations_with_replacement(range(n), d):
        beta = tuple(idx.count(j) for j in range(n))
        # number of index tuples giving this monomial
        mult = factorial(d) // int(np.prod([factorial(b) for b in beta]))
        terms[beta] = H.K[idx] * mult if d else H.K
    if H.V is not None:
        zero = (0,) * n
        terms[zero] = terms[zero] + H.V if zero in terms else H.V
    return terms


def weyl_order(H: MomentumSymbol, conn: ConnectionField) -> DiffOperator:
    return weyl_order_terms(_tensor_terms(H), conn)


def symbol_terms(F: Jet, n: int, max_degree: int) -> dict:
    """Split a phase jet expanded at ``p = 0`` into momentum monomials with base-jet coefficients."""
    out = {}
    for deg in range(max_degree + 1):
        for idx in combinations_with_replacement(range(n), deg):
            beta = tuple(idx.count(j) for j in range(n))
            out[beta] = restrict(F, range(n), {n + j: b for j, b in enumerate(beta) if b})
    return out


def s_order(H: MomentumSymbol, S: MorphismS, conn: ConnectionField) -> DiffOperator:
    """Weyl ordering of ``S^-1 H``.  ``S_2`` lowers the momentum degree by two, so
    ``S^-1 H = H - hbar^2 S_2 H`` exactly for symbols of degree at most 3."""
    n = H.nvars
    if S.nvars != 2 * n:
        raise QuantizeError("morphism and symbol live on different spaces")
    F = H.phase_jet()
    correction = S.S2.apply(F)
    op = weyl_order(H, conn)
    if H.degree >= 2:
        low = symbol_terms(correction, n, H.degree - 2)
        op = op + weyl_order_terms({k: -v for k, v in low.items()}, conn, hbar_shift=2)
    return op


# ---------------------------------------------------------------------------
# closed forms written with covariant derivatives


def _mult(c: Jet) -> DiffOperator:
    return DiffOperator.multiplication(c)


def _divergence(vec: Sequence[DiffOperator], conn: ConnectionField) -> DiffOperator:
    """``psi -> nabla_i (A^i psi)`` for operator components ``A^i``."""
    n = conn.dimension
    tr = _trace_gamma(conn)
    total = None
    for i, A in enumerate(vec):
        term = DiffOperator.partial(n, i, tr[i].valid_order).compose(A) + A.left_multiply(tr[i])
        total = term if total is None else total + term
    return total


def _double_divergence(T: Sequence[Sequence[DiffOperator]], conn: ConnectionField) -> DiffOperator:
    """``psi -> nabla_i nabla_j (T^{ij} psi)`` for an upper 2-tensor of operators."""
    n = conn.dimension
    G = conn.gamma
    v = G.valid_order
    W = []
    for i in range(n):
        w = None
        for j in range(n):
            term = DiffOperator.partial(n, j, v).compose(T[i][j])
            for l in range(n):
                term = term + T[l][j].left_multiply(G[i, j, l]) + T[i][l].left_multiply(G[j, j, l])
            w = term if w is None else w + term
        W.append(w)
    return _divergence(W, conn)


def _hessian(conn: ConnectionField) -> list:
    """Covariant Hessian ``psi_{;jk} = d_j d_k psi - Gamma^l_{jk} d_l psi`` as operators."""
    n = conn.dimension
    G = conn.gamma
    v = G.valid_order
    out = []
    for j in range(n):
        row = []
        for k in range(n):
            op = DiffOperator.partial(n, j, v).compose(DiffOperator.partial(n, k, v))
            for l in range(n):
                op = op - DiffOperator.partial(n, l, v).left_multiply(G[l, j, k])
            row.append(op)
        out.append(row)
    return out


def _gradient_ops(conn: ConnectionField) -> list:
    n = conn.dimension
    return [DiffOperator.partial(n, j, conn.gamma.valid_order) for j in range(n)]


def _contract_ops(coeffs: Sequence[Jet], ops: Sequence[DiffOperator]) -> DiffOperator:
    total = None
    for c, op in zip(coeffs, ops):
        term = op.left_multiply(c)
        total = term if total is None else total + term
    return total


def _double_covariant_divergence(K: Jet, conn: ConnectionField) -> Jet:
    """``K^{ij..}_{;ij}`` (contract the first two upper slots with two derivatives)."""
    d = len(K.shape)
    kinds = "u" * d
    DK = covariant_derivative(K, conn.gamma, kinds)
    DDK = covariant_derivative(DK, conn.gamma, kinds + "l")
    return _trace_pairs(DDK, d)


def _trace_pairs(DDK: Jet, d: int) -> Jet:
    # DDK axes: [i, j, rest..., first derivative, second derivative]
    def fn(c):
        c = np.trace(c, axis1=0, axis2=d)  # i with first derivative
        return np.trace(c, axis1=0, axis2=d - 1)  # j with second derivative

    return DDK.map_coeffs(fn)


def op_linear(K: Jet, conn: ConnectionField) -> DiffOperator:
    """``-(i hbar / 2)(K^i nabla_i + nabla_i K^i)``."""
    n = conn.dimension
    grad = _gradient_ops(conn)
    transport = _contract_ops([K[i] for i in range(n)], grad)
    div = _divergence([_mult(K[i]) for i in range(n)], conn)
    return (transport + div).scale(-0.5j, hbar_shift=1)


def op_quadratic(K: Jet, conn: ConnectionField, a: float, b: float) -> DiffOperator:
    """``-hbar^2 (nabla_i K^{ij} nabla_j + (1-b)/4 K^{ij}_{;ij} - (1-a)/4 K^{ij} R_{ij})``."""
    n = conn.dimension
    grad = _gradient_ops(conn)
    kinetic = _divergence([_contract_ops([K[i, j] for j in range(n)], grad) for i in range(n)], conn)
    ddK = _double_covariant_divergence(K, conn)
    KR = contract("ij,ij->", K, conn.ricci)
    scalar = ddK * (0.25 * (1 - b)) - KR * (0.25 * (1 - a))
    return (kinetic + _mult(scalar)).scale(-1.0, hbar_shift=2)


def op_cubic(K: Jet, conn: ConnectionField, a: float, b: float, consistent: bool = False) -> DiffOperator:
    """The reference cubic operator, expanded term by term::

        (i hbar^3 / 2)(nabla_i K^{ijk} nabla_j nabla_k + nabla_i nabla_j K^{ijk} nabla_k
                       + (1-b)/4 (nabla_k V^k + V^k nabla_k)
                       - 3(1-a)/4 (nabla_i W^i + W^i nabla_i))

    with ``V^k = K^{ijk}_{;ij}`` and ``W^i = K^{ijk} R_{jk}``.

    With ``consistent=True`` the ``V`` terms carry ``(1-3b)/4`` instead, which is
    the weight produced by S-ordering with the ``b`` morphism; the two agree at ``b = 0``.
    """
    n = conn.dimension
    grad = _gradient_ops(conn)
    hess = _hessian(conn)
    t1 = _divergence(
        [_contract_ops([K[i, j, k] for j in range(n) for k in range(n)], [hess[j][k] for j in range(n) for k in range(n)]) for i in range(n)],
        conn,
    )
    t2 = _double_divergence([[_contract_ops([K[i, j, k] for k in range(n)], grad) for j in range(n)] for i in range(n)], conn)
    V = _double_covariant_divergence(K, conn)
    W = contract("ijk,jk->i", K, conn.ricci)
    tv = _divergence([_mult(V[k]) for k in range(n)], conn) + _contract_ops([V[k] for k in range(n)], grad)
    tw = _divergence([_mult(W[i]) for i in range(n)], conn) + _contract_ops([W[i] for i in range(n)], grad)
    weight = 0.25 * (1 - 3 * b) if consistent else 0.25 * (1 - b)
    total = t1 + t2 + tv.scale(weight) - tw.scale(0.75 * (1 - a))
    return total.scale(0.5j, hbar_shift=3)


def op_closed_form(
    H: MomentumSymbol, conn: ConnectionField, a: float, b: float, consistent: bool = False
) -> DiffOperator:
    """Closed-form operator for a homogeneous symbol of degree 1, 2 or 3 (plus potential)."""
    if H.degree == 1:
        op = op_linear(H.K, conn)
    elif H.degree == 2:
        op = op_quadratic(H.K, conn, a, b)
    elif H.degree == 3:
        op = op_cubic(H.K, conn, a, b, consistent)
    else:
        raise QuantizeError("closed forms exist for degrees 1, 2 and 3")
    if H.V is not None:
        op = op + _mult(H.V)
    return op


def laplace_beltrami(conn: ConnectionField) -> DiffOperator:
    """``|g|^{-1/2} d_i |g|^{1/2} g^{ij} d_j``."""
    n = conn.dimension
    ginv = conn.metric.ginv
    grad = _gradient_ops(conn)
    return _divergence([_contract_ops([ginv[i, j] for j in range(n)], grad) for i in range(n)], conn)


def formal_adjoint(A: DiffOperator, conn: ConnectionField) -> DiffOperator:
    """Adjoint for the pairing ``int conj(phi) psi sqrt|g| dx``:
    ``c d^alpha -> (-1)^|alpha| mu^-1 d^alpha (mu conj(c) .)``."""
    n = A.nvars
    mu = conn.metric.sqrt_det
    mu_inv = mu.inverse()
    total = None
    for (h, alpha), c in A.terms.items():
        inner = DiffOperator.multiplication(mu * c.conj(), h)
        for var, k in enumerate(alpha):
            for _ in range(k):
                inner = DiffOperator.partial(n, var, mu.valid_order).compose(inner)
        term = inner.left_multiply(mu_inv)
        if sum(alpha) % 2:
            term = -term
        total = term if total is None else total + term
    return total if total is not None else DiffOperator(n, {})


def apply_operator(A: DiffOperator, psi: Jet, hbar: float = 1.0) -> Jet:
    if psi.valid_order < A.order:
        raise BudgetExhausted(f"operator of order {A.order} needs a jet of valid order >= {A.order}")
    return A.apply(psi, hbar)


def coefficient_discrepancy(A: DiffOperator, B: DiffOperator) -> dict:
    """Per-coefficient difference ``A - B``: ``"hbar^h d^alpha" -> max |value|`` (nonzero entries)."""
    D = A - B
    out = {}
    for (h, alpha), c in sorted(D.terms.items()):
        v = c.max_abs()
        if v > 0:
            out[f"hbar^{h} d^{list(alpha)}"] = v
    return out
