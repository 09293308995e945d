"""Star-product engines on phase-space jets.

Every engine has the signature ``engine(f, g, K) -> HbarSeries`` once its
geometric data is bound (see :func:`engine`), so the generic helpers
(:func:`star_series`, :func:`associativity_defect`) work with all of them.
The hbar^k coefficient of every engine consumes k derivatives of each factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    ConnectionField,
    LiftedConnection,
    PointTransformation,
    _lift_to_phase,
    _momenta,
    adopted_frame,
    christoffel_from_map,
    covariant_derivative,
    omega_up,
    raise_all,
)
from .jets import BudgetExhausted, DimensionMismatch, HbarSeries, Jet, basis, contract, matrix_inverse

__all__ = [
    "StarError",
    "CurvedConnectionError",
    "moyal_star",
    "VectorFieldSet",
    "vectorfield_star",
    "curvilinear_tensors",
    "curvilinear_star",
    "iterated_covariant_derivative",
    "covariant_star",
    "FamilyData",
    "star_family_a",
    "fedosov_operators",
    "fedosov_like_star",
    "star_series",
    "associativity_defect",
    "engine",
    "full_contraction",
]


class StarError(Exception):
    pass


class CurvedConnectionError(StarError):
    pass


def _zero_like(f: Jet, g: Jet) -> Jet:
    return Jet.zeros(f.nvars, min(f.valid_order, g.valid_order))


def _check_pair(f: Jet, g: Jet):
    if f.nvars != g.nvars:
        raise DimensionMismatch("star product factors live on different variable counts")
    if f.nvars % 2:
        raise DimensionMismatch("phase-space jets need an even number of variables")
    if f.shape or g.shape:
        raise DimensionMismatch("star products act on scalar jets")


def _multi_indices(nops: int, k: int):
    b = basis(nops, k)
    return b.exps[b.prefix[k]: b.prefix[k + 1]]


def full_contraction(a: Jet, b: Jet) -> Jet:
    """``sum a[m1..mk] b[m1..mk]`` over all batch axes."""
    k = len(a.shape)
    letters = "abcdefghij"[:k]
    return contract(f"{letters},{letters}->", a, b)


# ---------------------------------------------------------------------------
# exponential of a bidifferential operator built from commuting fields


class _OpCache:
    """Memoized ``L^gamma f`` for commuting first-order operators ``L_0..L_{m-1}``."""

    def __init__(self, f: Jet, apply_op: Callable[[int, Jet], Jet], nops: int):
        self.apply_op = apply_op
        self._cache = {(0,) * nops: f}

    def __call__(self, gamma) -> Jet:
        gamma = tuple(int(x) for x in gamma)
        hit = self._cache.get(gamma)
        if hit is not None:
            return hit
        v = max(i for i, a in enumerate(gamma) if a)
        prev = list(gamma)
        prev[v] -= 1
        out = self.apply_op(v, self(tuple(prev)))
        self._cache[gamma] = out
        return out


def _exp_bidifferential(f: Jet, g: Jet, apply_op, n: int, K: int) -> HbarSeries:
    """``f exp(i hbar/2 (<-X ->Y - <-Y ->X)) g`` with ops ``X_i = L_i``, ``Y_i = L_{n+i}``."""
    cf = _OpCache(f, apply_op, 2 * n)
    cg = _OpCache(g, apply_op, 2 * n)
    terms = [f * g]
    for k in range(1, K + 1):
        acc = None
        for gamma in _multi_indices(2 * n, k):
            alpha, beta = gamma[:n], gamma[n:]
            w = (-1.0) ** int(beta.sum()) / math.prod(math.factorial(int(x)) for x in gamma)
            t = cf(gamma) * cg(np.concatenate([beta, alpha]))
            t = t * w
            acc = t if acc is None else acc + t
        terms.append(acc * (0.5j) ** k)
    return HbarSeries(tuple(terms))


def moyal_star(f: Jet, g: Jet, K: int) -> HbarSeries:
    """Moyal product in the Darboux coordinates of the jets."""
    _check_pair(f, g)
    n = f.nvars // 2
    return _exp_bidifferential(f, g, lambda v, h: h.partial(v), n, K)


@dataclass(frozen=True)
class VectorFieldSet:
    """Fields ``X_i = X[i, m] d_m``, ``Y_i = Y[i, m] d_m`` on phase space."""

    X: Jet  # (N, 2N)
    Y: Jet  # (N, 2N)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def fields(self) -> Jet:
        return Jet.stack([self.X[i] for i in range(self.n)] + [self.Y[i] for i in range(self.n)])

    def apply(self, op: int, f: Jet) -> Jet:
        return full_contraction(self.fields[op], f.gradient())

    @classmethod
    def coordinate(cls, n: int, order: int) -> "VectorFieldSet":
        eye = np.eye(2 * n)
        c = Jet.constant(2 * n, eye, order)
        return cls(c[:n], c[n:])

    @classmethod
    def from_point_transformation(
        cls, T: PointTransformation, x0: Sequence[float], p0: Sequence[float], order: int
    ) -> "VectorFieldSet":
        """Euclidean coordinate fields written in the primed chart of ``T``."""
        n = T.n
        phi = T.base_jets(x0, order + 2)
        gamma = _lift_to_phase(christoffel_from_map(phi))
        jac = Jet.stack(phi).gradient()
        J = _lift_to_phase(jac)
        Jinv = _lift_to_phase(matrix_inverse(jac))
        v = gamma.valid_order
        P = _momenta(n, p0, v)
        # D_{x'^i} = Jinv[j, i] (d_{x'^j} + gamma^r_{jl} p'_r d_{p'_l})
        coupling = contract("r,rjl->jl", P, gamma)
        Xc = np.zeros((n, 2 * n, coupling.coeffs.shape[-1]))
        Xc[:, :n] = Jinv.transpose(1, 0).truncate(v).coeffs
        Xc[:, n:] = contract("ji,jl->il", Jinv, coupling).truncate(v).coeffs
        Yc = np.zeros_like(Xc)
        # D_{p'_i} = J[i, j] d_{p'_j}
        Yc[:, n:] = J.truncate(v).coeffs
        return cls(Jet(2 * n, Xc, v), Jet(2 * n, Yc, v))

    def commutator_norm(self) -> float:
        F = self.fields
        dF = F.gradient()  # [a, m, k] = d_k F[a, m]
        along = contract("ak,bmk->abm", F, dF)  # F_a(F_b^m)
        return (along - along.transpose(1, 0, 2)).max_abs()


def vectorfield_star(f: Jet, g: Jet, V: VectorFieldSet, K: int, tol: float = 1e-9) -> HbarSeries:
    _check_pair(f, g)
    if V.n * 2 != f.nvars:
        raise DimensionMismatch("vector field set does not match the phase-space dimension")
    norm = V.commutator_norm()
    if norm > tol:
        raise StarError(f"vector fields do not commute (|[.,.]| = {norm:.3g})")
    F = V.fields
    return _exp_bidifferential(f, g, lambda v, h: full_contraction(F[v], h.gradient()), V.n, K)


# ---------------------------------------------------------------------------
# recursive bidifferential operators of the curvilinear chart


def _frame_lower(T: Jet, frame, n: int) -> Jet:
    """``D_i`` applied to every component; new axis appended."""
    k = len(T.shape)
    letters = "abcdefghij"[:k]
    grad = T.gradient()
    return contract(f"ym,{letters}m->{letters}y", frame.E[:n], grad)


def _add_lower(T: Jet, nl: int, nu: int, frame, gamma: Jet, n: int) -> Jet:
    """One step of the lower-index recursion; the new index goes after the lower block."""
    out = _frame_lower(T, frame, n)
    k = nl + nu
    letters = "abcdefghij"[:k]
    for s in range(k):
        swapped = letters[:s] + "y" + letters[s + 1:]
        if s < nl:
            out = out - contract(f"y{letters[s]}z,{swapped}->{letters}z", gamma, T)
        else:
            out = out + contract(f"{letters[s]}yz,{swapped}->{letters}z", gamma, T)
    return out.map_coeffs(lambda c: np.moveaxis(c, k, nl))


def _add_upper(T: Jet, n: int) -> Jet:
    """``d_{p_j}`` of every component; new axis appended (end of the upper block)."""
    grad = T.gradient()
    k = len(T.shape)
    return grad.map_coeffs(lambda c: c[(slice(None),) * k + (slice(n, 2 * n),)])


def curvilinear_tensors(
    f: Jet, conn: ConnectionField, p0: Sequence[float], K: int, lower_first: bool = True
) -> dict:
    """``{(n, m): D^{j1..jm}_{i1..in} f}`` for ``n + m <= K`` (lower axes first)."""
    N = conn.dimension
    frame = adopted_frame(conn, p0)
    gamma = _lift_to_phase(conn.gamma)
    T = {(0, 0): f}
    if lower_first:
        for nl in range(1, K + 1):
            T[(nl, 0)] = _add_lower(T[(nl - 1, 0)], nl - 1, 0, frame, gamma, N)
        for nl in range(K + 1):
            for nu in range(1, K - nl + 1):
                T[(nl, nu)] = _add_upper(T[(nl, nu - 1)], N)
    else:
        for nu in range(1, K + 1):
            T[(0, nu)] = _add_upper(T[(0, nu - 1)], N)
        for nu in range(K + 1):
            for nl in range(1, K - nu + 1):
                T[(nl, nu)] = _add_lower(T[(nl - 1, nu)], nl - 1, nu, frame, gamma, N)
    return T


def curvilinear_star(
    f: Jet, g: Jet, conn: ConnectionField, p0: Sequence[float], K: int, tol: float = 1e-9
) -> HbarSeries:
    """Canonical product in the Darboux chart induced by curvilinear base coordinates."""
    _check_pair(f, g)
    if not conn.is_flat(tol):
        raise CurvedConnectionError("curvilinear_star needs a flat base connection")
    Tf = curvilinear_tensors(f, conn, p0, K)
    Tg = Tf if g is f else curvilinear_tensors(g, conn, p0, K)
    terms = [f * g]
    for k in range(1, K + 1):
        acc = None
        for nl in range(k + 1):
            nu = k - nl
            a = Tf[(nl, nu)]
            # D^{I}_{J} g has axes (J, I); bring them to (I, J)
            b = Tg[(nu, nl)].map_coeffs(
                lambda c, nu=nu, nl=nl: np.moveaxis(c, list(range(nu)), list(range(nl, nl + nu)))
            )
            t = full_contraction(a, b) * ((-1.0) ** nu / (math.factorial(nl) * math.factorial(nu)))
            acc = t if acc is None else acc + t
        terms.append(acc * (0.5j) ** k)
    return HbarSeries(tuple(terms))


# ---------------------------------------------------------------------------
# covariant engines


def iterated_covariant_derivative(f: Jet, lift: LiftedConnection, k: int) -> list:
    """``[f, nabla f, nabla nabla f, ...]`` up to rank ``k`` (newest index last).

    Components are taken in the frame of ``lift`` (coordinate or adopted)."""
    if f.valid_order < k:
        raise BudgetExhausted(f"{k} covariant derivatives need valid_order >= {k}")
    out = [f]
    frame = adopted_frame(lift.base, lift.momentum) if lift.frame == "adopted" else None
    G = lift.gamma
    for m in range(k):
        T = out[-1]
        if frame is None:
            D = T.gradient()
        else:
            letters = "abcdefghij"[:m]
            D = contract(f"ym,{letters}m->{letters}y", frame.E, T.gradient())
        letters = "abcdefghij"[:m]
        for s in range(m):
            swapped = letters[:s] + "y" + letters[s + 1:]
            D = D - contract(f"y{letters[s]}z,{swapped}->{letters}z", G, T)
        out.append(D)
    return out


def _pair_terms(Df: list, Dg: list, n: int, K: int) -> list:
    terms = [Df[0] * Dg[0]]
    for k in range(1, K + 1):
        t = full_contraction(Df[k], raise_all(Dg[k], n))
        terms.append(t * ((0.5j) ** k / math.factorial(k)))
    return terms


def covariant_star(f: Jet, g: Jet, lift: LiftedConnection, K: int, tol: float = 1e-9) -> HbarSeries:
    """Covariant form of the product for a flat lifted connection."""
    _check_pair(f, g)
    curv = lift.curvature_size()
    if curv > tol:
        raise CurvedConnectionError(
            f"covariant_star needs a flat connection (relative |R| = {curv:.3g}); use star_family_a"
        )
    Df = iterated_covariant_derivative(f, lift, K)
    Dg = Df if g is f else iterated_covariant_derivative(g, lift, K)
    return HbarSeries(tuple(_pair_terms(Df, Dg, lift.n, K)))


@dataclass(frozen=True)
class FamilyData:
    """Curvature quantities of a lifted connection used by the curved engines."""

    lift: LiftedConnection
    R_low: Jet  # R_{abcd} = omega_down[a, l] R^l_{bcd}
    ricci: Jet  # R_{ab}
    ricci_cov: Jet  # R_{ab;c}

    @classmethod
    def from_lift(cls, lift: LiftedConnection) -> "FamilyData":
        d = lift.to_darboux()
        ric = d.ricci
        return cls(d, d.curvature_lowered, ric, covariant_derivative(ric, d.gamma, "ll"))


def _bind_family(lift) -> FamilyData:
    return lift if isinstance(lift, FamilyData) else FamilyData.from_lift(lift)


def _curvature_vector(data: FamilyData, grad: Jet) -> Jet:
    """``R_{abcd} omega^{de} d_e f``."""
    F = raise_all(grad, data.lift.n)
    return contract("abcd,d->abc", data.R_low, F)


def star_family_a(f: Jet, g: Jet, lift, a: float, K: int = 3) -> HbarSeries:
    """One-parameter family of products for a curved lift, through hbar^3."""
    _check_pair(f, g)
    if K > 3:
        raise StarError("the family is only specified through hbar^3 (K <= 3)")
    data = _bind_family(lift)
    L = data.lift
    n = L.n
    Df = iterated_covariant_derivative(f, L, K)
    Dg = iterated_covariant_derivative(g, L, K)
    terms = _pair_terms(Df, Dg, n, K)
    if K >= 2 and a != 0:
        F = raise_all(Df[1], n)
        G = raise_all(Dg[1], n)
        c2 = contract("ab,b->a", data.ricci, G)
        c2 = full_contraction(F, c2) * (-a)
        terms[2] = terms[2] + c2 * ((0.5j) ** 2 / 2)
    if K >= 3:
        Wf = _curvature_vector(data, Df[1])
        Wg = _curvature_vector(data, Dg[1])
        extra = (
            -full_contraction(Df[3], raise_all(Wg, n))
            - full_contraction(Wf, raise_all(Dg[3], n))
            + full_contraction(Wf, raise_all(Wg, n))
        )
        if a != 0:
            F = raise_all(Df[1], n)
            G = raise_all(Dg[1], n)
            hf = raise_all(Df[2], n)
            hg = raise_all(Dg[2], n)
            t3 = contract("abc,c->ab", data.ricci_cov, F)
            t4 = contract("abc,c->ab", data.ricci_cov, G)
            # R^_{m2}^{m3} = omega^{m3 n} R_{m2 n}
            rhat = data.ricci.map_coeffs(lambda c: np.tensordot(omega_up(n), c, axes=([1], [1])))  # [m3, m2]
            t5 = contract("ac,ab->bc", Df[2], hg)  # [m2, m3]
            extra = (
                extra
                - full_contraction(t3, hg) * (1.5 * a)
                + full_contraction(t4, hf) * (1.5 * a)
                + full_contraction(t5, rhat.transpose(1, 0)) * (3 * a)
            )
        terms[3] = terms[3] + extra * ((0.5j) ** 3 / 6)
    return HbarSeries(tuple(terms))


def fedosov_operators(f: Jet, lift, k: int = 3) -> list:
    """``[D_0 f, .., D_k f]``; the rank-3 operator carries the curvature correction."""
    if k > 3:
        raise StarError("operators are specified through rank 3")
    data = _bind_family(lift)
    D = iterated_covariant_derivative(f, data.lift, k)
    if k >= 3:
        D[3] = D[3] - _curvature_vector(data, D[1])
    return D


def fedosov_like_star(f: Jet, g: Jet, lift, K: int = 3) -> HbarSeries:
    _check_pair(f, g)
    if K > 3:
        raise StarError("the product is only specified through hbar^3 (K <= 3)")
    data = _bind_family(lift)
    Df = fedosov_operators(f, data, K)
    Dg = fedosov_operators(g, data, K)
    return HbarSeries(tuple(_pair_terms(Df, Dg, data.lift.n, K)))


# ---------------------------------------------------------------------------
# generic helpers


def engine(name: str, **ctx) -> Callable[[Jet, Jet, int], HbarSeries]:
    """Bind geometric context so that the engine has signature ``(f, g, K)``."""
    if name == "moyal":
        return moyal_star
    if name == "vectorfield":
        return partial(_vf_engine, V=ctx["fields"])
    if name == "curvilinear":
        return partial(_curv_engine, conn=ctx["conn"], p0=ctx["p0"])
    if name == "covariant":
        return partial(_cov_engine, lift=ctx["lift"])
    if name == "family-a":
        data = _bind_family(ctx["lift"])
        return partial(_family_engine, data=data, a=float(ctx.get("a", 0.0)))
    if name == "fedosov":
        return partial(_fedosov_engine, data=_bind_family(ctx["lift"]))
    raise ValueError(f"unknown engine {name!r}")


def _vf_engine(f, g, K, V):
    return vectorfield_star(f, g, V, K)


def _curv_engine(f, g, K, conn, p0):
    return curvilinear_star(f, g, conn, p0, K)


def _cov_engine(f, g, K, lift):
    return covariant_star(f, g, lift, K)


def _family_engine(f, g, K, data, a):
    return star_family_a(f, g, data, a, K)


def _fedosov_engine(f, g, K, data):
    return fedosov_like_star(f, g, data, K)


def _as_series(f, K: int) -> HbarSeries:
    return f if isinstance(f, HbarSeries) else HbarSeries.from_jet(f, K)


def star_series(star, F, G, K: int) -> HbarSeries:
    """Bilinear extension of ``star`` to hbar-series arguments, truncated at ``K``."""
    F, G = _as_series(F, K), _as_series(G, K)
    out: list = [None] * (K + 1)
    for a in range(min(F.K, K) + 1):
        if F[a].max_abs() == 0:
            continue
        for b in range(min(G.K, K - a) + 1):
            if G[b].max_abs() == 0:
                continue
            s = star(F[a], G[b], K - a - b)
            for c in range(K - a - b + 1):
                idx = a + b + c
                out[idx] = s[c] if out[idx] is None else out[idx] + s[c]
    nv = F.nvars
    fill = min(t.valid_order for t in (*F.terms, *G.terms))
    return HbarSeries(tuple(t if t is not None else Jet.zeros(nv, fill) for t in out))


def associativity_defect(star, f, g, h, K: int) -> HbarSeries:
    """``(f * g) * h - f * (g * h)`` as an hbar series."""
    left = star_series(star, star_series(star, f, g, K), h, K)
    right = star_series(star, f, star_series(star, g, h, K), K)
    return left - right
