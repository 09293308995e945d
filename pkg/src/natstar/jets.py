"""Truncated multivariate Taylor series ("jets") and power series in hbar.

A :class:`Jet` stores the Taylor coefficients of a smooth function around a
fixed point, up to a total degree.  Coefficients are kept in a flat array
indexed by a graded monomial basis, so that the basis of order ``d`` is a
prefix of the basis of order ``d + 1`` and truncation is a slice.

Jets may carry a leading batch shape: ``coeffs.shape == shape + (M,)``.  This
is how tensors of jets (Christoffel symbols, iterated covariant derivatives,
...) are represented; every operation broadcasts over the batch axes and
shares a single ``valid_order``.

Budget rule: ``valid_order`` is the degree up to which coefficients are
exact.  Products and sums take the minimum of the operands, a partial
derivative lowers it by one.  Results are stored truncated at their
``valid_order``; coefficients beyond it are never produced or compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "JetError",
    "DimensionMismatch",
    "BudgetExhausted",
    "JetDomainError",
    "ExpansionPointMismatch",
    "Jet",
    "HbarSeries",
    "basis",
    "jet_add",
    "jet_mul",
    "jet_partial",
    "jet_inverse",
    "jet_sqrt",
    "jet_compose",
    "contract",
    "matrix_inverse",
    "determinant",
    "series_add",
    "series_mul",
    "series_scale",
    "defect",
    "jet_function",
    "univariate_taylor",
    "embed",
    "restrict",
]


class JetError(Exception):
    """Base class for jet arithmetic failures."""


class DimensionMismatch(JetError):
    pass


class BudgetExhausted(JetError):
    """Raised when an operation needs more derivatives than a jet carries."""


class JetDomainError(JetError):
    """Raised for inverse/sqrt/log of a jet with an inadmissible constant term."""


class ExpansionPointMismatch(JetError):
    pass


# ---------------------------------------------------------------------------
# monomial bases


def _monomials(nvars: int, order: int) -> np.ndarray:
    rows = []
    for deg in range(order + 1):
        # combinations_with_replacement yields variable multisets in lex order
        for combo in combinations_with_replacement(range(nvars), deg):
            e = [0] * nvars
            for v in combo:
                e[v] += 1
            rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, nvars)


class Basis:
    """Graded monomial basis for ``nvars`` variables up to total degree ``order``."""

    def __init__(self, nvars: int, order: int):
        self.nvars = nvars
        self.order = order
        self.exps = _monomials(nvars, order)
        self.size = len(self.exps)
        self.degrees = self.exps.sum(axis=1)
        # prefix lengths: number of monomials of degree <= d
        self.prefix = np.searchsorted(self.degrees, np.arange(order + 2), side="left")
        self._radix = order + 1
        self._weights = self._radix ** np.arange(nvars, dtype=np.int64)
        keys = self.exps @ self._weights
        self._sorter = np.argsort(keys)
        self._sorted_keys = keys[self._sorter]
        self.index = {tuple(int(x) for x in e): i for i, e in enumerate(self.exps)}
        self._mul = None
        self._deriv: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def lookup(self, exps: np.ndarray) -> np.ndarray:
        """Indices of the given exponent rows (all must have degree <= order)."""
        keys = np.asarray(exps, dtype=np.int64) @ self._weights
        pos = np.searchsorted(self._sorted_keys, keys)
        return self._sorter[pos]

    @property
    def mul_table(self):
        """Pairs ``(i, j)`` with ``deg i + deg j <= order`` grouped by target index."""
        if self._mul is None:
            I_parts, J_parts = [], []
            for i in range(self.size):
                m = self.prefix[self.order - self.degrees[i] + 1]
                I_parts.append(np.full(m, i, dtype=np.int64))
                J_parts.append(np.arange(m, dtype=np.int64))
            I = np.concatenate(I_parts)
            J = np.concatenate(J_parts)
            K = self.lookup(self.exps[I] + self.exps[J])
            perm = np.argsort(K, kind="stable")
            I, J, K = I[perm], J[perm], K[perm]
            starts = np.searchsorted(K, np.arange(self.size))
            self._mul = (I, J, starts)
        return self._mul

    def derivative_table(self, var: int):
        """``(src, factor)`` such that ``d/dz_var`` of a jet of this order has
        coefficient ``factor[t] * c[src[t]]`` at index ``t`` (order - 1 basis)."""
        if var not in self._deriv:
            m = self.prefix[self.order]  # monomials of degree <= order - 1
            e = self.exps[:m].copy()
            factor = e[:, var] + 1
            e[:, var] += 1
            self._deriv[var] = (self.lookup(e), factor.astype(float))
        return self._deriv[var]


@lru_cache(maxsize=None)
def basis(nvars: int, order: int) -> Basis:
    if nvars < 1:
        raise ValueError("a jet needs at least one variable")
    if order < 0:
        raise ValueError("order must be non-negative")
    return Basis(nvars, order)


def _size(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


# ---------------------------------------------------------------------------
# Jet


class Jet:
    """Truncated Taylor expansion, possibly batched over leading axes.

    Parameters
    ----------
    nvars : number of expansion variables.
    coeffs : array of shape ``batch + (M,)`` with ``M`` the basis size for ``order``.
    order : maximal stored total degree.
    valid_order : degree up to which the coefficients are exact (``<= order``).
    """

    __slots__ = ("nvars", "order", "valid_order", "coeffs")
    __array_priority__ = 100  # make numpy defer to Jet.__rmul__ etc.

    def __init__(self, nvars: int, coeffs, order: int, valid_order: int | None = None):
        coeffs = np.asarray(coeffs)
        if coeffs.dtype.kind not in "fc":
            coeffs = coeffs.astype(float)
        if valid_order is None:
            valid_order = order
        if not 0 <= valid_order <= order:
            raise ValueError(f"valid_order {valid_order} outside [0, {order}]")
        if coeffs.shape[-1:] != (_size(nvars, order),):
            raise ValueError(
                f"coefficient axis has length {coeffs.shape[-1:]}, expected {_size(nvars, order)}"
            )
        self.nvars = nvars
        self.order = order
        self.valid_order = valid_order
        self.coeffs = coeffs

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, nvars: int, order: int, shape: tuple = (), dtype=float) -> "Jet":
        return cls(nvars, np.zeros(tuple(shape) + (_size(nvars, order),), dtype=dtype), order)

    @classmethod
    def constant(cls, nvars: int, value, order: int) -> "Jet":
        value = np.asarray(value)
        c = np.zeros(value.shape + (_size(nvars, order),), dtype=np.result_type(value, float))
        c[..., 0] = value
        return cls(nvars, c, order)

    @classmethod
    def variable(cls, nvars: int, var: int, value: float, order: int) -> "Jet":
        """The coordinate function ``z_var`` expanded around ``z_var = value``."""
        c = np.zeros(_size(nvars, order))
        c[0] = value
        if order >= 1:
            c[1 + var] = 1.0
        return cls(nvars, c, order)

    @classmethod
    def variables(cls, point: Sequence[float], order: int) -> list["Jet"]:
        n = len(point)
        return [cls.variable(n, i, float(v), order) for i, v in enumerate(point)]

    @classmethod
    def from_terms(cls, nvars: int, terms: Mapping[tuple, complex], order: int) -> "Jet":
        """Polynomial in the shifted variables given as ``{exponents: coefficient}``."""
        b = basis(nvars, order)
        dtype = complex if any(isinstance(v, complex) for v in terms.values()) else float
        c = np.zeros(b.size, dtype=dtype)
        for e, v in terms.items():
            e = tuple(e)
            if len(e) != nvars:
                raise DimensionMismatch(f"exponent {e} has wrong length for {nvars} variables")
            if sum(e) <= order:
                c[b.index[e]] += v
        return cls(nvars, c, order)

    @classmethod
    def random_polynomial(
        cls, rng: np.random.Generator, nvars: int, degree: int, order: int, complex_: bool = False
    ) -> "Jet":
        """Random polynomial of the given degree in the shifted variables,
        coefficients uniform in [-1, 1]."""
        b = basis(nvars, order)
        m = b.prefix[min(degree, order) + 1]
        c = np.zeros(b.size, dtype=complex if complex_ else float)
        c[:m] = rng.uniform(-1.0, 1.0, m)
        if complex_:
            c[:m] += 1j * rng.uniform(-1.0, 1.0, m)
        return cls(nvars, c, order)

    @classmethod
    def stack(cls, jets: Sequence["Jet"], axis: int = 0) -> "Jet":
        jets = list(jets)
        if not jets:
            raise ValueError("cannot stack an empty sequence")
        n = jets[0].nvars
        if any(j.nvars != n for j in jets):
            raise DimensionMismatch("stacked jets have different variable counts")
        v = min(j.valid_order for j in jets)
        arrays = [j.truncate(v).coeffs for j in jets]
        if axis < 0:
            axis += arrays[0].ndim
        return cls(n, np.stack(arrays, axis=axis), v)

    @classmethod
    def build(cls, nested) -> "Jet":
        """Stack a nested list of jets (all with equal batch shape) into one batched jet."""
        if isinstance(nested, Jet):
            return nested
        return cls.stack([cls.build(x) for x in nested])

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def dtype(self):
        return self.coeffs.dtype

    @property
    def value(self):
        """Value at the expansion point (degree-0 coefficient)."""
        v = self.coeffs[..., 0]
        return v if v.ndim else v.item()

    def __len__(self):
        if not self.shape:
            raise TypeError("scalar jet has no length")
        return self.shape[0]

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.nvars, self.coeffs[idx + (Ellipsis, slice(None))], self.order, self.valid_order)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        shape = f", shape={self.shape}" if self.shape else ""
        return f"Jet(nvars={self.nvars}, order={self.order}, valid_order={self.valid_order}{shape})"

    def coefficient(self, exponents: Sequence[int]):
        """Taylor coefficient of the shifted monomial with these exponents."""
        e = tuple(int(x) for x in exponents)
        if len(e) != self.nvars:
            raise DimensionMismatch(f"multi-index {e} has wrong length for {self.nvars} variables")
        if sum(e) > self.valid_order:
            raise BudgetExhausted(
                f"coefficient of degree {sum(e)} requested beyond valid_order {self.valid_order}"
            )
        c = self.coeffs[..., basis(self.nvars, self.order).index[e]]
        return c if c.ndim else c.item()

    def derivative_value(self, exponents: Sequence[int]):
        """Mixed partial derivative at the expansion point."""
        scale = math.prod(math.factorial(int(k)) for k in exponents)
        return self.coefficient(exponents) * scale

    def truncate(self, order: int) -> "Jet":
        if order > self.valid_order:
            raise BudgetExhausted(f"cannot extend a jet of valid_order {self.valid_order} to {order}")
        if order == self.order:
            return self
        return Jet(self.nvars, self.coeffs[..., : _size(self.nvars, order)], order)

    def compact(self) -> "Jet":
        """Drop stored coefficients beyond ``valid_order``."""
        return self.truncate(self.valid_order)

    def map_coeffs(self, fn) -> "Jet":
        """Apply a linear map to the batch axes (``fn`` acts on the coefficient array)."""
        return Jet(self.nvars, fn(self.coeffs), self.order, self.valid_order)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.map_coeffs(lambda c: c.reshape(tuple(shape) + c.shape[-1:]))

    def transpose(self, *axes) -> "Jet":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        nb = len(self.shape)
        return self.map_coeffs(lambda c: c.transpose(tuple(axes) + (nb,)))

    def sum(self, axis=None) -> "Jet":
        nb = len(self.shape)
        if axis is None:
            axis = tuple(range(nb))
        return self.map_coeffs(lambda c: c.sum(axis=axis))

    def conj(self) -> "Jet":
        return self.map_coeffs(np.conj)

    @property
    def real(self) -> "Jet":
        return self.map_coeffs(lambda c: np.ascontiguousarray(c.real))

    def max_abs(self) -> float:
        c = self.compact().coeffs
        return float(np.max(np.abs(c))) if c.size else 0.0

    # -- arithmetic ---------------------------------------------------------

    def _check(self, other: "Jet"):
        if self.nvars != other.nvars:
            raise DimensionMismatch(f"jets over {self.nvars} and {other.nvars} variables")

    def _aligned(self, other: "Jet"):
        self._check(other)
        v = min(self.valid_order, other.valid_order)
        return v, self.truncate(v).coeffs, other.truncate(v).coeffs

    def __add__(self, other):
        if isinstance(other, Jet):
            v, a, b = self._aligned(other)
            return Jet(self.nvars, a + b, v)
        if np.ndim(other) == 0:
            a = self.compact().coeffs.astype(np.result_type(self.coeffs, other), copy=True)
            a[..., 0] += other
            return Jet(self.nvars, a, self.valid_order)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self.map_coeffs(np.negative)

    def __sub__(self, other):
        if isinstance(other, Jet):
            v, a, b = self._aligned(other)
            return Jet(self.nvars, a - b, v)
        if np.ndim(other) == 0:
            return self + (-other)
        return NotImplemented

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        if np.ndim(other) == 0:
            return self.map_coeffs(lambda c: c * other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.inverse()
        if np.ndim(other) == 0:
            return self.map_coeffs(lambda c: c / other)
        return NotImplemented

    def __rtruediv__(self, other):
        if np.ndim(other) == 0:
            return self.inverse() * other
        return NotImplemented

    def __pow__(self, n):
        if isinstance(n, (int, np.integer)):
            if n < 0:
                return self.inverse() ** (-n)
            result = Jet.constant(self.nvars, np.ones(self.shape), self.valid_order)
            base = self
            while n:
                if n & 1:
                    result = result * base
                base = base * base if n > 1 else base
                n >>= 1
            return result
        return NotImplemented

    def scale(self, factors) -> "Jet":
        """Multiply each batch entry by a number (``factors`` broadcasts against ``shape``)."""
        f = np.asarray(factors)
        return self.map_coeffs(lambda c: c * f[..., None])

    def partial(self, var: int, times: int = 1) -> "Jet":
        out = self
        for _ in range(times):
            out = jet_partial(out, var)
        return out

    def gradient(self) -> "Jet":
        """All first partials stacked on a new trailing batch axis."""
        return Jet.stack([jet_partial(self, v) for v in range(self.nvars)], axis=-1)

    def inverse(self) -> "Jet":
        return jet_inverse(self)

    def sqrt(self) -> "Jet":
        return jet_sqrt(self)

    def apply_series(self, taylor: np.ndarray) -> "Jet":
        """Compose a univariate Taylor series (given at this jet's constant term) with self."""
        return _univariate_compose(self, taylor)

    # -- comparisons ---------------------------------------------------------

    def allclose(self, other: "Jet", tol: float = 1e-9) -> bool:
        return defect(self, other) <= tol


# ---------------------------------------------------------------------------
# core operations


def jet_add(a: Jet, b: Jet) -> Jet:
    return a + b


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Truncated Cauchy product, broadcasting over batch axes."""
    v, ca, cb = a._aligned(b)
    I, J, starts = basis(a.nvars, v).mul_table
    prod = ca[..., I] * cb[..., J]
    return Jet(a.nvars, np.add.reduceat(prod, starts, axis=-1), v)


# products gathered per chunk in contract(); tests lower it to exercise chunking
CONTRACT_BUDGET = 4_000_000


def _pairwise(sa: str, sb: str, out: str, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``einsum(f"Z{sa},Z{sb}->Z{out}")`` routed through a batched matmul.

    The leading pair axis ``Z`` is shared by both operands, which defeats
    einsum's BLAS path; grouping the axes by role turns the contraction into
    one ``matmul`` over a stack of small matrices.
    """
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb) or not set(out) <= set(sa) | set(sb):
        return np.einsum(f"Z{sa},Z{sb}->Z{out}", A, B)
    # indices private to one operand and absent from the output are summed first
    for letters, arr, other in ((sa, "A", sb), (sb, "B", sa)):
        drop = [i + 1 for i, c in enumerate(letters) if c not in out and c not in other]
        if drop:
            if arr == "A":
                A = A.sum(axis=tuple(drop))
                sa = "".join(c for c in sa if c in out or c in sb)
            else:
                B = B.sum(axis=tuple(drop))
                sb = "".join(c for c in sb if c in out or c in sa)
    shared = [c for c in out if c in sa and c in sb]
    summed = [c for c in sa if c in sb and c not in out]
    free_a = [c for c in sa if c not in sb]
    free_b = [c for c in sb if c not in sa]
    dims = {c: A.shape[1 + sa.index(c)] for c in sa}
    dims.update({c: B.shape[1 + sb.index(c)] for c in sb})
    P = A.shape[0]

    def size(cs):
        return int(np.prod([dims[c] for c in cs], dtype=np.int64))

    At = A.transpose([0] + [1 + sa.index(c) for c in shared + free_a + summed])
    Bt = B.transpose([0] + [1 + sb.index(c) for c in shared + summed + free_b])
    At = At.reshape((P, size(shared), size(free_a), size(summed)))
    Bt = Bt.reshape((P, size(shared), size(summed), size(free_b)))
    R = np.matmul(At, Bt).reshape((P,) + tuple(dims[c] for c in shared + free_a + free_b))
    order = shared + free_a + free_b
    return R.transpose([0] + [1 + order.index(c) for c in out])


def contract(subscripts: str, a: Jet, b: Jet) -> Jet:
    """Einstein-summed product of two batched jets.

    ``subscripts`` refers to batch axes only, e.g. ``"cab,ijc->ijab"``.
    Large contractions are processed in chunks of target monomials to bound
    memory.
    """
    v, ca, cb = a._aligned(b)
    I, J, starts = basis(a.nvars, v).mul_table
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    Az = np.moveaxis(ca, -1, 0)
    Bz = np.moveaxis(cb, -1, 0)
    batch = max(1, ca.size // ca.shape[-1]) + max(1, cb.size // cb.shape[-1])
    step = max(1, CONTRACT_BUDGET // batch)
    bounds = np.append(starts, len(I))
    pieces = []
    t0 = 0
    while t0 < len(starts):
        # extend the block of targets while the number of pairs fits the budget
        t1 = int(np.searchsorted(bounds, bounds[t0] + step, side="right")) - 1
        t1 = min(max(t1, t0 + 1), len(starts))
        lo, hi = bounds[t0], bounds[t1]
        prod = _pairwise(sa, sb, out, Az[I[lo:hi]], Bz[J[lo:hi]])
        pieces.append(np.add.reduceat(prod, starts[t0:t1] - lo, axis=0))
        t0 = t1
    res = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=0)
    return Jet(a.nvars, np.ascontiguousarray(np.moveaxis(res, 0, -1)), v)


def jet_partial(a: Jet, var: int) -> Jet:
    if not 0 <= var < a.nvars:
        raise IndexError(f"variable {var} out of range for {a.nvars} variables")
    if a.valid_order < 1:
        raise BudgetExhausted("derivative budget exhausted (valid_order 0)")
    a = a.compact()
    src, factor = basis(a.nvars, a.order).derivative_table(var)
    return Jet(a.nvars, a.coeffs[..., src] * factor, a.order - 1)


def _univariate_compose(a: Jet, taylor) -> Jet:
    """``sum_k taylor[k] * (a - a0)^k`` by Horner's rule (taylor may be batched)."""
    a = a.compact()
    d = a.valid_order
    taylor = np.asarray(taylor)
    h_coeffs = a.coeffs.copy()
    h_coeffs[..., 0] = 0
    h = Jet(a.nvars, h_coeffs, d)
    c = taylor[..., d] if taylor.ndim > 1 else taylor[d]
    result = Jet.constant(a.nvars, np.broadcast_to(c, a.shape), d)
    for k in range(d - 1, -1, -1):
        c = taylor[..., k] if taylor.ndim > 1 else taylor[k]
        result = Jet(a.nvars, _add_const((result * h).coeffs, c), d)
    return result


def _add_const(coeffs: np.ndarray, c) -> np.ndarray:
    out = coeffs.astype(np.result_type(coeffs, np.asarray(c)), copy=True)
    out[..., 0] += c
    return out


def jet_inverse(a: Jet) -> Jet:
    """Multiplicative inverse; the constant term must be non-zero."""
    c0 = np.asarray(a.coeffs[..., 0])
    if np.any(c0 == 0):
        raise JetDomainError("inverse of a jet with zero constant term")
    d = a.valid_order
    k = np.arange(d + 1)
    taylor = (-1.0) ** k * np.asarray(c0)[..., None] ** (-(k + 1))
    return _univariate_compose(a, taylor)


def jet_sqrt(a: Jet) -> Jet:
    c0 = np.asarray(a.coeffs[..., 0])
    if np.iscomplexobj(c0):
        if np.any(np.abs(c0.imag) > 0):
            raise JetDomainError("sqrt of a jet with complex constant term")
        c0 = c0.real
    if np.any(c0 <= 0):
        raise JetDomainError("sqrt of a jet with non-positive constant term")
    d = a.valid_order
    coef = np.array([_binom_general(0.5, k) for k in range(d + 1)])
    taylor = coef * c0[..., None] ** (0.5 - np.arange(d + 1))
    return _univariate_compose(a, taylor)


def _binom_general(alpha: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (alpha - j) / (j + 1)
    return out


def jet_compose(f: Jet, phi: Sequence[Jet], at: Sequence[float], atol: float = 1e-10) -> Jet:
    """Taylor expansion of ``f o phi``.

    ``f`` is expanded around ``at`` (one value per variable of ``f``); ``phi`` is
    a sequence of scalar jets whose constant terms must equal ``at``.
    """
    phi = list(phi)
    if len(phi) != f.nvars or len(at) != f.nvars:
        raise DimensionMismatch(f"f has {f.nvars} variables but {len(phi)} component maps were given")
    n = phi[0].nvars
    for p, y0 in zip(phi, at):
        if p.nvars != n:
            raise DimensionMismatch("component maps live on different variable counts")
        if p.shape:
            raise DimensionMismatch("component maps must be scalar jets")
        if abs(p.value - y0) > atol * max(1.0, abs(y0)):
            raise ExpansionPointMismatch(
                f"component value {p.value} does not match expansion point {y0}"
            )
    d = min([f.valid_order] + [p.valid_order for p in phi])
    hs = []
    for p, y0 in zip(phi, at):
        c = p.truncate(d).coeffs.copy()
        c[0] = 0.0
        hs.append(Jet(n, c, d))
    bf = basis(f.nvars, d)
    fc = f.truncate(d).coeffs
    # monomials above the highest nonzero degree of f never contribute
    nz = np.flatnonzero(fc)
    top = int(bf.degrees[nz].max()) if nz.size else 0
    count = int(bf.prefix[top + 1])
    powers = np.zeros((count, _size(n, d)), dtype=np.result_type(*[h.coeffs for h in hs]))
    powers[0, 0] = 1.0
    cache: list[Jet] = [Jet.constant(n, 1.0, d)]
    for idx in range(1, count):
        e = bf.exps[idx]
        v = int(np.flatnonzero(e)[0])
        e_prev = e.copy()
        e_prev[v] -= 1
        m = cache[bf.index[tuple(int(x) for x in e_prev)]] * hs[v]
        cache.append(m)
        powers[idx] = m.coeffs
    return Jet(n, fc[:count] @ powers, d)


def matrix_inverse(m: Jet) -> Jet:
    """Inverse of a square matrix of jets (batch shape ``(k, k)``)."""
    k = m.shape[-1]
    if m.shape[-2:] != (k, k) or len(m.shape) != 2:
        raise DimensionMismatch("matrix_inverse expects a jet of batch shape (k, k)")
    m = m.compact()
    d = m.valid_order
    m0 = m.coeffs[..., 0]
    if abs(np.linalg.det(m0)) < 1e-300:
        raise JetDomainError("singular matrix at the expansion point")
    inv0 = np.linalg.inv(m0)
    h = m.coeffs.copy()
    h[..., 0] = 0
    # (M0 + H)^-1 = sum_k (-M0^-1 H)^k M0^-1, nilpotent to order d
    n_op = Jet(m.nvars, -np.einsum("ij,jkz->ikz", inv0, h), d)
    term = Jet.constant(m.nvars, inv0, d)
    total = term
    for _ in range(d):
        term = contract("ij,jk->ik", n_op, term)
        total = total + term
    return total


def determinant(m: Jet) -> Jet:
    """Determinant of a small square matrix of jets by cofactor expansion."""
    k = m.shape[-1]
    if k == 1:
        return m[0, 0]
    total = None
    for j in range(k):
        rows = [r for r in range(1, k)]
        cols = [c for c in range(k) if c != j]
        minor = Jet(m.nvars, m.coeffs[np.ix_(rows, cols)], m.order, m.valid_order)
        term = m[0, j] * determinant(minor)
        if j % 2:
            term = -term
        total = term if total is None else total + term
    return total


def defect(a: Jet, b: Jet | None = None) -> float:
    """Relative coefficient defect up to the common valid order.

    ``max|a - b| / max(1, max|a|, max|b|)``: absolute for small quantities,
    relative for large ones.
    """
    if b is None:
        return a.max_abs()
    diff = (a - b).max_abs()
    v = min(a.valid_order, b.valid_order)
    scale = max(1.0, a.truncate(v).max_abs(), b.truncate(v).max_abs())
    return diff / scale


# ---------------------------------------------------------------------------
# series in hbar


@dataclass(frozen=True)
class HbarSeries:
    """Polynomial in hbar with jet coefficients, truncated after ``hbar**K``."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("an hbar series needs at least the hbar^0 term")
        n = terms[0].nvars
        if any(t.nvars != n for t in terms):
            raise DimensionMismatch("hbar coefficients live on different variable counts")
        object.__setattr__(self, "terms", terms)

    @property
    def K(self) -> int:
        return len(self.terms) - 1

    @property
    def nvars(self) -> int:
        return self.terms[0].nvars

    @classmethod
    def from_jet(cls, jet: Jet, K: int, power: int = 0) -> "HbarSeries":
        """``hbar**power * jet`` as a series truncated at ``K``."""
        zero = Jet.zeros(jet.nvars, jet.valid_order, jet.shape)
        return cls(tuple(jet if k == power else zero for k in range(K + 1)))

    def __getitem__(self, k: int) -> Jet:
        return self.terms[k]

    def _check(self, other: "HbarSeries"):
        if self.K != other.K:
            raise DimensionMismatch(f"hbar truncations differ: {self.K} vs {other.K}")
        if self.nvars != other.nvars:
            raise DimensionMismatch("hbar series over different variable counts")

    def __add__(self, other: "HbarSeries") -> "HbarSeries":
        self._check(other)
        return HbarSeries(tuple(a + b for a, b in zip(self.terms, other.terms)))

    def __sub__(self, other: "HbarSeries") -> "HbarSeries":
        self._check(other)
        return HbarSeries(tuple(a - b for a, b in zip(self.terms, other.terms)))

    def __neg__(self) -> "HbarSeries":
        return HbarSeries(tuple(-a for a in self.terms))

    def __mul__(self, other):
        if isinstance(other, HbarSeries):
            return series_mul(self, other)
        return series_scale(self, other)

    __rmul__ = __mul__

    def map(self, fn) -> "HbarSeries":
        return HbarSeries(tuple(fn(t) for t in self.terms))

    def truncate_hbar(self, K: int) -> "HbarSeries":
        if K > self.K:
            zero = Jet.zeros(self.nvars, self.terms[-1].valid_order, self.terms[0].shape)
            return HbarSeries(self.terms + (zero,) * (K - self.K))
        return HbarSeries(self.terms[: K + 1])

    def shift(self, power: int) -> "HbarSeries":
        """Multiply by ``hbar**power`` keeping the truncation."""
        zero = Jet.zeros(self.nvars, self.terms[0].valid_order, self.terms[0].shape)
        return HbarSeries(((zero,) * power + self.terms)[: self.K + 1])

    def evaluate(self, hbar: float) -> Jet:
        total = self.terms[0]
        for k, t in enumerate(self.terms[1:], start=1):
            total = total + t * hbar**k
        return total

    def defects(self, other: "HbarSeries | None" = None) -> list[float]:
        """Per-order relative defect against ``other`` (or max |coefficient| if None)."""
        if other is None:
            return [t.max_abs() for t in self.terms]
        self._check(other)
        return [defect(a, b) for a, b in zip(self.terms, other.terms)]


def series_add(a: HbarSeries, b: HbarSeries) -> HbarSeries:
    return a + b


def series_scale(a: HbarSeries, factor) -> HbarSeries:
    return a.map(lambda t: t * factor)


def series_mul(a: HbarSeries, b: HbarSeries) -> HbarSeries:
    a._check(b)
    out = []
    for k in range(a.K + 1):
        acc = a.terms[0] * b.terms[k]
        for j in range(1, k + 1):
            acc = acc + a.terms[j] * b.terms[k - j]
        out.append(acc)
    return HbarSeries(tuple(out))


def univariate_taylor(name: str, x0: float, order: int) -> np.ndarray:
    """Taylor coefficients of elementary functions at ``x0``."""
    k = np.arange(order + 1)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    if name == "exp":
        return math.exp(x0) / fact
    if name == "sin":
        cyc = np.array([math.sin(x0), math.cos(x0), -math.sin(x0), -math.cos(x0)])
        return cyc[k % 4] / fact
    if name == "cos":
        cyc = np.array([math.cos(x0), -math.sin(x0), -math.cos(x0), math.sin(x0)])
        return cyc[k % 4] / fact
    if name == "ln":
        if x0 <= 0:
            raise JetDomainError(f"ln of non-positive value {x0}")
        out = np.empty(order + 1)
        out[0] = math.log(x0)
        kk = k[1:]
        out[1:] = (-1.0) ** (kk + 1) / (kk * x0**kk)
        return out
    raise ValueError(f"no Taylor rule for {name!r}")


def jet_function(name: str, a: Jet) -> Jet:
    """Apply an elementary function to a scalar jet with real constant term."""
    x0 = a.value
    if isinstance(x0, complex):
        if x0.imag != 0:
            raise JetDomainError(f"{name} of a complex-valued jet")
        x0 = x0.real
    if name == "sqrt":
        return jet_sqrt(a)
    if name == "tan":
        return jet_function("sin", a) * jet_function("cos", a).inverse()
    return _univariate_compose(a, univariate_taylor(name, float(x0), a.valid_order))


def embed(a: Jet, nvars: int, positions: Sequence[int]) -> Jet:
    """View a jet as a function of more variables: variable ``i`` of ``a`` becomes
    variable ``positions[i]`` of the result; the others do not appear."""
    a = a.compact()
    src = basis(a.nvars, a.order)
    dst = basis(nvars, a.order)
    e = np.zeros((src.size, nvars), dtype=np.int64)
    e[:, list(positions)] = src.exps
    idx = dst.lookup(e)
    c = np.zeros(a.shape + (dst.size,), dtype=a.dtype)
    c[..., idx] = a.coeffs
    return Jet(nvars, c, a.order)


def restrict(a: Jet, keep: Sequence[int], fixed_exponents: Mapping[int, int] | None = None) -> Jet:
    """Coefficient slice: the jet in variables ``keep`` multiplying the monomial
    ``prod z_v**k`` of the remaining variables (``fixed_exponents``, default 0)."""
    a = a.compact()
    fixed_exponents = dict(fixed_exponents or {})
    fixed_deg = sum(fixed_exponents.values())
    d = a.valid_order - fixed_deg
    if d < 0:
        raise BudgetExhausted("requested slice lies beyond valid_order")
    k = len(keep)
    dst = basis(k, d)
    e = np.zeros((dst.size, a.nvars), dtype=np.int64)
    e[:, list(keep)] = dst.exps
    for v, p in fixed_exponents.items():
        e[:, v] = p
    idx = basis(a.nvars, a.order).lookup(e)
    return Jet(k, a.coeffs[..., idx], d)


def polynomial_terms(iterable: Iterable[tuple[tuple, complex]]) -> dict:
    out: dict = {}
    for e, v in iterable:
        out[tuple(e)] = out.get(tuple(e), 0) + v
    return out
