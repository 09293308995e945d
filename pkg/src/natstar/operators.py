"""Linear differential operators with jet coefficients, kept in normal form.

An operator is a finite sum ``sum hbar**h * c_{h,alpha}(z) d^alpha`` with all
derivatives to the right of the coefficients.  The same class serves phase
space (2N variables) and configuration space (N variables).
"""
from __future__ import annotations

import math
from itertools import product
from typing import Callable, Iterable, Mapping

import numpy as np

from .jets import BudgetExhausted, DimensionMismatch, Jet, defect

__all__ = ["DiffOperator", "derivative", "DerivativeCache"]


def _binom_multi(alpha, gamma) -> int:
    return math.prod(math.comb(a, g) for a, g in zip(alpha, gamma))


class DerivativeCache:
    """Memoized mixed partials of one jet, built one derivative at a time."""

    def __init__(self, f: Jet):
        self.f = f
        self._cache = {(0,) * f.nvars: f}

    def __call__(self, alpha) -> Jet:
        alpha = tuple(int(a) for a in alpha)
        hit = self._cache.get(alpha)
        if hit is not None:
            return hit
        v = max(i for i, a in enumerate(alpha) if a)
        prev = list(alpha)
        prev[v] -= 1
        out = self(tuple(prev)).partial(v)
        self._cache[alpha] = out
        return out


def derivative(f: Jet, alpha) -> Jet:
    return DerivativeCache(f)(alpha)


class DiffOperator:
    """Normal-form differential operator; terms map ``(hbar_power, alpha) -> Jet``."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping | None = None):
        self.nvars = nvars
        clean = {}
        for (h, alpha), c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != nvars:
                raise DimensionMismatch(f"multi-index {alpha} for {nvars} variables")
            if c.nvars != nvars or c.shape:
                raise DimensionMismatch("operator coefficients must be scalar jets on the same variables")
            key = (int(h), alpha)
            clean[key] = clean[key] + c if key in clean else c
        self.terms = clean

    # -- constructors -------------------------------------------------------

    @classmethod
    def identity(cls, nvars: int, order: int) -> "DiffOperator":
        return cls.multiplication(Jet.constant(nvars, 1.0, order))

    @classmethod
    def multiplication(cls, c: Jet, hbar_power: int = 0) -> "DiffOperator":
        return cls(c.nvars, {(hbar_power, (0,) * c.nvars): c})

    @classmethod
    def partial(cls, nvars: int, var: int, order: int, coeff=1.0, hbar_power: int = 0) -> "DiffOperator":
        alpha = [0] * nvars
        alpha[var] = 1
        return cls(nvars, {(hbar_power, tuple(alpha)): Jet.constant(nvars, coeff, order)})

    @classmethod
    def from_tensor(cls, coeff: Jet, hbar_power: int = 0) -> "DiffOperator":
        """``coeff[a1..ak] d_a1 ... d_ak`` for a batched jet of shape ``(n,)*k``."""
        n = coeff.nvars
        k = len(coeff.shape)
        if any(s != n for s in coeff.shape):
            raise DimensionMismatch(f"tensor shape {coeff.shape} does not match {n} variables")
        groups: dict[tuple, list] = {}
        for idx in product(range(n), repeat=k):
            alpha = [0] * n
            for i in idx:
                alpha[i] += 1
            groups.setdefault(tuple(alpha), []).append(idx)
        terms = {}
        for alpha, idxs in groups.items():
            arr = coeff.coeffs[tuple(np.array(idxs).T)] if k else coeff.coeffs[None]
            terms[(hbar_power, alpha)] = Jet(n, arr.sum(axis=0), coeff.order, coeff.valid_order)
        return cls(n, terms)

    # -- algebra -------------------------------------------------------------

    @property
    def order(self) -> int:
        """Highest derivative order appearing."""
        return max((sum(a) for _, a in self.terms), default=0)

    def hbar_powers(self) -> set:
        return {h for h, _ in self.terms}

    def __add__(self, other: "DiffOperator") -> "DiffOperator":
        if self.nvars != other.nvars:
            raise DimensionMismatch("operators on different variable counts")
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms[k] + c if k in terms else c
        return DiffOperator(self.nvars, terms)

    def __neg__(self) -> "DiffOperator":
        return self.scale(-1.0)

    def __sub__(self, other: "DiffOperator") -> "DiffOperator":
        return self + (-other)

    def scale(self, factor, hbar_shift: int = 0) -> "DiffOperator":
        return DiffOperator(
            self.nvars, {(h + hbar_shift, a): c * factor for (h, a), c in self.terms.items()}
        )

    def left_multiply(self, c: Jet) -> "DiffOperator":
        return DiffOperator(self.nvars, {k: c * v for k, v in self.terms.items()})

    def compose(self, other: "DiffOperator") -> "DiffOperator":
        """``self o other`` brought to normal form by the Leibniz rule."""
        if self.nvars != other.nvars:
            raise DimensionMismatch("operators on different variable counts")
        terms: dict = {}
        caches = {k: DerivativeCache(c) for k, c in other.terms.items()}
        for (ha, alpha), ca in self.terms.items():
            for gamma in product(*(range(a + 1) for a in alpha)):
                rest = tuple(a - g for a, g in zip(alpha, gamma))
                w = _binom_multi(alpha, gamma)
                for (hb, beta), cb in other.terms.items():
                    coeff = ca * caches[(hb, beta)](gamma)
                    if w != 1:
                        coeff = coeff * w
                    key = (ha + hb, tuple(r + b for r, b in zip(rest, beta)))
                    terms[key] = terms[key] + coeff if key in terms else coeff
        return DiffOperator(self.nvars, terms)

    __matmul__ = compose

    def conj(self) -> "DiffOperator":
        return DiffOperator(self.nvars, {k: c.conj() for k, c in self.terms.items()})

    def by_hbar(self) -> dict:
        out: dict = {}
        for (h, a), c in self.terms.items():
            out.setdefault(h, {})[a] = c
        return out

    # -- action -------------------------------------------------------------

    def apply_graded(self, f: Jet) -> dict:
        """Action on a scalar jet, returned as ``{hbar_power: Jet}``."""
        if f.nvars != self.nvars:
            raise DimensionMismatch("operator and argument live on different variables")
        need = self.order
        if f.valid_order < need:
            raise BudgetExhausted(f"operator of order {need} applied to jet of valid_order {f.valid_order}")
        d = DerivativeCache(f)
        out: dict = {}
        for (h, alpha), c in self.terms.items():
            t = c * d(alpha)
            out[h] = out[h] + t if h in out else t
        return out

    def apply(self, f: Jet, hbar: float = 1.0) -> Jet:
        graded = self.apply_graded(f)
        total = None
        for h, t in sorted(graded.items()):
            t = t * hbar**h if h else t
            total = t if total is None else total + t
        if total is None:
            return Jet.zeros(f.nvars, f.valid_order)
        return total

    def defect(self, other: "DiffOperator", degree: int | None = None) -> float:
        """Largest relative coefficient defect between two normal forms.

        ``degree`` limits the comparison to Taylor coefficients of at most that
        degree (``0`` compares values at the expansion point).
        """
        worst = 0.0
        for k in set(self.terms) | set(other.terms):
            a = self.terms.get(k)
            b = other.terms.get(k)
            if degree is not None:
                a = None if a is None else a.truncate(min(degree, a.valid_order))
                b = None if b is None else b.truncate(min(degree, b.valid_order))
            if a is None:
                worst = max(worst, defect(b))
            elif b is None:
                worst = max(worst, defect(a))
            else:
                worst = max(worst, defect(a, b))
        return worst

    def table(self, max_degree: int = 0) -> dict:
        """JSON-friendly coefficient table: ``"h^k d^alpha" -> Taylor coefficients``."""
        out = {}
        for (h, alpha), c in sorted(self.terms.items()):
            c = c.truncate(min(max_degree, c.valid_order))
            vals = np.atleast_1d(c.coeffs)
            out[f"hbar^{h} d^{list(alpha)}"] = {
                "re": [float(v) for v in np.real(vals)],
                "im": [float(v) for v in np.imag(vals)],
            }
        return out

    def __repr__(self) -> str:
        return f"DiffOperator(nvars={self.nvars}, terms={len(self.terms)}, order={self.order})"
