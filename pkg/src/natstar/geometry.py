"""Metric models, Levi-Civita data and lifted connections on phase space.

Index conventions used throughout the package:

* ``gamma[a, b, c]`` is the Christoffel symbol with upper index ``a``, slot
  index ``b`` and derivative direction ``c``: ``nabla_{e_c} e_b = gamma[a, b, c] e_a``.
* ``riemann[r, s, m, n] = d_m gamma[r, s, n] - d_n gamma[r, s, m]
  + gamma[r, l, m] gamma[l, s, n] - gamma[r, l, n] gamma[l, s, m]``
  ("standard" convention; "opposite" flips the overall sign).
* ``ricci[j, k] = riemann[i, j, i, k]``.
* Phase space coordinates are ``z = (x^1..x^N, p_1..p_N)``; the Poisson tensor is
  ``omega_up = [[0, I], [-I, 0]]`` and ``omega_down = -omega_up`` is its inverse,
  so that ``omega_up[a, d] omega_down[d, c] = delta[a, c]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .jets import (
    Jet,
    JetDomainError,
    contract,
    defect,
    determinant,
    embed,
    jet_compose,
    jet_sqrt,
    matrix_inverse,
)

__all__ = [
    "relative_curvature",
    "GeometryError",
    "SingularPoint",
    "NotFlat",
    "MetricModel",
    "CATALOG",
    "get_model",
    "model_from_config",
    "MetricJets",
    "metric_jets",
    "christoffel",
    "christoffel_from_map",
    "riemann",
    "ricci",
    "ConnectionField",
    "connection_field",
    "omega_up",
    "omega_down",
    "phase_variables",
    "LiftedConnection",
    "lift_flat",
    "lift_general",
    "AdoptedFrame",
    "adopted_frame",
    "frame_transform",
    "frame_transform_inverse",
    "PointTransformation",
    "point_transform",
    "poisson_bracket",
    "covariant_derivative",
]


class GeometryError(Exception):
    pass


class SingularPoint(GeometryError):
    """Metric or Jacobian degenerate at the evaluation point."""


class NotFlat(GeometryError):
    pass


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class MetricModel:
    """A chart with metric components given as expressions in the chart variables."""

    name: str
    variables: tuple
    metric: tuple  # N x N tuple of Expr, symmetric
    flat: bool
    sample_box: tuple  # ((lo, hi), ...) per variable
    to_cartesian: tuple | None = None
    singular: tuple = ()  # ((var_index, value), ...) hyperplanes to stay away from
    momentum_box: tuple = (-1.0, 1.0)
    source: Mapping | None = field(default=None, compare=False, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @classmethod
    def from_strings(
        cls,
        name: str,
        variables: Sequence[str],
        metric,
        flat: bool,
        sample_box,
        to_cartesian: Sequence[str] | None = None,
        singular=(),
        momentum_box=(-1.0, 1.0),
    ) -> "MetricModel":
        """Build a model from expression strings.

        ``metric`` is either a full N x N nested list or the upper triangle given
        row by row (row ``i`` holds the entries ``g_ii .. g_iN``).
        """
        variables = tuple(variables)
        n = len(variables)
        rows = [list(r) for r in metric]
        if len(rows) != n:
            raise GeometryError(f"metric needs {n} rows, got {len(rows)}")
        full = [[None] * n for _ in range(n)]
        if all(len(r) == n - i for i, r in enumerate(rows)) and n > 1 and len(rows[-1]) == 1:
            for i, r in enumerate(rows):
                for k, text in enumerate(r):
                    e = ex.parse(str(text), variables)
                    full[i][i + k] = e
                    full[i + k][i] = e
        elif all(len(r) == n for r in rows):
            for i in range(n):
                for j in range(n):
                    full[i][j] = ex.parse(str(rows[i][j]), variables)
            for i in range(n):
                for j in range(i + 1, n):
                    if full[i][j] != full[j][i]:
                        # symmetrize explicitly
                        avg = ex.BinOp("*", ex.Num(0.5), ex.BinOp("+", full[i][j], full[j][i]))
                        full[i][j] = full[j][i] = avg
        else:
            raise GeometryError("metric must be a full matrix or an upper triangle")
        box = tuple((float(lo), float(hi)) for lo, hi in sample_box)
        if len(box) != n:
            raise GeometryError(f"sample_box needs {n} intervals")
        cart = None
        if to_cartesian is not None:
            cart = tuple(ex.parse(str(t), variables) for t in to_cartesian)
            if len(cart) != n:
                raise GeometryError("to_cartesian must have one component per variable")
        return cls(
            name=name,
            variables=variables,
            metric=tuple(tuple(r) for r in full),
            flat=bool(flat),
            sample_box=box,
            to_cartesian=cart,
            singular=tuple((int(i), float(v)) for i, v in singular),
            momentum_box=tuple(float(v) for v in momentum_box),
            source={
                "name": name,
                "variables": list(variables),
                "metric": [list(map(str, r)) for r in metric],
                "flat": bool(flat),
                "sample_box": [list(b) for b in box],
                "to_cartesian": None if to_cartesian is None else list(to_cartesian),
            },
        )

    def sample_point(self, rng: np.random.Generator, margin: float = 0.1, tries: int = 1000) -> np.ndarray:
        """Uniform point in the sample box, at least ``margin`` away from singular loci."""
        lo = np.array([b[0] for b in self.sample_box])
        hi = np.array([b[1] for b in self.sample_box])
        for _ in range(tries):
            x = rng.uniform(lo, hi)
            if all(abs(x[i] - v) >= margin for i, v in self.singular):
                return x
        raise GeometryError(f"could not sample a regular point for {self.name}")

    def sample_phase_point(self, rng: np.random.Generator, margin: float = 0.1):
        x = self.sample_point(rng, margin)
        p = rng.uniform(*self.momentum_box, size=self.dimension)
        return x, p

    def point_transformation(self) -> "PointTransformation":
        if self.to_cartesian is None:
            raise GeometryError(f"model {self.name} has no map to Cartesian coordinates")
        return PointTransformation(self.variables, self.to_cartesian)


def _catalog() -> dict:
    pi = math.pi
    models = [
        MetricModel.from_strings(
            "euclidean-cartesian", ["x", "y"], [["1", "0"], ["1"]], True,
            [(-2, 2), (-2, 2)], to_cartesian=["x", "y"],
        ),
        MetricModel.from_strings(
            "euclidean-cartesian-3d", ["x", "y", "z"], [["1", "0", "0"], ["1", "0"], ["1"]], True,
            [(-2, 2), (-2, 2), (-2, 2)], to_cartesian=["x", "y", "z"],
        ),
        MetricModel.from_strings(
            "euclidean-polar", ["r", "theta"], [["1", "0"], ["r^2"]], True,
            [(0.5, 3.0), (-3.0, 3.0)], to_cartesian=["r*cos(theta)", "r*sin(theta)"],
            singular=[(0, 0.0)],
        ),
        MetricModel.from_strings(
            "euclidean-spherical", ["r", "theta", "phi"],
            [["1", "0", "0"], ["r^2", "0"], ["r^2*sin(theta)^2"]], True,
            [(0.75, 3.0), (0.5, pi - 0.5), (-3.0, 3.0)],
            to_cartesian=["r*sin(theta)*cos(phi)", "r*sin(theta)*sin(phi)", "r*cos(theta)"],
            singular=[(0, 0.0), (1, 0.0), (1, pi)],
        ),
        MetricModel.from_strings(
            "unit-sphere", ["theta", "phi"], [["1", "0"], ["sin(theta)^2"]], False,
            [(0.5, pi - 0.5), (-3.0, 3.0)], singular=[(0, 0.0), (0, pi)],
        ),
        MetricModel.from_strings(
            "hyperbolic-half-plane", ["x", "y"], [["1/y^2", "0"], ["1/y^2"]], False,
            [(-2.0, 2.0), (0.5, 2.0)], singular=[(1, 0.0)],
        ),
    ]
    return {m.name: m for m in models}


CATALOG = _catalog()


def get_model(name: str) -> MetricModel:
    try:
        return CATALOG[name]
    except KeyError:
        raise GeometryError(f"unknown model {name!r}; catalog: {', '.join(sorted(CATALOG))}") from None


def model_from_config(cfg: Mapping) -> MetricModel:
    """Build a model from a config mapping (see README for the schema)."""
    try:
        variables = cfg["variables"]
        n = int(cfg.get("dimension", len(variables)))
        if n != len(variables):
            raise GeometryError(f"dimension {n} does not match {len(variables)} variables")
        box = cfg.get("sample_box") or [(-1.0, 1.0)] * n
        return MetricModel.from_strings(
            cfg.get("name", "custom"),
            variables,
            cfg["metric"],
            bool(cfg.get("flat", False)),
            box,
            to_cartesian=cfg.get("to_cartesian"),
            singular=cfg.get("singular", ()),
        )
    except KeyError as exc:
        raise GeometryError(f"model config is missing key {exc.args[0]!r}") from None


# ---------------------------------------------------------------------------
# metric and curvature jets


@dataclass(frozen=True)
class MetricJets:
    g: Jet  # shape (N, N)
    ginv: Jet
    sqrt_det: Jet  # sqrt|det g|
    det: Jet


def metric_jets(model: MetricModel, x0: Sequence[float], order: int) -> MetricJets:
    n = model.dimension
    if len(x0) != n:
        raise GeometryError(f"point has {len(x0)} coordinates, model {model.name} needs {n}")
    try:
        rows = [[ex.eval_jet(model.metric[i][j], x0, order) for j in range(n)] for i in range(n)]
    except ex.ExprDomainError as exc:
        raise SingularPoint(f"metric not defined at {list(x0)}: {exc.message}") from None
    g = Jet.build(rows)
    det = determinant(g)
    if abs(det.value) < 1e-12:
        raise SingularPoint(f"metric of {model.name} is degenerate at {list(x0)}")
    ginv = matrix_inverse(g)
    sqrt_det = jet_sqrt(det if det.value > 0 else -det)
    return MetricJets(g, ginv, sqrt_det, det)


def christoffel(mj: MetricJets) -> Jet:
    """Levi-Civita symbols ``gamma[i, j, k]`` from metric jets."""
    dg = mj.g.gradient()  # dg[l, k, j] = d_j g_lk
    lower = (dg.transpose(0, 2, 1) + dg - dg.transpose(2, 0, 1)) * 0.5
    return contract("il,ljk->ijk", mj.ginv, lower)


def christoffel_from_map(phi: Sequence[Jet]) -> Jet:
    """Symbols of the flat connection in coordinates ``x = phi(x')``:
    ``gamma^i_jk = (phi'^-1)^i_r d_j d_k phi^r``."""
    phi = Jet.stack(list(phi))
    jac = phi.gradient()  # [r, j]
    hess = jac.gradient()  # [r, j, k]
    return contract("ir,rjk->ijk", matrix_inverse(jac), hess)


def riemann(gamma: Jet, convention: str = "standard") -> Jet:
    dG = gamma.gradient()  # dG[r, s, n, m] = d_m gamma[r, s, n]
    quad = contract("rlm,lsn->rsmn", gamma, gamma)
    R = dG.transpose(0, 1, 3, 2) - dG + quad - quad.transpose(0, 1, 3, 2)
    if convention == "standard":
        return R
    if convention == "opposite":
        return -R
    raise ValueError(f"unknown curvature convention {convention!r}")


def relative_curvature(gamma: Jet, R: Jet) -> float:
    """``max|R|`` relative to the two pieces that cancel in it, ``d Gamma`` and ``Gamma Gamma``.

    High-order Taylor coefficients of a flat connection in curvilinear charts
    are large, so an absolute threshold would misjudge flatness.
    """
    scale = max(1.0, gamma.gradient().max_abs(), gamma.max_abs() ** 2)
    return R.max_abs() / scale


def ricci(R: Jet, contraction: str = "first-third") -> Jet:
    """Ricci tensor; "first-third" is ``R^i_{jik}``, "first-fourth" is ``R^i_{jki}``."""
    if contraction == "first-third":
        return R.map_coeffs(lambda c: np.einsum("ijik...->jk...", c))
    if contraction == "first-fourth":
        return R.map_coeffs(lambda c: np.einsum("ijki...->jk...", c))
    raise ValueError(f"unknown Ricci contraction {contraction!r}")


def covariant_derivative(T: Jet, gamma: Jet, kinds: str) -> Jet:
    """Covariant derivative of a tensor of jets; a new lower axis is appended.

    ``kinds`` has one letter per axis of ``T``: ``u`` (upper) or ``l`` (lower).
    """
    if len(kinds) != len(T.shape):
        raise ValueError("one index kind per tensor axis is required")
    out = T.gradient()
    k = len(kinds)
    letters = "abcdefghijkl"[:k]
    for s, kind in enumerate(kinds):
        swapped = letters[:s] + "y" + letters[s + 1:]
        if kind == "u":
            # + gamma[a_s, y, b] T[.., y, ..]
            out = out + contract(f"{letters[s]}yz,{swapped}->{letters}z", gamma, T)
        elif kind == "l":
            # - gamma[y, a_s, b] T[.., y, ..]
            out = out - contract(f"y{letters[s]}z,{swapped}->{letters}z", gamma, T)
        else:
            raise ValueError(f"index kind must be 'u' or 'l', got {kind!r}")
    return out


@dataclass(frozen=True)
class ConnectionField:
    """Levi-Civita data of a model at one base point."""

    model: MetricModel
    point: tuple
    metric: MetricJets
    gamma: Jet
    riemann: Jet
    ricci: Jet
    convention: str = "standard"

    @property
    def dimension(self) -> int:
        return self.model.dimension

    def curvature_size(self) -> float:
        return relative_curvature(self.gamma, self.riemann)

    def is_flat(self, tol: float = 1e-10) -> bool:
        return self.curvature_size() < tol

    def metric_compatibility_defect(self) -> float:
        return covariant_derivative(self.metric.g, self.gamma, "ll").max_abs()


def connection_field(
    model: MetricModel, x0: Sequence[float], order: int = 8, convention: str = "standard"
) -> ConnectionField:
    x0 = tuple(float(v) for v in x0)
    mj = metric_jets(model, x0, order)
    gamma = christoffel(mj)
    R = riemann(gamma, convention)
    return ConnectionField(model, x0, mj, gamma, R, ricci(R), convention)


# ---------------------------------------------------------------------------
# phase space


def omega_up(n: int) -> np.ndarray:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def omega_down(n: int) -> np.ndarray:
    return -omega_up(n)


def phase_variables(x0: Sequence[float], p0: Sequence[float], order: int) -> list:
    return Jet.variables(list(x0) + list(p0), order)


def _lift_to_phase(t: Jet) -> Jet:
    """Base-space jet viewed as a phase-space jet (no momentum dependence)."""
    return embed(t, 2 * t.nvars, range(t.nvars))


def _momenta(n: int, p0: Sequence[float], order: int) -> Jet:
    return Jet.stack([Jet.variable(2 * n, n + l, float(p0[l]), order) for l in range(n)])


def raise_all(T: Jet, n: int) -> Jet:
    """``hat(T)^{m1..mk} = omega[m1, n1] .. omega[mk, nk] T[n1..nk]`` (batch axes)."""
    w = omega_up(n)
    k = len(T.shape)

    def fn(c):
        for axis in range(k):
            c = np.moveaxis(np.tensordot(w, c, axes=([1], [axis])), 0, axis)
        return c

    return T.map_coeffs(fn)


@dataclass(frozen=True)
class LiftedConnection:
    """Phase-space connection ``gamma[a, b, c]`` in the Darboux or adopted frame."""

    frame: str  # "darboux" | "adopted"
    gamma: Jet  # shape (2N, 2N, 2N) over 2N variables
    base: ConnectionField
    momentum: tuple

    @property
    def n(self) -> int:
        return self.base.dimension

    @property
    def point(self) -> tuple:
        return tuple(self.base.point) + tuple(self.momentum)

    def lowered(self) -> Jet:
        """``omega_down[a, d] gamma[d, b, c]``."""
        w = omega_down(self.n)
        return self.gamma.map_coeffs(lambda c: np.tensordot(w, c, axes=([1], [0])))

    def torsion(self) -> Jet:
        """Torsion ``T[a, b, c]`` of ``nabla`` on frame vectors ``(e_b, e_c)``.

        In the adopted frame the non-vanishing brackets ``[e_b, e_c]`` enter."""
        T = self.gamma.transpose(0, 2, 1) - self.gamma
        if self.frame == "adopted":
            frame = adopted_frame(self.base, self.momentum, self.gamma.order + 1)
            T = T - frame.structure_constants()
        return T

    def torsion_defect(self) -> float:
        return self.torsion().max_abs()

    def symplectic_defects(self) -> tuple[float, float]:
        """Defects of ``w^{db} G^a_{bc} = w^{ab} G^d_{bc}`` and
        ``w_{da} G^a_{bc} = w_{ba} G^a_{dc}``."""
        wu, wd = omega_up(self.n), omega_down(self.n)
        c = self.gamma.compact().coeffs
        lhs_a = np.einsum("db,abcz->dacz", wu, c)
        rhs_a = np.einsum("ab,dbcz->dacz", wu, c)
        lhs_b = np.einsum("da,abcz->dbcz", wd, c)
        rhs_b = np.einsum("ba,adcz->dbcz", wd, c)
        return float(np.max(np.abs(lhs_a - rhs_a))), float(np.max(np.abs(lhs_b - rhs_b)))

    def total_symmetry_defect(self) -> float:
        low = self.lowered()
        worst = 0.0
        for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0), (1, 2, 0), (2, 0, 1)]:
            worst = max(worst, (low - low.transpose(perm)).max_abs())
        return worst

    def to_darboux(self) -> "LiftedConnection":
        if self.frame == "darboux":
            return self
        frame = adopted_frame(self.base, self.momentum, self.gamma.order + 1)
        g = frame_transform_inverse(self.gamma, frame.E)
        return LiftedConnection("darboux", g, self.base, self.momentum)

    def to_adopted(self) -> "LiftedConnection":
        if self.frame == "adopted":
            return self
        frame = adopted_frame(self.base, self.momentum, self.gamma.order + 1)
        return LiftedConnection("adopted", frame_transform(self.gamma, frame.E), self.base, self.momentum)

    @cached_property
    def curvature(self) -> Jet:
        """Phase-space curvature ``R[a, b, c, d]`` (Darboux coordinates)."""
        return riemann(self.to_darboux().gamma, self.base.convention)

    @cached_property
    def curvature_lowered(self) -> Jet:
        """``omega_down[a, l] R[l, b, c, d]``."""
        w = omega_down(self.n)
        return self.curvature.map_coeffs(lambda c: np.tensordot(w, c, axes=([1], [0])))

    @cached_property
    def ricci(self) -> Jet:
        return ricci(self.curvature)

    def curvature_size(self) -> float:
        return relative_curvature(self.to_darboux().gamma, self.curvature)

    def is_flat(self, tol: float = 1e-9) -> bool:
        return self.curvature_size() < tol


def _assemble(n: int, blocks: list) -> Jet:
    """Place (slice-triple, jet) blocks into a (2N,2N,2N) connection tensor."""
    v = min(b.valid_order for _, b in blocks)
    arrays = [(sl, b.truncate(v).coeffs) for sl, b in blocks]
    dtype = np.result_type(*[a for _, a in arrays])
    c = np.zeros((2 * n,) * 3 + arrays[0][1].shape[-1:], dtype=dtype)
    for sl, a in arrays:
        c[sl] += a
    return Jet(2 * n, c, v)


def _base_part(n: int):
    return slice(0, n)


def _fiber_part(n: int):
    return slice(n, 2 * n)


def lift_general(
    conn: ConnectionField, p0: Sequence[float], frame: str = "darboux", include_curvature: bool = True
) -> LiftedConnection:
    """Symplectic torsionless lift of the base connection to phase space."""
    n = conn.dimension
    G = conn.gamma
    R = conn.riemann
    order = G.valid_order
    P = _momenta(n, p0, order)
    X, F = _base_part(n), _fiber_part(n)
    Ge = _lift_to_phase(G)
    # gamma~^{N+i}_{N+j, k} = -gamma^j_{ik}
    fiber_fiber = -Ge.transpose(1, 0, 2)
    if frame == "darboux":
        quad = contract("rjk,lri->lijk", G, G) + contract("rik,lrj->lijk", G, G)
        T = quad - G.gradient()
        if include_curvature:
            T = T - (R + R.transpose(0, 2, 1, 3)) * (1.0 / 3.0)
        # symmetric in (j, k) analytically; symmetrize to drop rounding asymmetry
        T = (T + T.transpose(0, 1, 3, 2)) * 0.5
        Q = contract("l,lijk->ijk", P, _lift_to_phase(T))
        # gamma~^{N+i}_{j, N+k} = -gamma^k_{ji}
        mixed = -Ge.transpose(2, 1, 0)
        blocks = [
            ((X, X, X), Ge),
            ((F, F, X), fiber_fiber),
            ((F, X, F), mixed),
            ((F, X, X), Q),
        ]
    elif frame == "adopted":
        T = (R + R.transpose(0, 2, 1, 3)) * (-1.0 / 3.0)
        Q = contract("l,lijk->ijk", P, _lift_to_phase(T))
        blocks = [((X, X, X), Ge), ((F, F, X), fiber_fiber), ((F, X, X), Q)]
    else:
        raise ValueError(f"frame must be 'darboux' or 'adopted', got {frame!r}")
    return LiftedConnection(frame, _assemble(n, blocks), conn, tuple(float(v) for v in p0))


def lift_flat(conn: ConnectionField, p0: Sequence[float], tol: float = 1e-9) -> LiftedConnection:
    """Lift of a flat base connection (no curvature terms)."""
    if not conn.is_flat(tol):
        raise NotFlat(
            f"model {conn.model.name} is curved at {conn.point} (relative |R| = {conn.curvature_size():.3g})"
        )
    return lift_general(conn, p0, "darboux", include_curvature=False)


# ---------------------------------------------------------------------------
# adopted frame


@dataclass(frozen=True)
class AdoptedFrame:
    """Frame vectors ``e_a = E[a, m] d_m``: ``D_i = d_{x^i} + gamma^k_{ij} p_k d_{p_j}``, ``D^j = d_{p_j}``."""

    E: Jet  # (2N, 2N) over 2N variables
    n: int

    def apply(self, a: int, f: Jet) -> Jet:
        return contract("m,m->", self.E[a], f.gradient())

    def apply_all(self, f: Jet) -> Jet:
        """Batched ``e_a f`` with a trailing frame axis appended to ``f``'s batch shape."""
        k = len(f.shape)
        letters = "abcdefgh"[:k]
        return contract(f"ym,{letters}m->{letters}y", self.E, f.gradient())

    def structure_constants(self) -> Jet:
        """``C[a, b, c]`` with ``[e_b, e_c] = C[a, b, c] e_a``."""
        dE = self.E.gradient()  # [b, n, m] = d_m E[b, n]
        # coordinate components of [e_b, e_c]: E[b, m] d_m E[c, n] - E[c, m] d_m E[b, n]
        along = contract("bm,cnm->nbc", self.E, dE)
        comm = along - along.transpose(0, 2, 1)
        return contract("na,nbc->abc", matrix_inverse(self.E), comm)

    def commutator(self, a: int, b: int) -> Jet:
        """Components of ``[e_a, e_b]`` in the coordinate basis."""
        Ea, Eb = self.E[a], self.E[b]
        return contract("m,nm->n", Ea, Eb.gradient()) - contract("m,nm->n", Eb, Ea.gradient())


def adopted_frame(conn: ConnectionField, p0: Sequence[float], order: int | None = None) -> AdoptedFrame:
    n = conn.dimension
    G = conn.gamma if order is None else conn.gamma.truncate(min(order, conn.gamma.valid_order))
    v = G.valid_order
    P = _momenta(n, p0, v)
    coupling = contract("k,kij->ij", P, _lift_to_phase(G))  # gamma^k_ij p_k
    eye = Jet.constant(2 * n, np.eye(n), v)
    c = np.zeros((2 * n, 2 * n, coupling.coeffs.shape[-1]))
    c[:n, :n] = eye.coeffs
    c[:n, n:] = coupling.truncate(v).coeffs
    c[n:, n:] = eye.coeffs
    return AdoptedFrame(Jet(2 * n, c, v), n)


def frame_transform(gamma: Jet, E: Jet) -> Jet:
    """Coordinate connection symbols to frame components, frame ``e_a = E[a, m] d_m``."""
    Einv = matrix_inverse(E)  # Einv[l, a]: d_l = Einv[l, a] e_a
    dE = E.gradient()  # [b, l, m]
    along = contract("blm,cm->lbc", dE, E)  # e_c(E[b, l])
    X = contract("bn,lnm->lbm", E, gamma)
    X = contract("lbm,cm->lbc", X, E)
    return contract("la,lbc->abc", Einv, along + X)


def frame_transform_inverse(gamma_frame: Jet, E: Jet) -> Jet:
    """Frame components back to coordinate symbols."""
    Einv = matrix_inverse(E)
    dEinv = Einv.gradient()  # [n, a, m] = d_m Einv[n, a]
    X = contract("nb,abc->anc", Einv, gamma_frame)
    X = contract("anc,mc->anm", X, Einv)
    return contract("al,anm->lnm", E, dEinv.transpose(1, 0, 2) + X)


# ---------------------------------------------------------------------------
# point transformations


@dataclass(frozen=True)
class PointTransformation:
    """``x = phi(x')`` lifted to ``p_i = [(phi')^-1]^j_i p'_j``."""

    variables: tuple
    phi: tuple

    @classmethod
    def from_strings(cls, variables: Sequence[str], phi: Sequence[str]) -> "PointTransformation":
        variables = tuple(variables)
        return cls(variables, tuple(ex.parse(t, variables) for t in phi))

    @property
    def n(self) -> int:
        return len(self.variables)

    def base_jets(self, x0: Sequence[float], order: int) -> list:
        return [ex.eval_jet(e, x0, order) for e in self.phi]

    def jacobian(self, x0: Sequence[float], order: int) -> Jet:
        return Jet.stack(self.base_jets(x0, order)).gradient()

    def phase_jets(self, x0: Sequence[float], p0: Sequence[float], order: int) -> list:
        """Components of ``T`` as phase jets at ``(x0, p0)`` (primed coordinates)."""
        n = self.n
        phi = Jet.stack(self.base_jets(x0, order))
        jac = phi.gradient()
        if abs(determinant(jac).value) < 1e-12:
            raise SingularPoint(f"point transformation has singular Jacobian at {list(x0)}")
        jinv = _lift_to_phase(matrix_inverse(jac))
        P = _momenta(n, p0, order)
        p_new = contract("ji,j->i", jinv, P)
        xs = [_lift_to_phase(phi[i]) for i in range(n)]
        return xs + [p_new[i] for i in range(n)]

    def image(self, x0, p0) -> np.ndarray:
        return np.array([c.value for c in self.phase_jets(x0, p0, 1)], dtype=float)


def point_transform(T: PointTransformation, f: Jet, x0, p0) -> Jet:
    """Pullback ``f o T``; ``f`` is expanded at ``T(x0, p0)``, the result at ``(x0, p0)``."""
    comps = T.phase_jets(x0, p0, f.valid_order)
    at = [c.value for c in comps]
    return jet_compose(f, comps, at)


def poisson_bracket(f: Jet, g: Jet) -> Jet:
    """Canonical bracket ``sum_i d_{x^i} f d_{p_i} g - d_{p_i} f d_{x^i} g``."""
    n = f.nvars // 2
    out = None
    for i in range(n):
        t = f.partial(i) * g.partial(n + i) - f.partial(n + i) * g.partial(i)
        out = t if out is None else out + t
    return out
