"""Command-line front end.

Subcommands::

    natstar check     run a verification suite on a model
    natstar star      star-product of two phase-space expressions at a point
    natstar operator  quantized operator of a momentum-polynomial observable
    natstar geometry  connection, curvature and lifted connection at a point

Exit codes: 0 when everything passed, 1 when a check failed, 2 for usage,
config or input errors.  Reports are JSON with sorted keys; the only field that
changes between identical runs is ``timestamp``.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import __version__
from . import expr as ex
from .checks import CHECKS, CheckConfig, SuiteRefused, run_check, suite_checks
from .geometry import (
    GeometryError,
    MetricModel,
    NotFlat,
    connection_field,
    get_model,
    lift_flat,
    lift_general,
    model_from_config,
)
from .jets import Jet, JetError, basis
from .morphism import build_S_ab
from .quantize import (
    MomentumSymbol,
    QuantizeError,
    coefficient_discrepancy,
    op_closed_form,
    s_order,
    symbol_terms,
)
from .operators import DiffOperator
from .starprod import FamilyData, StarError, VectorFieldSet, engine

__all__ = ["RunConfig", "ConfigError", "load_config", "cmd_check", "cmd_star", "cmd_operator", "cmd_geometry", "main"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MAX_SYMBOL_DEGREE = 3
ENGINES = ("moyal", "vectorfield", "curvilinear", "covariant", "family-a", "fedosov")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    model: str | dict = "euclidean-cartesian"
    order: int = 8
    hbar_order: int = 4
    tol: float | None = None
    seed: int = 0
    samples: int = 20
    a: float = 0.0
    b: float = 0.0
    point: tuple | None = None
    momentum: tuple | None = None
    suite: str = "auto"
    checks: tuple = ()

    def __post_init__(self):
        if self.hbar_order < 0:
            raise ConfigError("hbar order must be non-negative")
        if self.order < self.hbar_order + MAX_SYMBOL_DEGREE + 1:
            raise ConfigError(
                f"jet order {self.order} is too small for hbar order {self.hbar_order}; "
                f"need at least {self.hbar_order + MAX_SYMBOL_DEGREE + 1}"
            )
        if self.tol is not None and not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError("tolerance must be a positive number")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown check ids: {', '.join(unknown)}")

    def load_model(self) -> MetricModel:
        try:
            if isinstance(self.model, dict):
                return model_from_config(self.model)
            return get_model(self.model)
        except (GeometryError, ex.ExprError) as exc:
            raise ConfigError(f"model: {exc}") from None

    def check_config(self) -> CheckConfig:
        return CheckConfig(
            order=self.order, K=self.hbar_order, seed=self.seed, samples=self.samples, a=self.a, b=self.b, tol=self.tol
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["point"] = None if self.point is None else list(self.point)
        d["momentum"] = None if self.momentum is None else list(self.momentum)
        d["checks"] = list(self.checks)
        return d


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def load_config(path: str) -> dict:
    """Read a JSON config file.  Keys mirror the command-line flags
    (``hbar_order`` for ``--hbar-order``); ``model`` is a catalog name or an
    inline model table."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS - {"out"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def _floats(text: str | Sequence | None, what: str) -> tuple | None:
    if text is None:
        return None
    items = text.split(",") if isinstance(text, str) else list(text)
    try:
        return tuple(float(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a comma-separated list of numbers") from None


def _build_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    values.pop("out", None)
    flags = {
        "model": args.model,
        "order": args.order,
        "hbar_order": args.hbar_order,
        "tol": args.tol,
        "seed": args.seed,
        "samples": args.samples,
        "a": args.a,
        "b": args.b,
        "point": args.point,
        "momentum": args.momentum,
        "suite": getattr(args, "suite", None),
        "checks": getattr(args, "checks", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    values["point"] = _floats(values.get("point"), "point")
    values["momentum"] = _floats(values.get("momentum"), "momentum")
    checks = values.get("checks", ())
    values["checks"] = tuple(checks.split(",") if isinstance(checks, str) else checks)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# points and reports


def _base_point(cfg: RunConfig, model: MetricModel) -> tuple:
    n = model.dimension
    if cfg.point is None:
        x0 = tuple(0.5 * (lo + hi) for lo, hi in model.sample_box)
    else:
        x0 = cfg.point
    if len(x0) != n:
        raise ConfigError(f"point needs {n} coordinates for model {model.name}")
    return x0


def _momentum(cfg: RunConfig, n: int) -> tuple:
    p0 = cfg.momentum if cfg.momentum is not None else (0.0,) * n
    if len(p0) != n:
        raise ConfigError(f"momentum needs {n} components")
    return p0


def _environment() -> dict:
    return {"natstar": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _clean(obj):
    """Plain JSON types; complex numbers become ``{"re", "im"}``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def render_json(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _jet_table(j: Jet, names: Sequence[str], max_degree: int = 2) -> dict:
    """Taylor coefficients up to ``max_degree`` keyed by monomials in the shifted variables."""
    b = basis(j.nvars, j.order)
    top = min(max_degree, j.valid_order)
    out = {}
    for idx in range(b.prefix[top + 1]):
        e = b.exps[idx]
        key = "*".join(f"{names[v]}^{k}" if k > 1 else names[v] for v, k in enumerate(e) if k) or "1"
        c = complex(j.coeffs[idx])
        if c != 0:
            out[key] = c if c.imag else c.real
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_check(cfg: RunConfig) -> tuple[dict, int]:
    model = cfg.load_model()
    suite = cfg.suite
    if suite == "auto":
        suite = "flat" if model.flat else "curved"
    ids = suite_checks(suite, model)
    if cfg.checks:
        ids = sorted(c for c in ids if c in cfg.checks)
    ccfg = cfg.check_config()
    records = [run_check(cid, model, ccfg).to_dict() for cid in ids]
    failed = [r["id"] for r in records if not r["pass"]]
    report = {
        "command": "check",
        "config": cfg.to_dict(),
        "environment": _environment(),
        "model": model.name,
        "suite": suite,
        "seed": cfg.seed,
        "checks": records,
        "summary": {"total": len(records), "failed": failed, "all_pass": not failed},
        "timestamp": _timestamp(),
    }
    return report, EXIT_FAIL if failed else EXIT_OK


def _phase_names(model: MetricModel) -> tuple[list, list]:
    """Names accepted in phase-space expressions: chart variables plus ``x1..xN``
    aliases, and momenta ``p1..pN``."""
    n = model.dimension
    names = list(model.variables) + [f"p{i + 1}" for i in range(n)]
    aliases = [f"x{i + 1}" for i in range(n) if f"x{i + 1}" not in names]
    return names, aliases


def _remap(e, n_main: int, alias_index: dict):
    if isinstance(e, ex.Var):
        if e.index >= n_main:
            return ex.Var(e.name, alias_index[e.index], e.span)
        return e
    if isinstance(e, ex.Neg):
        return ex.Neg(_remap(e.operand, n_main, alias_index), e.span)
    if isinstance(e, ex.BinOp):
        return ex.BinOp(e.op, _remap(e.left, n_main, alias_index), _remap(e.right, n_main, alias_index), e.span)
    if isinstance(e, ex.Call):
        return ex.Call(e.func, _remap(e.arg, n_main, alias_index), e.span)
    return e


def parse_phase(text: str, model: MetricModel) -> ex.Expr:
    names, aliases = _phase_names(model)
    e = ex.parse(text, names + aliases)
    alias_index = {len(names) + k: int(a[1:]) - 1 for k, a in enumerate(aliases)}
    return _remap(e, len(names), alias_index)


def _phase_jet(text: str, model: MetricModel, z0: Sequence[float], order: int) -> Jet:
    return ex.eval_jet(parse_phase(text, model), z0, order, text)


def _star_engine(name: str, model: MetricModel, x0, p0, order: int, a: float):
    if name == "moyal":
        return engine("moyal")
    if name == "vectorfield":
        V = VectorFieldSet.from_point_transformation(model.point_transformation(), x0, p0, order)
        return engine("vectorfield", fields=V)
    conn = connection_field(model, x0, order)
    if name == "curvilinear":
        return engine("curvilinear", conn=conn, p0=p0)
    if name == "covariant":
        return engine("covariant", lift=lift_flat(conn, p0))
    data = FamilyData.from_lift(lift_general(conn, p0))
    if name == "family-a":
        return engine("family-a", lift=data, a=a)
    return engine("fedosov", lift=data)


def cmd_star(cfg: RunConfig, f_text: str, g_text: str, engine_name: str = "moyal", max_degree: int = 2) -> tuple[dict, int]:
    if engine_name not in ENGINES:
        raise ConfigError(f"unknown engine {engine_name!r}; choose from {', '.join(ENGINES)}")
    K = cfg.hbar_order
    if engine_name in ("family-a", "fedosov") and K > 3:
        K = 3
    model = cfg.load_model()
    x0 = _base_point(cfg, model)
    p0 = _momentum(cfg, model.dimension)
    z0 = tuple(x0) + tuple(p0)
    f = _phase_jet(f_text, model, z0, cfg.order)
    g = _phase_jet(g_text, model, z0, cfg.order)
    star = _star_engine(engine_name, model, x0, p0, cfg.order, cfg.a)
    series = star(f, g, K)
    names, _ = _phase_names(model)
    terms = {f"hbar^{k}": _jet_table(series[k], names, max_degree) for k in range(series.K + 1)}
    report = {
        "command": "star",
        "config": cfg.to_dict(),
        "engine": engine_name,
        "f": f_text,
        "g": g_text,
        "model": model.name,
        "point": {"x": list(x0), "p": list(p0)},
        "hbar_order": series.K,
        "terms": terms,
        "timestamp": _timestamp(),
    }
    return report, EXIT_OK


def _symbol_parts(F: Jet, n: int) -> list:
    """Split a phase jet (expanded at p = 0) into homogeneous momentum symbols."""
    probe = min(F.valid_order, MAX_SYMBOL_DEGREE + 3)
    terms = symbol_terms(F, n, probe)
    degree = max((sum(beta) for beta, c in terms.items() if c.max_abs() > 1e-14), default=0)
    if degree > MAX_SYMBOL_DEGREE:
        raise QuantizeError(f"observable has momentum degree {degree}; degree <= {MAX_SYMBOL_DEGREE} supported")
    parts = []
    for d in range(1, degree + 1):
        blocks = [(beta, c) for beta, c in terms.items() if sum(beta) == d]
        if all(c.max_abs() <= 1e-14 for _, c in blocks):
            continue
        v = min(c.valid_order for _, c in blocks)
        K = Jet.zeros(n, v, (n,) * d)
        coeffs = K.coeffs.copy().astype(np.result_type(*[c.coeffs for _, c in blocks], float))
        for beta, c in blocks:
            idx = tuple(j for j, k in enumerate(beta) for _ in range(k))
            mult = math.factorial(d) // math.prod(math.factorial(k) for k in beta)
            coeffs[idx] = c.truncate(v).coeffs / mult
        parts.append(MomentumSymbol.symmetrize(Jet(n, coeffs, v)))
    V = terms[(0,) * n]
    return parts, (V if V.max_abs() > 0 else None)


def cmd_operator(
    cfg: RunConfig, symbol: str | None = None, potential: str | None = None, max_degree: int = 0
) -> tuple[dict, int]:
    """Closed-form and S-ordered operators of ``symbol`` (default: the natural
    Hamiltonian ``g^{ij} p_i p_j / 2`` plus ``potential``)."""
    model = cfg.load_model()
    n = model.dimension
    x0 = _base_point(cfg, model)
    conn = connection_field(model, x0, cfg.order)
    if symbol is None:
        parts = [MomentumSymbol(conn.metric.ginv * 0.5)]
        V = None
        label = "natural hamiltonian"
    else:
        F = _phase_jet(symbol, model, tuple(x0) + (0.0,) * n, cfg.order)
        parts, V = _symbol_parts(F, n)
        label = symbol
    if potential is not None:
        pv = ex.eval_jet(ex.parse(potential, model.variables), x0, cfg.order, potential)
        V = pv if V is None else V + pv
    if not parts:
        raise QuantizeError("observable has no momentum dependence")
    S = build_S_ab(conn, [0.0] * n, cfg.a, cfg.b)

    def closed(H, a, b):
        return op_closed_form(H, conn, a, b)

    op = sum((closed(H, cfg.a, cfg.b) for H in parts[1:]), closed(parts[0], cfg.a, cfg.b))
    sop = sum((s_order(H, S, conn) for H in parts[1:]), s_order(parts[0], S, conn))
    b_flip = sum((closed(H, cfg.a, 1.0 - cfg.b) for H in parts[1:]), closed(parts[0], cfg.a, 1.0 - cfg.b))
    a_ref = sum((closed(H, 1.0, cfg.b) for H in parts[1:]), closed(parts[0], 1.0, cfg.b))
    if V is not None:
        op = op + DiffOperator.multiplication(V)
        sop = sop + DiffOperator.multiplication(V)
    scalar_key = (2, (0,) * n)
    shift = (op - a_ref).terms.get(scalar_key)
    disc = coefficient_discrepancy(sop, op)
    worst = op.defect(sop, degree=0)
    tol = cfg.tol if cfg.tol is not None else 1e-8
    report = {
        "command": "operator",
        "config": cfg.to_dict(),
        "model": model.name,
        "observable": label,
        "degrees": [H.degree for H in parts],
        "point": list(x0),
        "closed_form": op.table(max_degree),
        "s_ordered": sop.table(max_degree),
        "defect": worst,
        "tol": tol,
        "pass": worst < tol,
        "discrepancies": {k: v for k, v in disc.items() if v > tol},
        "notes": {
            "b_dependence": op.defect(b_flip, degree=0),
            "scalar_shift_vs_a1": 0.0 if shift is None else complex(shift.value),
        },
        "timestamp": _timestamp(),
    }
    return report, EXIT_OK if worst < tol else EXIT_FAIL


def _lifted(conn, p0, frame: str) -> np.ndarray:
    return lift_general(conn, p0, frame).gamma.value


def cmd_geometry(cfg: RunConfig) -> tuple[dict, int]:
    model = cfg.load_model()
    x0 = _base_point(cfg, model)
    p0 = _momentum(cfg, model.dimension)
    conn = connection_field(model, x0, cfg.order)
    report = {
        "command": "geometry",
        "config": cfg.to_dict(),
        "model": model.name,
        "variables": list(model.variables),
        "point": {"x": list(x0), "p": list(p0)},
        "metric": conn.metric.g.value,
        "christoffel": conn.gamma.value,
        "riemann": conn.riemann.value,
        "ricci": conn.ricci.value,
        "flat": bool(conn.is_flat()),
        "lifted": {"darboux": _lifted(conn, p0, "darboux"), "adopted": _lifted(conn, p0, "adopted")},
        "timestamp": _timestamp(),
    }
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# text output


def _format_check(report: dict) -> str:
    lines = [f"model {report['model']}  suite {report['suite']}  seed {report['seed']}"]
    for r in report["checks"]:
        status = "PASS" if r["pass"] else "FAIL"
        lines.append(f"{status}  {r['id']:<40} max defect {r['max_defect']:.3e}  tol {r['tol']:.1e}")
    s = report["summary"]
    lines.append(f"{s['total'] - len(s['failed'])}/{s['total']} checks passed")
    return "\n".join(lines)


def _format_star(report: dict) -> str:
    lines = [f"{report['engine']} star of {report['f']!r} and {report['g']!r} at {report['point']}"]
    for k, table in report["terms"].items():
        body = ", ".join(f"{m}: {_num(v)}" for m, v in table.items()) or "0"
        lines.append(f"  {k}: {body}")
    return "\n".join(lines)


def _num(v) -> str:
    if isinstance(v, complex):
        return f"{v.real:.6g}{v.imag:+.6g}i"
    return f"{v:.6g}"


def _format_operator(report: dict) -> str:
    lines = [f"operator of {report['observable']} on {report['model']} at {report['point']}"]
    for key, c in report["closed_form"].items():
        v = complex(c["re"][0], c["im"][0])
        lines.append(f"  {key:<24} {_num(v if v.imag else v.real)}")
    lines.append(f"  S-ordered vs closed form: defect {report['defect']:.3e} (tol {report['tol']:.1e})")
    for key, v in report["discrepancies"].items():
        lines.append(f"    discrepancy {key}: {v:.3e}")
    notes = report["notes"]
    lines.append(f"  b dependence {notes['b_dependence']:.3e}, scalar shift vs a=1 {_num(notes['scalar_shift_vs_a1'])}")
    return "\n".join(lines)


def _format_geometry(report: dict) -> str:
    names = report["variables"]
    lines = [f"{report['model']} at {dict(zip(names, report['point']['x']))}"]
    G = np.asarray(report["christoffel"])
    for idx in zip(*np.nonzero(np.abs(G) > 1e-14)):
        a, b, c = idx
        lines.append(f"  Gamma^{names[a]}_{{{names[b]} {names[c]}}} = {G[idx]:.6g}")
    Ric = np.asarray(report["ricci"])
    for idx in zip(*np.nonzero(np.abs(Ric) > 1e-14)):
        lines.append(f"  Ricci_{{{names[idx[0]]} {names[idx[1]]}}} = {Ric[idx]:.6g}")
    lines.append(f"  flat: {report['flat']}")
    return "\n".join(lines)


_FORMATTERS = {"check": _format_check, "star": _format_star, "operator": _format_operator, "geometry": _format_geometry}


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration")
    g.add_argument("--model", help="catalog model name")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--order", type=int, help="jet order (default 8)")
    g.add_argument("--hbar-order", type=int, dest="hbar_order", help="hbar truncation K (default 4)")
    g.add_argument("--tol", type=float, help="override every check tolerance")
    g.add_argument("--seed", type=int)
    g.add_argument("--samples", type=int, help="random points per check")
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--point", help="base point, comma separated")
    g.add_argument("--momentum", help="momentum, comma separated")
    g.add_argument("--out", help="write the JSON report here")
    g.add_argument("--json", action="store_true", help="print JSON instead of a table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natstar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run a verification suite")
    _global_flags(p)
    p.add_argument("--suite", choices=["auto", "flat", "curved"])
    p.add_argument("--checks", help="comma-separated subset of check ids")

    p = sub.add_parser("star", help="star-product of two expressions")
    _global_flags(p)
    p.add_argument("--engine", default="moyal", choices=ENGINES)
    p.add_argument("--f", required=True)
    p.add_argument("--g", required=True)
    p.add_argument("--degree", type=int, default=2, help="Taylor degree shown per coefficient")

    p = sub.add_parser("operator", help="quantized operator of an observable")
    _global_flags(p)
    p.add_argument("--symbol", help="momentum polynomial; default is the natural Hamiltonian")
    p.add_argument("--potential", help="potential added to the observable")
    p.add_argument("--degree", type=int, default=0, help="Taylor degree shown per coefficient")

    p = sub.add_parser("geometry", help="geometric data at a point")
    _global_flags(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        if args.command == "check":
            report, code = cmd_check(cfg)
        elif args.command == "star":
            report, code = cmd_star(cfg, args.f, args.g, args.engine, args.degree)
        elif args.command == "operator":
            report, code = cmd_operator(cfg, args.symbol, args.potential, args.degree)
        else:
            report, code = cmd_geometry(cfg)
    except (ConfigError, SuiteRefused, ex.ExprError, GeometryError, QuantizeError, StarError, JetError) as exc:
        kind = "refused" if isinstance(exc, (SuiteRefused, NotFlat)) else "error"
        print(f"natstar {args.command}: {kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = render_json(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.json:
        sys.stdout.write(text)
    else:
        print(_FORMATTERS[args.command](report))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
