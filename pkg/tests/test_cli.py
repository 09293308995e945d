import json
import math

import numpy as np
import pytest

from natstar import cli
from natstar.checks import CheckConfig, SuiteRefused, run_check, suite_checks
from natstar.geometry import connection_field, get_model, lift_general
from natstar.jets import Jet
from natstar.starprod import FamilyData, engine


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _report(capsys, *argv):
    code, out, _ = _run(capsys, *argv, "--json")
    return code, json.loads(out)


def test_star_moyal_canonical_pair(capsys):
    code, rep = _report(capsys, "star", "--engine", "moyal", "--f", "x1", "--g", "p1", "--point", "0.5,0", "--momentum", "2,0")
    assert code == 0
    h0, h1 = rep["terms"]["hbar^0"], rep["terms"]["hbar^1"]
    assert h0["1"] == 1.0 and h0["x*p1"] == 1.0
    assert h1 == {"1": {"re": 0.0, "im": 0.5}}


def test_star_family_matches_library(capsys):
    x0, p0 = (1.1, 0.3), (0.2, -0.4)
    code, rep = _report(
        capsys, "star", "--model", "unit-sphere", "--engine", "family-a", "--a", "0.5",
        "--f", "theta^2*p2", "--g", "phi*p1^2", "--point", "1.1,0.3", "--momentum", "0.2,-0.4", "--hbar-order", "3",
    )
    assert code == 0
    th, ph, q1, q2 = Jet.variables(x0 + p0, 8)
    data = FamilyData.from_lift(lift_general(connection_field(get_model("unit-sphere"), x0, 8), p0))
    ref = engine("family-a", lift=data, a=0.5)(th * th * q2, ph * q1 * q1, 3)
    for k in range(4):
        table = rep["terms"][f"hbar^{k}"]
        got = table.get("1", 0.0)
        got = complex(got["re"], got["im"]) if isinstance(got, dict) else got
        assert abs(got - ref[k].value) < 1e-14


@pytest.mark.parametrize("text", ["x1*(p1", "x1 +", "foo(x1)"])
def test_star_parse_errors_exit_nonzero_with_span(capsys, text):
    code, _, err = _run(capsys, "star", "--f", text, "--g", "p1")
    assert code == 2
    assert "offset" in err and "^" in err


def test_geometry_polar_symbol(capsys):
    code, rep = _report(capsys, "geometry", "--model", "euclidean-polar", "--point", "2,0.3")
    assert code == 0
    assert math.isclose(rep["christoffel"][0][1][1], -2.0)


def test_geometry_sphere_equator_ricci(capsys):
    code, rep = _report(capsys, "geometry", "--model", "unit-sphere", "--point", f"{math.pi / 2},0.2")
    assert code == 0
    assert math.isclose(rep["ricci"][0][0], 1.0)


def test_geometry_cartesian_all_zero(capsys):
    _, rep = _report(capsys, "geometry", "--model", "euclidean-cartesian", "--point", "0.3,-1")
    for key in ("christoffel", "riemann", "ricci"):
        assert not np.any(np.asarray(rep[key]))
    assert not np.any(np.asarray(rep["lifted"]["darboux"]))
    assert not np.any(np.asarray(rep["lifted"]["adopted"]))


def test_geometry_singular_point(capsys):
    code, _, err = _run(capsys, "geometry", "--model", "euclidean-polar", "--point", "0,1")
    assert code == 2 and "degenerate" in err


def test_operator_natural_hamiltonian_on_sphere(capsys):
    code, rep = _report(capsys, "operator", "--model", "unit-sphere", "--a", "0", "--point", "1.2,0")
    assert code == 0
    assert abs(rep["notes"]["scalar_shift_vs_a1"]["re"] - 0.25) < 1e-10
    assert rep["notes"]["b_dependence"] < 1e-12


def test_operator_natural_hamiltonian_on_polar_is_laplacian(capsys):
    _, rep = _report(capsys, "operator", "--model", "euclidean-polar", "--b", "0.4", "--point", "1.5,0.2")
    table = rep["closed_form"]
    # -hbar^2/2 (d_r^2 + d_r / r + d_theta^2 / r^2)
    assert math.isclose(table["hbar^2 d^[2, 0]"]["re"][0], -0.5)
    assert math.isclose(table["hbar^2 d^[1, 0]"]["re"][0], -0.5 / 1.5)
    assert math.isclose(table["hbar^2 d^[0, 2]"]["re"][0], -0.5 / 1.5**2)
    assert rep["notes"]["b_dependence"] < 1e-12


def test_operator_rejects_quartic(capsys):
    code, _, err = _run(capsys, "operator", "--model", "euclidean-polar", "--symbol", "p1^2*p2^2")
    assert code == 2 and "degree <= 3 supported" in err


def test_operator_symbol_and_potential(capsys):
    code, rep = _report(capsys, "operator", "--model", "unit-sphere", "--symbol", "sin(theta)*p1^3 + p2", "--potential", "cos(phi)", "--point", "1.0,0.5")
    assert code == 0
    assert rep["degrees"] == [1, 3]
    assert math.isclose(rep["closed_form"]["hbar^0 d^[0, 0]"]["re"][0], math.cos(0.5))


def test_check_refuses_flat_suite_on_sphere(capsys):
    code, _, err = _run(capsys, "check", "--model", "unit-sphere", "--suite", "flat")
    assert code == 2 and "not flat" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["check", "--samples", "many"])
    assert info.value.code == 2
    code, _, _ = _run(capsys, "check", "--order", "5")
    assert code == 2
    code, _, _ = _run(capsys, "check", "--tol", "-1")
    assert code == 2


def test_config_file_and_out(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"name": "plane", "variables": ["u", "v"], "metric": [["1", "0"], ["1"]], "flat": True, "sample_box": [[-1, 1], [-1, 1]]}, "samples": 1, "checks": ["lift-torsion", "moyal-associativity"]}))
    out = tmp_path / "report.json"
    code, _, _ = _run(capsys, "check", "--config", str(cfg), "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    assert [r["id"] for r in rep["checks"]] == ["lift-torsion", "moyal-associativity"]
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert _run(capsys, "check", "--config", str(bad))[0] == 2


def test_failed_check_exit_code(capsys):
    code, rep = _report(capsys, "check", "--model", "euclidean-polar", "--samples", "1", "--checks", "covariance", "--tol", "1e-30")
    assert code == 1 and rep["summary"]["failed"] == ["covariance"]


def test_report_is_deterministic_modulo_timestamp(capsys):
    argv = ["check", "--model", "hyperbolic-half-plane", "--samples", "2", "--seed", "7", "--checks", "family-associativity,lift-symplectic"]
    first = _report(capsys, *argv)[1]
    second = _report(capsys, *argv)[1]
    first.pop("timestamp"), second.pop("timestamp")
    assert cli.render_json(first) == cli.render_json(second)


def test_suite_selection():
    assert "covariance" in suite_checks("flat", get_model("euclidean-polar"))
    assert "equivalence-curved" in suite_checks("curved", get_model("unit-sphere"))
    with pytest.raises(SuiteRefused):
        suite_checks("flat", get_model("hyperbolic-half-plane"))


def test_check_records_serialize(capsys):
    rec = run_check("lift-symplectic", get_model("unit-sphere"), CheckConfig(samples=2))
    d = rec.to_dict()
    assert d["pass"] is True and d["id"] == "lift-symplectic" and len(d["point"]) == 4
