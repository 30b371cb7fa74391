import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critlab import ManifoldModel
from critlab.cli import (DEFAULTS, build_manifold, main, merge_config, parse_field_expr,
                         read_config_file, run)
from critlab.errors import ConfigError, ExprSyntaxError, UnknownIdentifier


@pytest.fixture(scope="module")
def small_sphere():
    return ManifoldModel.sphere(3, 64)


@pytest.fixture(scope="module")
def small_torus():
    return ManifoldModel.torus(2, nodes=8)


def test_precedence_and_power(small_sphere):
    m = small_sphere
    assert np.allclose(parse_field_expr("1 + 2 * 3", m).values, 7.0)
    assert np.allclose(parse_field_expr("(1 + 2) * 3", m).values, 9.0)
    assert np.allclose(parse_field_expr("2 * 3 ^ 2", m).values, 18.0)
    # unary minus binds tighter than the power
    assert np.allclose(parse_field_expr("-2 ^ 2", m).values, 4.0)
    assert np.allclose(parse_field_expr("8 / 4 / 2", m).values, 1.0)
    assert np.allclose(parse_field_expr("1 - 2 - 3", m).values, -4.0)


def test_functions_and_identifiers(small_sphere):
    m = small_sphere
    r = m.r
    got = parse_field_expr("1 + 0.3*cos(r) - abs(sin(2*r))/4 + exp(-(r^2))", m).values
    assert np.allclose(got, 1 + 0.3 * np.cos(r) - np.abs(np.sin(2 * r)) / 4 + np.exp(-r ** 2))
    assert np.allclose(parse_field_expr("min(r, 1, pi/2)", m).values, np.minimum(r, 1.0))
    assert np.allclose(parse_field_expr("max(cos(r), 0.5)", m).values, np.maximum(np.cos(r), 0.5))
    assert np.allclose(parse_field_expr("const(2.5)", m).values, 2.5)


def test_torus_coordinates(small_torus):
    m = small_torus
    x1, x2 = m.coords
    got = parse_field_expr("cos(2*pi*x1) + x2", m).values
    assert np.allclose(got, np.cos(2 * np.pi * x1) + x2)
    with pytest.raises(UnknownIdentifier):
        parse_field_expr("x3", m)


def test_coordinates_rejected_on_radial_models(small_sphere):
    with pytest.raises(UnknownIdentifier) as info:
        parse_field_expr("1 + x1", small_sphere)
    assert info.value.name == "x1" and info.value.position == 4


@pytest.mark.parametrize("src, pos", [("1 +", 3), ("(1 + 2", 6), ("1 2", 2), ("cos 1", 4),
                                      ("2 ^ r", 4), ("min(1)", 0), ("const(r)", 0), ("*", 0)])
def test_syntax_errors_carry_position(small_sphere, src, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse_field_expr(src, small_sphere)
    assert info.value.position == pos


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 5))
def test_arithmetic_matches_python(a, b, c):
    # literals are plain decimals, so format without exponents
    a, b, c = (round(v, 6) for v in (a, b, c))
    m = ManifoldModel.sphere(3, 64)
    src = f"({a:.6f}) + ({b:.6f}) * ({c:.6f}) - ({a:.6f}) / ({c:.6f})"
    assert np.allclose(parse_field_expr(src, m).values, a + b * c - a / c)


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment line\nmanifold = torus  # trailing\n\ndim=2\nt-lo = 0.1\n")
    assert read_config_file(str(p)) == {"manifold": "torus", "dim": "2", "t_lo": "0.1"}
    p.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(str(p))
    p.write_text("dim 3\n")
    with pytest.raises(ConfigError):
        read_config_file(str(p))
    with pytest.raises(ConfigError):
        read_config_file(str(tmp_path / "missing.cfg"))


def test_merge_precedence():
    cfg = merge_config("solve", {"dim": "4", "tol": "1e-7", "h": "const(2)"},
                       {"dim": "5", "h": None})
    assert cfg["dim"] == 5 and cfg["tol"] == 1e-7 and cfg["h"] == "const(2)"
    assert cfg["levels"] == DEFAULTS["levels"] and cfg["experiment"] == "solve"
    assert merge_config("green", {"pole": "0.1,0.2"}, {})["pole"] == [0.1, 0.2]
    with pytest.raises(ConfigError):
        merge_config("solve", {"dim": "three"}, {})


def test_build_manifold_kinds():
    base = merge_config("solve", {}, {"nodes": "64"})
    assert build_manifold(base).is_radial
    assert build_manifold({**base, "manifold": "torus", "dim": 2, "nodes": 8}).shape == (8, 8)
    with pytest.raises(ConfigError):
        build_manifold({**base, "manifold": "cube"})


def test_run_solve_reports_json_and_csv(tmp_path):
    out = io.StringIO()
    csv_path = tmp_path / "u.csv"
    cfg = merge_config("solve", {}, {"nodes": "128", "q": "4.0", "csv": str(csv_path)})
    assert run(cfg, stdout=out) == 0
    report = json.loads(out.getvalue())
    assert set(report) == {"experiment", "config", "tolerances", "results"}
    assert report["experiment"] == "solve" and report["tolerances"]["tol"] == 1e-9
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 129
    # the constant solution of constant data is Vol^{-1/q}
    vol = ManifoldModel.sphere(3, 128).volume
    assert float(rows[1][1]) == pytest.approx(vol ** -0.25, rel=1e-8)


def test_json_file_output(tmp_path):
    path = tmp_path / "g.json"
    cfg = merge_config("green", {}, {"nodes": "512", "h": "const(0.75)", "json": str(path)})
    assert run(cfg, stdout=io.StringIO()) == 0
    report = json.loads(path.read_text())
    assert report["results"]["max_weak_error"] < 1e-3
    assert "mass" in report["results"]


def test_exit_codes(capsys, tmp_path):
    assert main(["solve", "--nodes", "64", "--q", "4"]) == 0
    capsys.readouterr()
    # negative h is not coercive: a solver error
    assert main(["solve", "--nodes", "64", "--h", "const(-1)"]) == 2
    assert "NotCoercive" in capsys.readouterr().err
    assert main(["solve", "--h", "1 +"]) == 3
    assert "syntax error" in capsys.readouterr().err
    assert main(["nonsense"]) == 3
    assert main(["solve", "--colour", "blue"]) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["solve", "--config", str(bad)]) == 3
    assert main(["counterexample", "--schedule", "cubic", "--members", "1"]) == 3
    assert main(["solve", "--nodes", "64", "--json", str(tmp_path / "no" / "x.json")]) == 3


def test_config_file_values_are_overridden_by_flags(tmp_path, capsys):
    p = tmp_path / "run.cfg"
    p.write_text("nodes = 64\nq = 3.0\nh = const(0.5)\n")
    assert main(["solve", "--config", str(p), "--q", "4.0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["q"] == 4.0 and report["config"]["nodes"] == 64
    assert report["config"]["h"] == "const(0.5)"
