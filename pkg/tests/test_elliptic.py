import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critlab import ManifoldModel
from critlab.elliptic import apply_operator, coercivity_margin, is_coercive, solve_linear
from critlab.errors import NotCoercive


@given(st.floats(0.05, 5.0))
def test_sphere_constant_margin_is_h(h):
    # constants are the ground state of Delta + h with constant h
    m = ManifoldModel.sphere(3, 256)
    assert coercivity_margin(m, m.constant(h)) == pytest.approx(h, rel=1e-7)


def test_torus_margin_of_variable_potential():
    m = ManifoldModel.torus(2, nodes=32)
    x = m.coords
    h = m.field(1.0 + 0.5 * np.cos(2 * np.pi * x[0]))
    margin = coercivity_margin(m, h)
    # Rayleigh bounds: below the mean of h, above its minimum
    assert 0.5 < margin < 1.0


def test_negative_constant_is_not_coercive():
    m = ManifoldModel.torus(3, nodes=8)
    assert not is_coercive(m, m.constant(-0.1))
    with pytest.raises(NotCoercive):
        solve_linear(m, m.constant(-0.1), m.constant(1.0))


def test_sphere_below_first_eigenvalue_is_not_coercive():
    # Delta + h on S^3 has spectrum k(k+2) + h; h = -1 has the constant mode below zero
    m = ManifoldModel.sphere(3, 256)
    assert coercivity_margin(m, m.constant(-1.0)) == pytest.approx(-1.0, rel=1e-6)


@pytest.mark.parametrize("kind", ["sphere", "torus"])
def test_solve_linear_residual(kind):
    if kind == "sphere":
        m = ManifoldModel.sphere(4, 1024)
        h = m.field(2.0 + np.cos(m.r))
        rhs = m.field(np.exp(np.cos(m.r)))
    else:
        m = ManifoldModel.torus(3, nodes=16)
        x = m.coords
        h = m.field(1.0 + 0.5 * np.sin(2 * np.pi * x[1]))
        rhs = m.field(np.exp(np.cos(2 * np.pi * x[0])))
    v = solve_linear(m, h, rhs, tol=1e-10)
    r = apply_operator(m, h, v) - rhs
    assert np.linalg.norm(r.values) <= 1e-9 * np.linalg.norm(rhs.values)


def test_solve_on_sphere_eigenmode():
    # (Delta + 1) cos r = (n + 1) cos r on S^n, up to second-order truncation
    m = ManifoldModel.sphere(3, 2048)
    v = solve_linear(m, m.constant(1.0), m.field(4.0 * np.cos(m.r)))
    assert np.max(np.abs(v.values - np.cos(m.r))) < 1e-5


def test_torus_constant_h_fast_path():
    m = ManifoldModel.torus(2, nodes=16)
    x = m.coords
    u = np.sin(2 * np.pi * x[0]) + 0.3
    rhs = m.field((4 * np.pi ** 2 + 2.0) * np.sin(2 * np.pi * x[0]) + 0.6)
    v = solve_linear(m, m.constant(2.0), rhs)
    assert np.allclose(v.values, u, atol=1e-11)
