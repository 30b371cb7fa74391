import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from critlab import ManifoldModel, Triple, make_triple
from critlab.errors import ChartRadiusError, DivergentIntegral, NotAMaximum, PreconditionFailed
from critlab.functional import Ceiling
from critlab.search import conformal_transform
from critlab.testfn import (AubinParams, Branch, aubin_J_quadrature, aubin_expansion,
                            aubin_profile, aubin_psi, criterion_gap, criterion_gaps_at_maxima,
                            dim3_test_function, dim3_weakly_critical_test, laplacian_at,
                            radial_integral_Ipq)


@given(st.integers(-2, 8), st.integers(4, 12))
def test_Ipq_against_beta_function(p, gap):
    q = p + gap
    oracle = 0.5 * special.beta((p + 3) / 2.0, (q - p - 3) / 2.0)
    assert radial_integral_Ipq(p, q) == pytest.approx(oracle, rel=1e-11)


def test_Ipq_divergence():
    with pytest.raises(DivergentIntegral):
        radial_integral_Ipq(0, 3)
    with pytest.raises(DivergentIntegral):
        radial_integral_Ipq(-3, 6)


def conformal_h(n):
    return n * (n - 2) / 4.0


@given(st.floats(20.0, 2000.0))
def test_aubin_quotient_stays_above_ceiling_on_round_sphere(k):
    # the round sphere with the conformal h attains the ceiling, so every test function sits above
    n = 5
    m = ManifoldModel.sphere(n, 256)
    J = aubin_J_quadrature(m, k, 0.5, conformal_h(n))
    assert J >= Ceiling.of(n, 1.0).value * (1 - 1e-10)


@pytest.mark.parametrize("dh, sign", [(0.5, 1.0), (-0.5, -1.0)])
def test_aubin_expansion_error_is_higher_order(dh, sign):
    n = 6
    m = ManifoldModel.sphere(n, 256)
    h = conformal_h(n) + dh
    ceil = Ceiling.of(n, 1.0).value
    errs = []
    for k in (200.0, 800.0, 3200.0):
        J = aubin_J_quadrature(m, k, 0.5, h)
        pred = aubin_expansion(n, h, m.scalar_curvature, 0.0, k, 1.0)
        errs.append(k * abs(J - pred))
    # the first-order term fixes the side of the ceiling once k is large
    assert np.sign(J - ceil) == sign
    assert errs[0] > errs[1] > errs[2]


def test_aubin_expansion_domain():
    with pytest.raises(PreconditionFailed):
        aubin_expansion(3, 1.0, 6.0, 0.0, 100.0, 1.0)
    with pytest.raises(PreconditionFailed):
        AubinParams(0.5, 0.0, 0.3)
    four = aubin_expansion(4, 3.0, 12.0, 0.0, 100.0, 1.0)
    assert four > Ceiling.of(4, 1.0).value


def test_aubin_psi_samples_profile():
    m = ManifoldModel.sphere(4, 512)
    psi = aubin_psi(m, AubinParams(50.0, 0.0, 0.4))
    ref, _ = aubin_profile(4, 50.0, 0.4)
    assert np.allclose(psi.values, ref(m.r))
    assert psi.values[-1] == 0.0 and psi.values[0] > 0
    with pytest.raises(ChartRadiusError):
        aubin_psi(ManifoldModel.torus(4, nodes=8), AubinParams(50.0, np.zeros(4), 0.6))


@given(st.floats(0.5, 4.0))
def test_aubin_profile_derivative(delta_scale):
    psi, dpsi = aubin_profile(5, 30.0, 0.2 * delta_scale)
    r = np.linspace(0.01, 0.19 * delta_scale, 20)
    fd = (psi(r + 1e-6) - psi(r - 1e-6)) / 2e-6
    assert np.allclose(fd, dpsi(r), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_laplacian_at_center_is_fourth_order(n):
    # Delta cos r = n cos r; Richardson extrapolation removes the second-order term
    m = ManifoldModel.sphere(n, 1024)
    assert laplacian_at(m, m.field(np.cos(m.r)), 0.0) == pytest.approx(n, abs=1e-9)
    i = 300
    assert laplacian_at(m, m.field(np.cos(m.r)), m.r[i]) == pytest.approx(n * np.cos(m.r[i]),
                                                                           abs=1e-9)


@given(st.floats(0.05, 0.9), st.floats(0.0, 8.0), st.integers(4, 6))
def test_criterion_gap_closed_form(a, h, n):
    m = ManifoldModel.sphere(n, 1024)
    t = Triple(m.constant(h), m.field(1.0 + a * np.cos(m.r)), m)
    rep = criterion_gap(t, 0.0)
    lapf_over_f = a * n / (1.0 + a)
    expect = 4 * (n - 1) / (n - 2) * h - n * (n - 1) + (n - 4) / 2.0 * lapf_over_f
    assert rep.gap == pytest.approx(expect, abs=1e-6)
    assert rep.branch is (Branch.N4 if n == 4 else Branch.N_GREATER_4)


def test_criterion_gap_rejects_non_maxima():
    m = ManifoldModel.sphere(5, 256)
    t = Triple(m.constant(1.0), m.field(1.0 + 0.5 * np.cos(m.r)), m)
    with pytest.raises(NotAMaximum):
        criterion_gap(t, m.r[10])
    assert criterion_gaps_at_maxima(t).shape == (1,)


def test_criterion_gap_in_a_conformal_metric():
    # c h' - S' = (c h - S) u^{1-p}: the transformed gap at a maximum of f = 1 is explicit
    n = 4
    m = ManifoldModel.torus(n, nodes=8)
    x = m.coords
    u = m.field(np.exp(0.2 * np.cos(2 * np.pi * x[0]) + 0.1 * np.sin(2 * np.pi * x[1])))
    h = 1.3
    tp = conformal_transform(make_triple(m, h, 1.0), u)
    p = (n + 2) / (n - 2)
    c = 4 * (n - 1) / (n - 2)
    P = np.array([0.25, 0.0, 0.0, 0.0])
    idx = (2, 0, 0, 0)
    assert criterion_gap(tp, P).gap == pytest.approx(c * h * u.values[idx] ** (1 - p), rel=1e-9)


def test_dim3_test_function_shape(s3):
    beta = s3.constant(0.1)
    u = dim3_test_function(s3, 0.0, 0.05, beta, 0.5)
    assert u.values[0] == pytest.approx(1 / 0.05 + 0.1)
    assert u.values[-1] == pytest.approx(0.1)
    with pytest.raises(PreconditionFailed):
        dim3_test_function(ManifoldModel.sphere(4, 128), 0.0, 0.05, None, 0.5)


def test_dim3_test_requires_weak_criticality(s3):
    with pytest.raises(PreconditionFailed):
        dim3_weakly_critical_test(make_triple(s3, 0.5, 1.0))
    t = Triple(s3.constant(0.75), s3.field(1.0 - 0.3 * np.cos(s3.r)), s3)
    with pytest.raises(NotAMaximum):
        dim3_weakly_critical_test(t)
