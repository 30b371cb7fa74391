import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sint

from critlab import ManifoldModel, Triple, solve_subcritical
from critlab.blowup import (Bubble, FamilyMember, SphereBubbleProfile, _cap_fraction, bubble,
                            bubble_chart, chart_integral, concentration_diagnostics,
                            cutoff_constant, family_equation_fit, locate_max,
                            manifold_ball_integral, member_from_report, moser_inequality_detail,
                            moser_Q, pohozaev_from_solution, pohozaev_residual, rescale,
                            sphere_counterexample_family)
from critlab.errors import ChartRadiusError, PreconditionFailed
from critlab.functional import critical_exponent, sobolev_K2
from critlab.manifold import sphere_volume
from critlab.profiles import smoothstep_cutoff


@given(st.integers(3, 7), st.floats(0.1, 10.0))
def test_bubble_solves_limit_equation(n, c):
    assert bubble(n, c).residual(np.linspace(0.0, 30.0, 301)) < 1e-12


@given(st.integers(3, 6), st.floats(0.2, 5.0), st.floats(0.1, 20.0))
def test_bubble_tail_against_quadrature(n, c, R):
    b = Bubble(n, c)
    qs = critical_exponent(n)
    g = lambda r: r ** (n - 1) * b(r) ** qs
    total = sint.quad(g, 0, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    inner = sint.quad(g, 0, R, epsabs=0, epsrel=1e-12, limit=400)[0]
    assert b.tail_fraction(R) == pytest.approx(1 - inner / total, abs=1e-9)


def test_bubble_precondition():
    with pytest.raises(PreconditionFailed):
        Bubble(4, 0.0)


@given(st.integers(3, 6), st.floats(0.01, 2.0))
def test_sphere_profile_derivatives(n, mu):
    p = SphereBubbleProfile(n, mu, 1.3)
    r = np.linspace(0.1, 3.0, 15)
    e = 1e-5
    assert np.allclose((p(r + e) - p(r - e)) / (2 * e), p.d1(r), rtol=1e-5, atol=1e-8)
    assert np.allclose((p.d1(r + e) - p.d1(r - e)) / (2 * e), p.d2(r), rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_family_members_have_unit_mass_and_solve_the_equation(n):
    fam = sphere_counterexample_family(n, 0.0, [(0.1, 0.01), (0.01, 1e-4)], nodes=256)
    qs = critical_exponent(n)
    for mb in fam:
        p = mb.profile
        mass = sint.quad(lambda r: sphere_volume(n - 1) * np.sin(r) ** (n - 1) * p(r) ** qs,
                         0, np.pi, points=[mb.mu_t, 10 * mb.mu_t], limit=400, epsrel=1e-12)[0]
        assert mass == pytest.approx(1.0, rel=1e-8)
        c, res = family_equation_fit(mb, np.linspace(0.0, np.pi, 400))
        assert c * sobolev_K2(n) == pytest.approx(1.0, rel=1e-10)
        assert res < 1e-10
        assert p(0.0) == pytest.approx(mb.mu_t ** (-(n - 2) / 2.0))


@given(st.floats(0.5, 50.0))
def test_chart_and_manifold_integrals_agree(R):
    n = 4
    mb = sphere_counterexample_family(n, 0.0, [(0.01, 1e-3)], nodes=256)[0]
    qs = critical_exponent(n)
    a = chart_integral(mb, qs, R)
    b = manifold_ball_integral(mb, qs, R * mb.mu_t)
    assert a == pytest.approx(b, rel=1e-9)


def test_rescaled_member_converges_to_bubble():
    n = 4
    b = Bubble(n, 1.0 / sobolev_K2(n))
    errs = []
    for mu in (1e-2, 1e-3, 1e-4):
        mb = sphere_counterexample_family(n, 0.0, [(0.0, mu)], nodes=256)[0]
        ch = rescale(mb, 10.0, 401)
        # the unit-mass normalization scales the limit bubble by a constant
        errs.append(np.max(np.abs(ch.values / ch.values[0] - b(ch.rho))))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-6
    with pytest.raises(ChartRadiusError):
        rescale(mb, 1e5, 11)


@given(st.integers(3, 6), st.floats(0.05, 3.0), st.floats(0.05, 1.5))
def test_cap_fraction_integrates_to_ball_volume(n, d, delta):
    m = ManifoldModel.sphere(n, 64)
    g = lambda r: sphere_volume(n - 1) * np.sin(r) ** (n - 1) * _cap_fraction(n, np.array([r]),
                                                                              d, delta)[0]
    kinks = sorted({abs(d - delta), min(d + delta, np.pi)})
    vol = sint.quad(g, 0, np.pi, points=kinks, limit=200, epsabs=1e-12)[0]
    assert vol == pytest.approx(float(m.radial_volume_below(delta)), rel=1e-6, abs=1e-9)


def test_concentration_report_structure():
    n = 4
    ds = [1e-1, 1e-2, 1e-3]
    fam = sphere_counterexample_family(n, 0.0, [(d, d * d) for d in ds], nodes=256)
    rep = concentration_diagnostics(fam, 0.0, [1.0, 5.0], [0.2])
    for mb in fam:
        assert rep.ball_mass[(mb.t, 1.0)] < rep.ball_mass[(mb.t, 5.0)] <= 1.0 + 1e-12
    assert rep.eps_R[1.0] == pytest.approx(Bubble(n, 1 / sobolev_K2(n)).tail_fraction(1.0))
    assert set(rep.to_dict()) >= {"ball_mass", "weak_sup", "l2_ratio", "second_ratio", "eps_R"}
    fam3 = sphere_counterexample_family(3, 0.0, [(0.1, 0.01)], nodes=256)
    assert concentration_diagnostics(fam3, 0.0, [1.0], [0.2]).l2_ratio == {}
    with pytest.raises(PreconditionFailed):
        concentration_diagnostics([], 0.0, [1.0], [0.2])


def test_locate_max_refines_off_grid_peak():
    m = ManifoldModel.torus(3, nodes=32)
    c = np.array([0.41, 0.52, 0.6])
    d2 = sum(np.minimum(np.abs(x - cj), 1 - np.abs(x - cj)) ** 2 for x, cj in zip(m.coords, c))
    x, peak = locate_max(m, np.exp(-d2 / 0.02))
    assert np.max(np.abs(x - c)) < 0.2 * m.spacing
    assert peak == pytest.approx(1.0, abs=1e-2)


def _torus_solution():
    m = ManifoldModel.torus(3, nodes=24)
    x = m.coords
    t = Triple(m.constant(1.0),
               m.field(1.0 + 0.5 * np.cos(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[1])), m)
    return t, solve_subcritical(t, 5.0)


def test_moser_pieces():
    t, rep = _torus_solution()
    m = t.manifold
    one = m.constant(1.0)
    assert cutoff_constant(m, one, 2.0) == pytest.approx(0.0, abs=1e-10)
    mb = member_from_report(rep, 0.0)
    with pytest.raises(PreconditionFailed):
        moser_Q(mb, 0.5, one, 1.5, sobolev_K2(3))
    # full support on the unit torus: the volume factor is 1 and k = 1 gives 4k/(k+1)^2 = 1
    q1 = moser_Q(mb, 1.0, one, 1.5, sobolev_K2(3))
    integral = float(np.sum(m.weights * rep.u.values ** rep.q))
    expect = 1.0 - rep.lam * sobolev_K2(3) * 1.5 * integral ** ((rep.q - 2) / rep.q)
    assert q1 == pytest.approx(expect)
    d = m.distance_from(np.zeros(3))
    det = moser_inequality_detail(t, rep, 1.5, m.field(smoothstep_cutoff(d, 0.15)))
    assert det.slack == pytest.approx(det.rhs - det.lhs)
    assert det.B >= 1.0  # Vol^{-2/n} floor on the unit torus


def test_pohozaev_routes():
    b = bubble(5, 2.0)
    ch = bubble_chart(b, 4.0)
    assert pohozaev_residual(ch) < 1e-10
    assert pohozaev_residual(ch, h=0.0, f=1.0, lam=2.0) < 1e-10
    with pytest.raises(ChartRadiusError):
        pohozaev_residual(ch, delta=5.0)
    # a function that does not solve the equation leaves a large residual on the equation route
    assert pohozaev_residual(ch, h=0.0, f=1.0, lam=3.0) > 1e-3
    t, rep = _torus_solution()
    mb = member_from_report(rep, 0.0)
    assert pohozaev_from_solution(t, rep, mb.x_t, 0.2) < 1e-8
    with pytest.raises(ChartRadiusError):
        pohozaev_from_solution(t, rep, mb.x_t, 0.6)
    mem = sphere_counterexample_family(4, 0.0, [(0.0, 0.1)], nodes=256)[0]
    with pytest.raises(PreconditionFailed):
        pohozaev_residual(rescale(mem, 2.0), h=2.0, f=1.0, lam=1.0)


def test_member_from_report_scales():
    t, rep = _torus_solution()
    mb = member_from_report(rep, 0.3)
    assert isinstance(mb, FamilyMember)
    assert mb.m_t == pytest.approx(mb.mu_t ** (-0.5))
    assert mb.m_t == pytest.approx(rep.u.max(), rel=1e-2)
    ch = rescale(mb, 0.3 / mb.mu_t, 101)
    assert ch.values[0] == pytest.approx(1.0, abs=2e-2)
    s = ManifoldModel.sphere(3, 128)
    with pytest.raises(PreconditionFailed):
        locate_max(s, np.cos(s.r - 1.0))
