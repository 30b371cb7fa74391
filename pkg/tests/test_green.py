import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critlab import ManifoldModel, Triple, build_green, make_triple, mass, mass_fit
from critlab import green as green_mod
from critlab.errors import ContradictionFlag, FitUnstable, NotCoercive, PreconditionFailed
from critlab.functional import ClassKind, Classification
from critlab.green import critical_shift, mass_criteria, verify_bounds, weak_identity_errors


def closed_form_green_s3(h, r):
    """Green function of Delta + h on S^3 for constant h = 1 - nu^2 < 1."""
    nu = np.sqrt(1.0 - h)
    return np.sin(nu * (np.pi - r)) / (4 * np.pi * np.sin(nu * np.pi) * np.sin(r))


def closed_form_mass_s3(h):
    nu = np.sqrt(1.0 - h)
    return -nu / np.tan(nu * np.pi) / (4 * np.pi)


@pytest.mark.parametrize("h", [0.3, 0.75, 0.9])
def test_green_profile_matches_closed_form(s3, h):
    gf = build_green(s3, s3.constant(h))
    r = np.linspace(0.05, 3.0, 60)
    rel = np.abs(gf.profile(r) / closed_form_green_s3(h, r) - 1.0)
    assert np.max(rel) < 1e-5


@given(st.floats(0.2, 0.95))
def test_mass_matches_closed_form(h):
    m = ManifoldModel.sphere(3, 4096)
    assert mass(m, m.constant(h)) == pytest.approx(closed_form_mass_s3(h), abs=2e-4)


def test_mass_fit_reports_window_and_error(s3):
    fit = mass_fit(s3, s3.constant(0.65))
    assert fit.window[0] == pytest.approx(5 * s3.spacing)
    assert fit.points >= 4
    assert abs(fit.mass - closed_form_mass_s3(0.65)) <= max(5 * fit.stderr, 1e-5)
    with pytest.raises(FitUnstable):
        mass_fit(s3, s3.constant(0.65), fit_window=(s3.spacing, 0.1))
    with pytest.raises(PreconditionFailed):
        mass_fit(ManifoldModel.sphere(4, 256), None)


def test_weak_identity_on_sphere_and_torus(s3):
    assert max(weak_identity_errors(build_green(s3, s3.constant(0.75)))) < 1e-5
    m = ManifoldModel.torus(3, nodes=32)
    x = m.coords
    h = m.field(1.0 + 0.3 * np.cos(2 * np.pi * x[0]))
    gf = build_green(m, h, np.zeros(3))
    assert max(weak_identity_errors(gf)) < 5e-3


def test_green_requires_coercivity(s3):
    with pytest.raises(NotCoercive):
        build_green(s3, s3.constant(-1.0))


def test_bounds_on_sphere(s3):
    rep = verify_bounds(build_green(s3, s3.constant(0.75)), 1.0)
    assert rep.positive
    assert 0 < rep.c_low <= rep.c_high
    assert rep.c_grad > 0
    assert rep.limit_error < 1e-3


def test_torus_mass_at_two_poles_agrees_for_constant_h():
    m = ManifoldModel.torus(3, nodes=32)
    h = m.constant(2.0)
    a = mass(m, h, np.zeros(3), fit_window=(0.16, 0.3))
    b = mass(m, h, np.array([0.5, 0.25, 0.0]), fit_window=(0.16, 0.3))
    assert a == pytest.approx(b, abs=1e-10)


def test_critical_shift_on_round_sphere():
    # constants minimize for h <= 3/4, so the flip happens at the lower band edge
    m = ManifoldModel.sphere(3, 512)
    t = make_triple(m, 0.5, 1.0)
    B, (lo, hi), c0 = critical_shift(t, tol_B=1e-3)
    assert c0.kind is ClassKind.SUBCRITICAL
    assert hi - lo <= 1e-3
    assert B == pytest.approx(0.75 * 0.98 - 0.5, abs=2e-3)


def test_mass_criteria_counts_skipped_maxima():
    m = ManifoldModel.sphere(3, 256)
    t = Triple(m.constant(0.5), m.field(1.0 + 0.3 * np.cos(m.r)), m)
    rep = mass_criteria(t)
    assert rep.skipped_maxima == 0 and len(rep.masses) == 1
    assert rep.masses[0] > 0 and not rep.all_nonpositive
    flat = mass_criteria(make_triple(m, 0.5, 1.0))
    assert flat.skipped_maxima == m.shape[0] - 1


def test_mass_criteria_flags_contradiction(monkeypatch):
    m = ManifoldModel.sphere(3, 256)
    t = Triple(m.constant(0.5), m.field(1.0 + 0.3 * np.cos(m.r)), m)

    def fake_shift(tt, **kw):
        c = Classification(ClassKind.WEAKLY_CRITICAL, 0.0, 1.0, 1.0, 0.02)
        return 0.0, (0.0, 0.0), c

    monkeypatch.setattr(green_mod, "critical_shift", fake_shift)
    with pytest.raises(ContradictionFlag) as info:
        mass_criteria(t)
    assert info.value.report.masses[0] > 0
