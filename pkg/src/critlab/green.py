"""Green's function of Delta_g + h by the cutoff-plus-regular-part construction.

The Green function with pole y is written

    G = (beta + eta / r^{n-2}) / ((n-2) omega_{n-1}),

where eta is a smooth cutoff equal to 1 near y and r = d(y, .).  The
regular part beta solves (Delta_g + h) beta = Gamma with
Gamma = -Delta_g(eta / r^{n-2}) - h eta / r^{n-2}, which is integrable.
In dimension 3 the constant term of G - 1/(omega_2 r) at the pole is the
mass M_h(y) = beta(y) / omega_2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .elliptic import coercivity_margin, COERCIVE_THRESHOLD, solve_linear
from .errors import ChartRadiusError, ContradictionFlag, FitUnstable, NotCoercive, \
    PreconditionFailed, ResolutionLimit
from .functional import ClassKind, ContinuationSchedule, Triple, classify
from .manifold import Field, Kind, ManifoldModel, _check, _is_center, _torus_point, \
    gradient_arrays, laplacian_array, radial_laplacian_exact, sphere_volume, spherical_mean
from .profiles import cot_minus_inv, gauss_cells, smoothstep_cutoff


@dataclass
class GreenFunction:
    manifold: ManifoldModel
    pole: object
    h: Field
    delta: float
    beta: Field
    gamma: Field
    singular_prefactor: float
    mass: Optional[float] = None

    def distance(self) -> np.ndarray:
        return self.manifold.distance_from(self.pole)

    def singular_part(self) -> np.ndarray:
        """eta / r^{n-2} at the nodes (infinite at the pole)."""
        d = self.distance()
        n = self.manifold.dim
        with np.errstate(divide="ignore"):
            return smoothstep_cutoff(d, self.delta) * d ** (2.0 - n)

    def values(self) -> np.ndarray:
        """G at the nodes; the pole node holds +inf."""
        return self.singular_prefactor * (self.beta.values + self.singular_part())

    def profile(self, r: np.ndarray) -> np.ndarray:
        """G along the radius on radial models (beta interpolated linearly)."""
        m = self.manifold
        n = m.dim
        b = np.interp(r, m.r, self.beta.values)
        return self.singular_prefactor * (b + smoothstep_cutoff(r, self.delta) * r ** (2.0 - n))


def default_delta(m: ManifoldModel) -> float:
    return 0.3 * m.injectivity_radius


def _singular_data(kind: Kind, n: int, r: np.ndarray, delta: float):
    """phi = eta r^{2-n}, phi' and Delta_g phi for r > 0."""
    eta = smoothstep_cutoff(r, delta)
    e1 = smoothstep_cutoff(r, delta, 1)
    e2 = smoothstep_cutoff(r, delta, 2)
    phi = eta * r ** (2.0 - n)
    dphi = e1 * r ** (2.0 - n) + (2.0 - n) * eta * r ** (1.0 - n)
    # the flat Laplacian of r^{2-n} vanishes identically; only eta terms survive
    lap = -e2 * r ** (2.0 - n) + (n - 3.0) * e1 * r ** (1.0 - n)
    if kind is Kind.ROUND_SPHERE:
        lap = lap - (n - 1.0) * cot_minus_inv(r) * dphi
    return phi, dphi, lap


def _cube_singular_average(n: int) -> float:
    """Average of |x|^{2-n} over the unit cube [-1/2, 1/2]^n (Duffy pyramids)."""
    x, w = np.polynomial.legendre.leggauss(24)
    grids = np.meshgrid(*([x] * (n - 1)), indexing="ij")
    weights = np.ones_like(grids[0])
    wgrid = np.meshgrid(*([w] * (n - 1)), indexing="ij")
    for wg in wgrid:
        weights = weights * wg
    s2 = sum(g ** 2 for g in grids)
    J = float(np.sum(weights * (1.0 + s2) ** ((2.0 - n) / 2.0)))
    a = 0.5
    return 2 * n * a ** 2 / 2.0 * J


def _radial_gamma(m: ManifoldModel, h: Field, delta: float) -> np.ndarray:
    n = m.dim
    x, w = gauss_cells(m.cell_edges, 8)
    phi, _, lap = _singular_data(m.kind, n, x, delta)
    hx = np.interp(x, m.r, h.values)
    dens = m._radial_density(x)
    gam = -lap - hx * phi
    return np.sum(w * dens * gam, axis=1) / m.weights


def _torus_gamma(m: ManifoldModel, h: Field, pole, delta: float) -> np.ndarray:
    n = m.dim
    d = m.distance_from(pole)
    gam = np.zeros(m.shape)
    pos = d > 0
    phi, _, lap = _singular_data(m.kind, n, d[pos], delta)
    gam[pos] = -lap - h.values[pos] * phi
    idx = tuple(np.argwhere(~pos)[0])
    if m.spacing * np.sqrt(n) / 2 >= delta:
        raise PreconditionFailed("grid too coarse for the cutoff radius")
    gam[idx] = -h.values[idx] * m.spacing ** (2.0 - n) * _cube_singular_average(n)
    return gam


def _snap_pole(m: ManifoldModel, pole):
    if m.is_radial:
        if not _is_center(m, pole):
            raise PreconditionFailed("radial models place the pole at the center")
        return 0.0
    c = _torus_point(m, pole)
    idx = np.round(c / m.spacing).astype(int) % m.shape[0]
    return idx * m.spacing


def build_green(m: ManifoldModel, h: Field, pole=0.0, delta: float | None = None,
                tol: float = 1e-10, check_weak: bool = True,
                weak_tol: float = 5e-3) -> GreenFunction:
    """Construct G for Delta_g + h with the given pole.

    Raises
    ------
    NotCoercive
        If Delta_g + h is not coercive.
    PreconditionFailed
        If the weak delta identity fails on the default test basket.
    """
    _check(m, h)
    delta = default_delta(m) if delta is None else float(delta)
    if 2 * delta >= m.injectivity_radius + 1e-12 and m.kind is not Kind.ROUND_SPHERE:
        raise ChartRadiusError("cutoff support 2 delta must stay inside the injectivity radius")
    if 2 * delta >= np.pi and m.kind is Kind.ROUND_SPHERE:
        raise ChartRadiusError("cutoff support 2 delta must stay below pi")
    margin = coercivity_margin(m, h)
    if margin <= COERCIVE_THRESHOLD:
        raise NotCoercive(margin)
    pole = _snap_pole(m, pole)
    gam = _radial_gamma(m, h, delta) if m.is_radial else _torus_gamma(m, h, pole, delta)
    gfield = Field(m, gam, h.symmetry)
    beta = solve_linear(m, h, gfield, tol, assume_coercive=True)
    n = m.dim
    gf = GreenFunction(m, pole, h, delta, beta, gfield, 1.0 / ((n - 2.0) * sphere_volume(n - 1)))
    if n == 3:
        gf.mass = float(beta.values[0] if m.is_radial else beta.values[_pole_index(m, pole)]) \
            / sphere_volume(2)
    if check_weak:
        errs = weak_identity_errors(gf)
        if max(errs) > weak_tol:
            raise PreconditionFailed(f"weak delta identity fails: {max(errs):.3e} > {weak_tol}")
    return gf


def _pole_index(m: ManifoldModel, pole) -> tuple:
    return tuple(np.round(np.asarray(pole) / m.spacing).astype(int) % m.shape[0])


# -- weak identity -----------------------------------------------------------------

@dataclass
class RadialTest:
    """Analytic radial test function with its first two r-derivatives."""

    phi: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]


def default_radial_basket(m: ManifoldModel) -> List[RadialTest]:
    out = []
    if m.kind is Kind.ROUND_SPHERE:
        # smooth functions of the height cos r
        for a in (0.5, 1.0, -0.7):
            out.append(RadialTest(lambda r, a=a: np.exp(a * np.cos(r)),
                                  lambda r, a=a: -a * np.sin(r) * np.exp(a * np.cos(r)),
                                  lambda r, a=a: (a * a * np.sin(r) ** 2 - a * np.cos(r))
                                  * np.exp(a * np.cos(r))))
        out.append(RadialTest(lambda r: np.cos(2 * r), lambda r: -2 * np.sin(2 * r),
                              lambda r: -4 * np.cos(2 * r)))
        out.append(RadialTest(lambda r: np.cos(r) ** 3, lambda r: -3 * np.cos(r) ** 2 * np.sin(r),
                              lambda r: 6 * np.cos(r) * np.sin(r) ** 2 - 3 * np.cos(r) ** 3))
    else:
        R = m.period_or_radius
        for j in (1, 2, 3):
            k = j * np.pi / R
            out.append(RadialTest(lambda r, k=k: np.cos(k * r), lambda r, k=k: -k * np.sin(k * r),
                                  lambda r, k=k: -k * k * np.cos(k * r)))
        out.append(RadialTest(lambda r: 1.0 + 0.0 * r, lambda r: 0.0 * r, lambda r: 0.0 * r))
    return out


def _torus_basket(m: ManifoldModel, count: int = 5, seed: int = 7) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    L = m.period_or_radius
    out = []
    for _ in range(count):
        vals = np.full(m.shape, rng.normal())
        for _ in range(4):
            k = rng.integers(-2, 3, size=m.dim)
            ph = rng.uniform(0, 2 * np.pi)
            arg = sum(2 * np.pi * k[j] * x / L for j, x in enumerate(m.coords))
            vals = vals + rng.normal() * np.cos(arg + ph)
        out.append(vals)
    return out


def _piecewise_gauss(fn: Callable, cuts: np.ndarray, order: int = 8) -> float:
    """Gauss-Legendre quadrature on each interval between consecutive cuts."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = cuts[:-1, None], cuts[1:, None]
    pts = 0.5 * (b - a) * x + 0.5 * (a + b)
    return float(np.sum(0.5 * (b - a) * w * fn(pts)))


def weak_identity_errors(gf: GreenFunction, basket=None) -> List[float]:
    """|int G (Delta phi + h phi) - phi(pole)| / ||phi||_{C^2} over a basket."""
    m = gf.manifold
    n = m.dim
    if m.is_radial:
        basket = default_radial_basket(m) if basket is None else basket
        errs = []
        r = m.r
        hfun = lambda x: np.interp(x, r, gf.h.values)
        # h is piecewise linear between nodes, so integrate cell by cell
        cuts = np.union1d(r[r < 2 * gf.delta], [gf.delta, 2 * gf.delta])
        for tf in basket:
            Lphi = lambda x: radial_laplacian_exact(m.kind, n, x, tf.d1(x), tf.d2(x)) \
                + hfun(x) * tf.phi(x)
            regular = float(np.sum(m.weights * gf.beta.values * Lphi(r)))
            integrand = lambda x: smoothstep_cutoff(x, gf.delta) * x ** (2.0 - n) \
                * Lphi(x) * m._radial_density(x)
            sing = _piecewise_gauss(integrand, cuts)
            lhs = gf.singular_prefactor * (regular + sing)
            norm = sum(np.max(np.abs(g(r))) for g in (tf.phi, tf.d1, tf.d2))
            errs.append(abs(lhs - float(tf.phi(0.0))) / norm)
        return errs
    basket = _torus_basket(m) if basket is None else basket
    errs = []
    x, w = np.polynomial.legendre.leggauss(160)
    rho = gf.delta * (x + 1.0)
    wr = gf.delta * w
    for phi in basket:
        Lphi = laplacian_array(m, phi) + gf.h.values * phi
        regular = float(np.sum(m.weights * gf.beta.values * Lphi))
        means = spherical_mean(m, Lphi, gf.pole, rho)
        sing = float(np.sum(wr * smoothstep_cutoff(rho, gf.delta) * rho
                            * sphere_volume(n - 1) * means))
        lhs = gf.singular_prefactor * (regular + sing)
        grads = gradient_arrays(m, phi)
        hess = 0.0
        for g in grads:
            hess = max(hess, max(np.max(np.abs(gg)) for gg in gradient_arrays(m, g)))
        norm = np.max(np.abs(phi)) + max(np.max(np.abs(g)) for g in grads) + hess
        errs.append(abs(lhs - phi[_pole_index(m, gf.pole)]) / norm)
    return errs


# -- bounds ---------------------------------------------------------------------------

@dataclass
class BoundsReport:
    rho: float
    c_low: float
    c_high: float
    c_grad: float
    limit_error: float
    positive: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_bounds(gf: GreenFunction, rho: float) -> BoundsReport:
    """Empirical constants for c/d^{n-2} <= G <= c^{-1}/d^{n-2} and |grad G|/G >= c/d."""
    m = gf.manifold
    n = m.dim
    d = gf.distance()
    G = gf.values()
    away = d > 0
    positive = bool(np.all(G[away] > 0))
    sel = away & (d < rho)
    scaled = G[sel] * d[sel] ** (n - 2.0)
    if m.is_radial:
        _, dphi, _ = _singular_data(m.kind, n, d[sel], gf.delta)
        dbeta = np.gradient(gf.beta.values, m.spacing)[sel]
        grad = np.abs(gf.singular_prefactor * (dbeta + dphi))
    else:
        comps = gradient_arrays(m, gf.beta.values)
        _, dphi, _ = _singular_data(m.kind, n, d[sel], gf.delta)
        # radial unit vector from the pole with wraparound
        L = m.period_or_radius
        g2 = 0.0
        for j, x in enumerate(m.coords):
            diff = (x - gf.pole[j] + L / 2) % L - L / 2
            g2 = g2 + (comps[j][sel] + dphi * diff[sel] / d[sel]) ** 2
        grad = gf.singular_prefactor * np.sqrt(g2)
    ratio = d[sel] * grad / G[sel]
    r5 = 5 * m.spacing
    k = np.argmin(np.abs(d - r5) + np.where(away, 0.0, np.inf))
    limit = abs(G.flat[k] * d.flat[k] ** (n - 2.0) * (n - 2.0) * sphere_volume(n - 1) - 1.0)
    return BoundsReport(rho, float(np.min(scaled)), float(np.max(scaled)), float(np.min(ratio)),
                        float(limit), positive)


# -- mass (dimension 3) -----------------------------------------------------------------

@dataclass
class MassFit:
    mass: float
    slope: float
    stderr: float
    window: Tuple[float, float]
    points: int


def mass_fit(m: ManifoldModel, h: Field, x=0.0, fit_window: Tuple[float, float] | None = None,
             green: GreenFunction | None = None) -> MassFit:
    """Linear fit G(r) - 1/(omega_2 r) = M + b r over the window."""
    if m.dim != 3:
        raise PreconditionFailed("the mass is defined in dimension 3")
    gf = green or build_green(m, h, x, check_weak=False)
    lo, hi = fit_window if fit_window is not None else (5 * m.spacing, 0.1)
    if lo < 5 * m.spacing * (1 - 1e-9):
        raise FitUnstable(f"window start {lo:.3e} is below five grid steps")
    d = gf.distance()
    sel = (d >= lo * (1 - 1e-12)) & (d <= hi * (1 + 1e-12))
    npts = int(np.count_nonzero(sel))
    if npts < 4:
        raise FitUnstable("fewer than four nodes in the fit window")
    w2 = sphere_volume(2)
    y = gf.values()[sel] - 1.0 / (w2 * d[sel])
    A = np.column_stack([np.ones(npts), d[sel]])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(npts - 2, 1)
    sigma2 = float(np.sum((A @ coef - y) ** 2)) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    # the residuals of a smooth profile are systematic, so the error bar also
    # carries the intercept shift produced by one extra (quadratic) term
    A2 = np.column_stack([A, d[sel] ** 2])
    coef2, *_ = np.linalg.lstsq(A2, y, rcond=None)
    stderr = float(np.hypot(np.sqrt(cov[0, 0]), coef[0] - coef2[0]))
    return MassFit(float(coef[0]), float(coef[1]), stderr, (lo, hi), npts)


def mass(m: ManifoldModel, h: Field, x=0.0, fit_window: Tuple[float, float] | None = None) -> float:
    """Constant term M_h(x) of G - 1/(omega_2 d) at x (dimension 3)."""
    return mass_fit(m, h, x, fit_window).mass


@dataclass
class CriteriaReport:
    points: list
    masses: List[float]
    skipped_maxima: int
    all_nonpositive: bool
    any_zero: bool
    classification: str
    B_h: float
    B_bracket: Tuple[float, float]
    band: float
    tol: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["points"] = [np.atleast_1d(p).tolist() for p in self.points]
        return d


def critical_shift(t: Triple, tol_B: float = 1e-3, step: float = 0.05,
                   schedule: ContinuationSchedule | None = None, band_rel: float = 0.02,
                   max_expand: int = 40):
    """Bisection for B(h) = inf{B : classify(h + B) is not Subcritical}.

    Shifts that lose coercivity count as lying below the set; shifts whose
    minimizers collapse onto the grid (ResolutionLimit) count as lying in
    it.  Returns the estimate, the final bracket and the classification of
    the unshifted triple (None if it is not coercive).
    """
    m = t.manifold

    def below(B):
        tt = t.with_h(t.h + B)
        if tt.margin() <= COERCIVE_THRESHOLD:
            return True, None
        try:
            c = classify(tt, schedule, band_rel)
        except ResolutionLimit:
            # minimizers concentrating below the grid scale: the infimum is not attained
            if B == 0.0:
                raise
            return False, None
        return c.kind is ClassKind.SUBCRITICAL, c

    s0, c0 = below(0.0)
    direction = 1.0 if s0 else -1.0
    lo, hi = (0.0, None) if s0 else (None, 0.0)
    for k in range(max_expand):
        B = direction * step * 2 ** k
        s, _ = below(B)
        if s:
            lo = B
        else:
            hi = B
        if lo is not None and hi is not None:
            break
    if lo is None or hi is None:
        raise PreconditionFailed("could not bracket the critical shift")
    while hi - lo > tol_B:
        mid = 0.5 * (lo + hi)
        if below(mid)[0]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), (lo, hi), c0


def mass_criteria(t: Triple, tol: float = 1e-3, max_points: int = 8,
                  schedule: ContinuationSchedule | None = None,
                  band_rel: float = 0.02) -> CriteriaReport:
    """Masses at the maxima of f, sign flags and the critical shift B(h).

    On radial models only the center can carry a pole, so the remaining
    maxima are counted as skipped.  Raises ContradictionFlag when the
    triple is weakly critical yet a maximum carries a mass above tol.
    """
    m = t.manifold
    if m.dim != 3:
        raise PreconditionFailed("mass criteria are dimension-3 statements")
    if t.factor is not None:
        raise PreconditionFailed("mass criteria need a triple in the base metric")
    if m.is_radial:
        pts = [0.0] if t.maxima_mask[0] else []
        skipped = int(np.count_nonzero(t.maxima_mask)) - len(pts)
    else:
        allpts = t.maxima
        pick = np.linspace(0, len(allpts) - 1, min(max_points, len(allpts))).astype(int)
        pts = [allpts[i] for i in pick]
        skipped = len(allpts) - len(pts)
    masses = [mass(m, t.h, p) for p in pts]
    B, bracket, c0 = critical_shift(t, schedule=schedule, band_rel=band_rel)
    kind = c0.kind.value if c0 is not None else "NotCoercive"
    rep = CriteriaReport(pts, masses, skipped, all(M <= tol for M in masses),
                         any(abs(M) <= tol for M in masses), kind, B, bracket,
                         band_rel * t.ceiling.value, tol)
    if c0 is not None and c0.kind is ClassKind.WEAKLY_CRITICAL and any(M > tol for M in masses):
        raise ContradictionFlag("weakly critical triple with positive mass at a maximum of f", rep)
    return rep
