"""Blow-up rescaling, bubbles, concentration diagnostics, iteration and Pohozaev checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate as sint
from scipy import special
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import ChartRadiusError, PreconditionFailed
from .functional import MinimizeReport, Triple, b0_lower_estimate, critical_exponent, sobolev_K2
from .manifold import Field, Kind, ManifoldModel, _is_center, geodesic_distance, \
    gradient_norm_sq, integrate_array, laplacian_array, radial_laplacian_exact, spherical_mean, \
    sphere_volume
from .profiles import gauss_cells


# -- analytic zonal profiles -----------------------------------------------------------

@dataclass(frozen=True)
class SphereBubbleProfile:
    """u(r) = A (mu^2 + 1 - cos r)^{-(n-2)/2} on the unit sphere, r the distance to its peak."""

    n: int
    mu: float
    A: float = 1.0

    def _w(self, r):
        return self.mu ** 2 + 2.0 * np.sin(0.5 * np.asarray(r, dtype=float)) ** 2

    def __call__(self, r):
        return self.A * self._w(r) ** (-(self.n - 2) / 2.0)

    def d1(self, r):
        a = (self.n - 2) / 2.0
        return -a * self.A * self._w(r) ** (-a - 1.0) * np.sin(r)

    def d2(self, r):
        a = (self.n - 2) / 2.0
        w = self._w(r)
        return -a * self.A * (-(a + 1.0) * w ** (-a - 2.0) * np.sin(r) ** 2
                              + w ** (-a - 1.0) * np.cos(r))


@dataclass(frozen=True)
class Bubble:
    """Standard bubble (1 + c |x|^2/(n(n-2)))^{-(n-2)/2} with c = amplitude_scale."""

    n: int
    amplitude_scale: float

    def __post_init__(self):
        if not self.amplitude_scale > 0:
            raise PreconditionFailed("amplitude_scale must be positive")

    @property
    def _c(self) -> float:
        return self.amplitude_scale / (self.n * (self.n - 2.0))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 + self._c * r * r) ** (-(self.n - 2) / 2.0)

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        a = (self.n - 2) / 2.0
        return -2.0 * a * self._c * r * (1.0 + self._c * r * r) ** (-a - 1.0)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        a = (self.n - 2) / 2.0
        c = self._c
        w = 1.0 + c * r * r
        return -2.0 * a * c * w ** (-a - 1.0) + 4.0 * a * (a + 1.0) * c * c * r * r * w ** (-a - 2.0)

    def sample(self, m: ManifoldModel) -> Field:
        """Sample on a radial model (about its center) or a torus (about the origin)."""
        return m.field(self(m.distance_from(0.0)))

    def residual(self, r) -> float:
        """max |Delta_e u - c u^{(n+2)/(n-2)}| / max |c u^{(n+2)/(n-2)}| at the points r."""
        r = np.asarray(r, dtype=float)
        lap = radial_laplacian_exact(Kind.EUCLIDEAN_BALL, self.n, r, self.d1(r), self.d2(r))
        rhs = self.amplitude_scale * self(r) ** ((self.n + 2.0) / (self.n - 2.0))
        return float(np.max(np.abs(lap - rhs)) / np.max(np.abs(rhs)))

    def tail_fraction(self, R) -> np.ndarray:
        """Share of int u^{2*} dx lying outside B(0, R)."""
        R = np.asarray(R, dtype=float)
        v = self._c * R * R
        return 1.0 - special.betainc(self.n / 2.0, self.n / 2.0, v / (1.0 + v))


def bubble(n: int, amplitude_scale: float) -> Bubble:
    return Bubble(n, amplitude_scale)


# -- family members --------------------------------------------------------------------

@dataclass
class FamilyMember:
    """One member of a family u_t with its peak data.

    When `profile` is set, u is zonal about x_t on the unit sphere and the
    analytic profile (a callable of the distance to x_t, with d1 and d2) is
    used by every diagnostic; `u` then holds its samples in the frame whose
    north pole is x_t.
    """

    u: Field
    t: float
    x_t: object
    mu_t: float
    lambda_t: float
    q_t: float
    profile: Optional[object] = None
    norm_constant: float = 1.0

    @property
    def m_t(self) -> float:
        n = self.u.manifold.dim
        return self.mu_t ** (-(n - 2) / 2.0)

    @property
    def dim(self) -> int:
        return self.u.manifold.dim


def locate_max(m: ManifoldModel, u: np.ndarray) -> Tuple[object, float]:
    """Grid argmax refined by a per-axis quadratic fit; returns (point, peak value)."""
    if m.is_radial:
        i = int(np.argmax(u))
        if i != 0:
            raise PreconditionFailed("radial members must peak at the center")
        return 0.0, float(u[0])
    idx = np.unravel_index(int(np.argmax(u)), u.shape)
    h = m.spacing
    x = np.array(idx, dtype=float) * h
    peak = float(u[idx])
    corr = 0.0
    for j in range(m.dim):
        lo = list(idx)
        hi = list(idx)
        lo[j] = (idx[j] - 1) % u.shape[j]
        hi[j] = (idx[j] + 1) % u.shape[j]
        um, up = u[tuple(lo)], u[tuple(hi)]
        den = um - 2.0 * peak + up
        if den < 0:
            s = 0.5 * (um - up) / den
            x[j] += s * h
            corr += -0.125 * (up - um) ** 2 / den
    return np.mod(x, m.period_or_radius), peak + corr


def member_from_report(report: MinimizeReport, t: float) -> FamilyMember:
    m = report.u.manifold
    x, peak = locate_max(m, report.u.values)
    mu = peak ** (-2.0 / (m.dim - 2.0))
    return FamilyMember(report.u, t, x, mu, report.lam, report.q)


def _zonal_edges(scale: float, rmax: float, extra: Sequence[float] = ()) -> np.ndarray:
    lo = max(scale * 1e-4, 1e-300)
    pts = [np.linspace(0.0, lo, 3), np.geomspace(lo, rmax, 1200)]
    extra = [e for e in extra if 0.0 < e < rmax]
    return np.unique(np.concatenate(pts + [np.array(extra)]))


def _zonal_integral(n: int, g: Callable[[np.ndarray], np.ndarray], rmax: float, scale: float,
                    extra: Sequence[float] = ()) -> float:
    """omega_{n-1} int_0^rmax g(r) sin^{n-1} r dr with cells graded from the scale."""
    x, w = gauss_cells(_zonal_edges(scale, rmax, extra), 10)
    return float(sphere_volume(n - 1) * np.sum(w * g(x) * np.sin(x) ** (n - 1)))


def sphere_counterexample_family(n: int, x0, schedule: Sequence[Tuple[object, float]],
                                 nodes: int = 4096) -> List[FamilyMember]:
    """Members mu^{(n-2)/2} (mu^2 + 1 - cos r_t)^{-(n-2)/2}, renormalized to unit 2*-mass."""
    qs = critical_exponent(n)
    m = ManifoldModel.sphere(n, nodes)
    out = []
    for j, (xt, mu) in enumerate(schedule):
        bare = SphereBubbleProfile(n, mu, mu ** ((n - 2) / 2.0))
        mass = _zonal_integral(n, lambda r: bare(r) ** qs, np.pi, mu)
        C = mass ** (-1.0 / qs)
        prof = SphereBubbleProfile(n, mu, C * bare.A)
        peak = float(prof(0.0))
        mu_t = peak ** (-2.0 / (n - 2.0))
        out.append(FamilyMember(m.field(prof(m.r)), float(j), xt, mu_t, 1.0 / sobolev_K2(n), qs,
                                prof, C))
    return out


def family_equation_fit(member: FamilyMember, r: np.ndarray) -> Tuple[float, float]:
    """Least-squares c with Delta u + n(n-2)/4 u = c u^{(n+2)/(n-2)} at r; (c, relative residual)."""
    p = member.profile
    if p is None:
        raise PreconditionFailed("the fit needs an analytic member")
    n = member.dim
    r = np.asarray(r, dtype=float)
    lhs = radial_laplacian_exact(Kind.ROUND_SPHERE, n, r, p.d1(r), p.d2(r)) \
        + n * (n - 2) / 4.0 * p(r)
    rhs = p(r) ** ((n + 2.0) / (n - 2.0))
    c = float(np.dot(lhs, rhs) / np.dot(rhs, rhs))
    return c, float(np.max(np.abs(lhs - c * rhs)) / np.max(np.abs(c * rhs)))


# -- chart fields ------------------------------------------------------------------------

@dataclass
class ChartField:
    """Radial samples of a rescaled function on a normal-coordinate chart ball.

    Physical radius = scale * rho and physical value = amplitude * values.
    `lap_e` is the Euclidean Laplacian of the chart function in chart
    coordinates; `tangential` and `det` are the rescaled metric samples.
    """

    dim: int
    kind: Kind
    rho: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    lap_e: np.ndarray
    scale: float = 1.0
    amplitude: float = 1.0
    tangential: Optional[np.ndarray] = None
    det: Optional[np.ndarray] = None
    mean: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    q: float = 0.0
    source: Optional[np.ndarray] = None

    @property
    def radius(self) -> float:
        return float(self.rho[-1])

    @property
    def flat(self) -> bool:
        return self.kind is not Kind.ROUND_SPHERE


def _metric_samples(kind: Kind, n: int, phys: np.ndarray):
    if kind is Kind.ROUND_SPHERE:
        s = np.where(phys == 0, 1.0, np.sin(phys) / np.where(phys == 0, 1.0, phys))
        return s ** 2, s ** (n - 1)
    one = np.ones_like(phys)
    return one, one


def bubble_chart(b: Bubble, radius: float, resolution: int = 2001) -> ChartField:
    """Exact bubble on a flat chart ball."""
    rho = np.linspace(0.0, radius, resolution)
    lap = radial_laplacian_exact(Kind.EUCLIDEAN_BALL, b.n, rho, b.d1(rho), b.d2(rho))
    one = np.ones_like(rho)
    return ChartField(b.n, Kind.EUCLIDEAN_BALL, rho, b(rho), b.d1(rho), lap, 1.0, 1.0, one, one,
                      None, critical_exponent(b.n))


def rescale(member: FamilyMember, radius: float, resolution: int = 2001) -> ChartField:
    """u~(x) = u(exp_{x_t}(mu_t x)) / m_t sampled on B(0, radius)."""
    m = member.u.manifold
    n = m.dim
    mu, amp = member.mu_t, member.m_t
    if radius * mu >= m.injectivity_radius:
        raise ChartRadiusError(f"radius * mu_t = {radius * mu:.3g} reaches the injectivity radius")
    rho = np.linspace(0.0, radius, resolution)
    phys = mu * rho
    tang, det = _metric_samples(m.kind, n, phys)
    flat_kind = Kind.EUCLIDEAN_BALL
    if member.profile is not None:
        p = member.profile
        vals = p(phys) / amp
        d1 = p.d1(phys) * mu / amp
        d2 = p.d2(phys) * mu * mu / amp
        lap = radial_laplacian_exact(flat_kind, n, rho, d1, d2)
        return ChartField(n, Kind.ROUND_SPHERE, rho, vals, d1, lap, mu, amp, tang, det, None,
                          member.q_t)
    if m.is_radial:
        if not _is_center(m, member.x_t):
            raise PreconditionFailed("radial members are rescaled about the center")
        sp = CubicSpline(np.concatenate((-m.r[:0:-1], m.r)),
                         np.concatenate((member.u.values[:0:-1], member.u.values)))
        vals = sp(phys) / amp
        d1 = sp(phys, 1) * mu / amp
        d2 = sp(phys, 2) * mu * mu / amp
        lap = radial_laplacian_exact(flat_kind, n, rho, d1, d2)
        mean = None
        if m.kind is Kind.EUCLIDEAN_BALL:
            def mean(arr, r, _m=m):
                s = CubicSpline(np.concatenate((-_m.r[:0:-1], _m.r)),
                                np.concatenate((arr[:0:-1], arr)))
                return s(r)
        return ChartField(n, m.kind, rho, vals, d1, lap, mu, amp, tang, det, mean, member.q_t,
                          member.u.values if mean is not None else None)
    # flat torus: exact spherical means of the trigonometric interpolant
    c = member.x_t
    u = member.u.values
    vals = spherical_mean(m, u, c, phys) / amp
    d1 = spherical_mean(m, u, c, phys, derivative=True) * mu / amp
    lap = spherical_mean(m, laplacian_array(m, u), c, phys) * mu * mu / amp

    def mean(arr, r, _m=m, _c=c):
        return spherical_mean(_m, arr, _c, r)

    return ChartField(n, Kind.FLAT_TORUS, rho, vals, d1, lap, mu, amp, tang, det, mean, member.q_t,
                      u)


def chart_integral(member: FamilyMember, alpha: float, radius: float) -> float:
    """int_{B(0, radius)} u~^alpha dv~ in chart coordinates (analytic members)."""
    p = member.profile
    if p is None:
        raise PreconditionFailed("chart_integral needs an analytic member")
    n, mu, amp = member.dim, member.mu_t, member.m_t
    edges = np.unique(np.concatenate((np.linspace(0.0, min(radius, 1.0), 50),
                                      np.geomspace(min(radius, 1.0), radius, 400))))
    x, w = gauss_cells(edges, 10)
    phys = mu * x
    _, det = _metric_samples(Kind.ROUND_SPHERE, n, phys)
    g = (p(phys) / amp) ** alpha
    return float(sphere_volume(n - 1) * np.sum(w * g * x ** (n - 1) * det))


def manifold_ball_integral(member: FamilyMember, alpha: float, r: float) -> float:
    """int_{B(x_t, r)} u^alpha dv on the sphere (analytic members)."""
    p = member.profile
    if p is None:
        raise PreconditionFailed("manifold_ball_integral needs an analytic member")
    return _zonal_integral(member.dim, lambda s: p(s) ** alpha, r, member.mu_t)


# -- concentration diagnostics ---------------------------------------------------------

@dataclass
class ConcentrationReport:
    x0: object
    ball_mass: Dict[Tuple[float, float], float]
    weak_sup: Dict[float, float]
    strong_sup: Dict[float, float]
    l2_ratio: Dict[Tuple[float, float], float]
    second_ratio: Dict[float, float]
    eps_R: Dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def keyed(d):
            return {",".join(f"{v:g}" for v in np.atleast_1d(k)): val for k, val in d.items()}
        return {"x0": np.atleast_1d(self.x0).tolist(), "ball_mass": keyed(self.ball_mass),
                "weak_sup": keyed(self.weak_sup), "strong_sup": keyed(self.strong_sup),
                "l2_ratio": keyed(self.l2_ratio), "second_ratio": keyed(self.second_ratio),
                "eps_R": keyed(self.eps_R)}


def _cap_fraction(n: int, r: np.ndarray, d: float, delta: float) -> np.ndarray:
    """Share of the geodesic sphere S(x_t, r) lying in B(x0, delta), d = d(x_t, x0)."""
    r = np.asarray(r, dtype=float)
    if d == 0.0:
        return (r < delta).astype(float)
    sr = np.sin(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (np.cos(delta) - np.cos(r) * np.cos(d)) / (sr * np.sin(d))
    c = np.where(sr == 0, np.where(np.abs(r - d) < delta, -2.0, 2.0), c)
    cc = np.clip(c, -1.0, 1.0)
    half = 0.5 * special.betainc((n - 1) / 2.0, 0.5, 1.0 - cc * cc)
    frac = np.where(cc >= 0, half, 1.0 - half)
    return np.where(c <= -1.0, 1.0, np.where(c >= 1.0, 0.0, frac))


def _sup_on_ray(g: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> float:
    x = np.geomspace(lo, hi, 4000)
    v = g(x)
    i = int(np.argmax(v))
    a, b = x[max(i - 1, 0)], x[min(i + 1, x.size - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -g(np.array([s]))[0], bounds=(a, b), method="bounded",
                              options={"xatol": 1e-14 * b})
        return float(max(v[i], -res.fun))
    return float(v[i])


def _analytic_diagnostics(member: FamilyMember, x0, R_list, delta_list, f_value: float,
                          rep: ConcentrationReport) -> None:
    n = member.dim
    p = member.profile
    mu = member.mu_t
    qs = critical_exponent(n)
    a = (n - 2) / 2.0
    t = member.t
    for R in R_list:
        rr = min(R * mu, np.pi)
        rep.ball_mass[(t, R)] = f_value * _zonal_integral(n, lambda s: p(s) ** qs, rr, mu)
    rep.weak_sup[t] = _sup_on_ray(lambda s: s ** a * p(s), mu * 1e-4, np.pi)
    rep.strong_sup[t] = _sup_on_ray(lambda s: s ** (n - 2) * mu ** (-a) * p(s), mu * 1e-4, np.pi)
    d = geodesic_distance(member.u.manifold, member.x_t, x0)
    rep.second_ratio[t] = d / mu
    if n >= 4:
        total = _zonal_integral(n, lambda s: p(s) ** 2, np.pi, mu)
        for dl in delta_list:
            kinks = (abs(d - dl), d + dl)
            inside = _zonal_integral(n, lambda s: p(s) ** 2 * _cap_fraction(n, s, d, dl), np.pi,
                                     mu, kinks)
            rep.l2_ratio[(t, dl)] = inside / total


def _grid_diagnostics(member: FamilyMember, x0, R_list, delta_list, f: Optional[Field],
                      rep: ConcentrationReport) -> None:
    m = member.u.manifold
    n = m.dim
    u = member.u.values
    qs = critical_exponent(n)
    a = (n - 2) / 2.0
    mu = member.mu_t
    t = member.t
    fv = np.ones_like(u) if f is None else f.values
    dt = m.distance_from(member.x_t)
    for R in R_list:
        rep.ball_mass[(t, R)] = integrate_array(m, fv * u ** qs * (dt <= R * mu))
    rep.weak_sup[t] = float(np.max(dt ** a * u))
    rep.strong_sup[t] = float(np.max(dt ** (n - 2) * mu ** (-a) * u))
    rep.second_ratio[t] = geodesic_distance(m, member.x_t, x0) / mu
    if n >= 4:
        d0 = m.distance_from(x0)
        total = integrate_array(m, u * u)
        for dl in delta_list:
            rep.l2_ratio[(t, dl)] = integrate_array(m, u * u * (d0 < dl)) / total


def concentration_diagnostics(family: Sequence[FamilyMember], x0, R_list: Sequence[float],
                              delta_list: Sequence[float], f: Optional[Field] = None
                              ) -> ConcentrationReport:
    """Tables of the concentration quantities over a family sorted by t.

    l2_ratio entries are only filled when n >= 4.
    """
    if len(family) == 0:
        raise PreconditionFailed("family is empty")
    n = family[0].dim
    rep = ConcentrationReport(x0, {}, {}, {}, {}, {})
    b = Bubble(n, 1.0 / sobolev_K2(n) * (1.0 if f is None else f.max()) ** (2.0 / n) * 1.0)
    for R in R_list:
        rep.eps_R[R] = float(b.tail_fraction(R))
    for mem in sorted(family, key=lambda z: z.t):
        if mem.profile is not None:
            fval = 1.0 if f is None else f.max()
            _analytic_diagnostics(mem, x0, R_list, delta_list, fval, rep)
        else:
            _grid_diagnostics(mem, x0, R_list, delta_list, f, rep)
    return rep


# -- iteration inequality ------------------------------------------------------------

def _support(eta: Field) -> np.ndarray:
    return eta.values > 0


def moser_Q(t_member: FamilyMember, k: float, eta: Field, sup_abs_f: float, K2: float,
            volume_factor: bool = True) -> float:
    """4k/(k+1)^2 - lambda_t V K^2 Sup|f| (int_{Supp eta} u^q)^{(q-2)/q}.

    V = Vol^{2/q - 2/2*} equals 1 at the critical exponent.
    """
    if k < 1:
        raise PreconditionFailed("k must be at least 1")
    m = t_member.u.manifold
    n = m.dim
    q = t_member.q_t
    qs = critical_exponent(n)
    u = t_member.u.values
    local = integrate_array(m, np.abs(u) ** q * _support(eta))
    V = m.volume ** (2.0 / q - 2.0 / qs) if volume_factor else 1.0
    return float(4.0 * k / (k + 1.0) ** 2
                 - t_member.lambda_t * V * K2 * sup_abs_f * local ** ((q - 2.0) / q))


def cutoff_constant(m: ManifoldModel, eta: Field, k: float) -> float:
    """Sup over the grid of |2/(k+1) |grad eta|^2 + 2(k-1)/(k+1)^2 eta Delta eta|."""
    g2 = gradient_norm_sq(m, eta)
    le = laplacian_array(m, eta.values)
    return float(np.max(np.abs(2.0 / (k + 1.0) * g2
                               + 2.0 * (k - 1.0) / (k + 1.0) ** 2 * eta.values * le)))


@dataclass
class MoserCheck:
    slack: float
    Q: float
    lhs: float
    rhs: float
    B: float
    C0: float
    C_eta: float


def moser_inequality_detail(t: Triple, report: MinimizeReport, k: float, eta: Field) -> MoserCheck:
    m = t.manifold
    if t.factor is not None:
        raise PreconditionFailed("the iteration check runs on the base metric")
    n = m.dim
    qs = critical_exponent(n)
    u = report.u.values
    supp = _support(eta)
    member = FamilyMember(report.u, 0.0, None, 1.0, report.lam, report.q)
    S = float(np.max(np.abs(t.f.values[supp]))) if np.any(supp) else 0.0
    Q = moser_Q(member, k, eta, S, sobolev_K2(n))
    w = m.field(eta.values * u ** ((k + 1.0) / 2.0))
    B = b0_lower_estimate(m, [m.constant(1.0), report.u, w])
    C0 = float(np.max(np.abs(t.h.values)))
    Ce = cutoff_constant(m, eta, k)
    lhs = Q * integrate_array(m, np.abs(w.values) ** qs) ** (2.0 / qs)
    rhs = (4.0 * k / (k + 1.0) ** 2 * B + C0 + Ce) * integrate_array(m, u ** (k + 1.0) * supp)
    return MoserCheck(float(rhs - lhs), Q, float(lhs), float(rhs), B, C0, Ce)


def moser_inequality_check(t: Triple, report: MinimizeReport, k: float, eta: Field) -> float:
    """Slack RHS - LHS of the localized iteration inequality for a computed solution."""
    return moser_inequality_detail(t, report, k, eta).slack


# -- Pohozaev --------------------------------------------------------------------------

def pohozaev_residual(chart: ChartField, h=None, f=None, lam: Optional[float] = None,
                      delta: Optional[float] = None) -> float:
    """|LHS - RHS| of the radial Pohozaev identity on B(0, delta), normalized.

    LHS = int (x.grad u + (n-2)/2 u) Delta_e u dx and
    RHS = delta int_{|x|=delta} (|grad u|^2/2 - (du/dnu)^2) - (n-2)/2 int_{|x|=delta} u du/dnu.
    Delta_e u comes from the chart samples, or from the equation
    Delta u + h u = lam f u^{q-1} when h, f and lam are given.  The
    result is divided by omega_{n-1} delta^{n-2} max u^2.
    """
    if chart.rho.ndim != 1:
        raise PreconditionFailed("the chart is not radial")
    n = chart.dim
    rho = chart.rho
    delta = chart.radius if delta is None else float(delta)
    if delta > chart.radius * (1 + 1e-12):
        raise ChartRadiusError("delta exceeds the chart radius")
    u, du = chart.values, chart.d1
    if h is not None and f is not None and lam is not None:
        if not chart.flat:
            raise PreconditionFailed("the equation route needs a flat chart")
        q = chart.q
        amp, s = chart.amplitude, chart.scale
        if chart.mean is not None and chart.source is not None:
            uu = chart.source
            hv = h.values if isinstance(h, Field) else float(h)
            fv = f.values if isinstance(f, Field) else float(f)
            src = lam * fv * np.abs(uu) ** (q - 2.0) * uu - hv * uu
            lap = s * s / amp * chart.mean(src, s * rho)
            return _pohozaev_quadrature(n, rho, u, du, lap, delta)
        hv = float(h.max()) if isinstance(h, Field) else float(h)
        fv = float(f.max()) if isinstance(f, Field) else float(f)
        phys = amp * u
        lap = s * s / amp * (lam * fv * phys ** (q - 1.0) - hv * phys)
    else:
        lap = chart.lap_e
    return _pohozaev_quadrature(n, rho, u, du, lap, delta)


def _pohozaev_quadrature(n: int, rho, u, du, lap, delta: float) -> float:
    a = (n - 2) / 2.0
    sel = rho <= delta * (1 + 1e-12)
    r, uu, d, L = rho[sel], u[sel], du[sel], lap[sel]
    om = sphere_volume(n - 1)
    integrand = (r * d + a * uu) * L * om * r ** (n - 1)
    lhs = sint.simpson(integrand, x=r)
    ub, db = uu[-1], d[-1]
    R = r[-1]
    area = om * R ** (n - 1)
    rhs = R * area * (0.5 * db * db - db * db) - a * area * ub * db
    scale = om * R ** (n - 2) * max(float(np.max(uu * uu)), 1e-300)
    return float(abs(lhs - rhs) / scale)


def pohozaev_from_solution(t: Triple, report: MinimizeReport, center, delta: float,
                           resolution: int = 2001) -> float:
    """Pohozaev residual of a torus solution on B(center, delta), Delta u from the equation.

    The spherical mean commutes with the flat Laplacian, so the mean of
    lambda f u^{q-1} - h u is the Laplacian of the mean of u.
    """
    m = t.manifold
    if m.kind is not Kind.FLAT_TORUS:
        raise PreconditionFailed("the solution route runs on the flat torus")
    if delta >= m.injectivity_radius:
        raise ChartRadiusError("delta must stay below the injectivity radius")
    u = report.u.values
    rho = np.linspace(0.0, delta, resolution)
    ub = spherical_mean(m, u, center, rho)
    db = spherical_mean(m, u, center, rho, derivative=True)
    src = report.lam * t.f.values * u ** (report.q - 1.0) - t.h.values * u
    lap = spherical_mean(m, src, center, rho)
    return _pohozaev_quadrature(m.dim, rho, ub, db, lap, delta)
