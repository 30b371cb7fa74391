"""Energies, the infimum lambda_{h,f,g}, subcritical solvers and classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .elliptic import COERCIVE_THRESHOLD, coercivity_margin, solve_array
from .errors import (CeilingViolation, DenominatorNonpositive, NoConvergence,
                     NonpositiveIterate, NotCoercive, PreconditionFailed, ResolutionLimit)
from .manifold import Field, ManifoldModel, _check, dirichlet_energy, integrate_array, \
    laplacian_array, sphere_volume


def critical_exponent(n: int) -> float:
    """2* = 2n/(n-2)."""
    return 2.0 * n / (n - 2.0)


def sobolev_K2(n: int) -> float:
    """Square of the best first Sobolev constant, K(n,2)^2 = 4/(n(n-2) omega_n^{2/n})."""
    return 4.0 / (n * (n - 2.0) * sphere_volume(n) ** (2.0 / n))


@dataclass(frozen=True)
class Ceiling:
    n: int
    K2: float
    value: float

    @classmethod
    def of(cls, n: int, sup_f: float) -> "Ceiling":
        K2 = sobolev_K2(n)
        return cls(n, K2, 1.0 / (K2 * sup_f ** ((n - 2.0) / n)))


@dataclass(eq=False)
class Triple:
    """Problem data (h, f) on a model manifold.

    When `factor` is set, the triple lives in the conformal metric
    g' = factor^{4/(n-2)} g; integrals and operators are transported to the
    base grid (dv_g' = factor^{2*} dv_g).
    """

    h: Field
    f: Field
    manifold: ManifoldModel
    factor: Optional[Field] = None

    def __post_init__(self):
        _check(self.manifold, self.h)
        _check(self.manifold, self.f)
        if self.factor is not None:
            _check(self.manifold, self.factor)
            if self.factor.min() <= 0:
                raise PreconditionFailed("conformal factor must be positive")
        if self.sup_f <= 0:
            raise PreconditionFailed("sup f must be positive")

    @property
    def n(self) -> int:
        return self.manifold.dim

    @property
    def q2star(self) -> float:
        return critical_exponent(self.n)

    @cached_property
    def sup_f(self) -> float:
        return float(np.max(self.f.values))

    @cached_property
    def maxima_mask(self) -> np.ndarray:
        return self.f.values >= (1.0 - 1e-6) * self.sup_f

    @property
    def maxima(self) -> list:
        """Nodes where f is within relative 1e-6 of its maximum."""
        m = self.manifold
        idx = np.argwhere(self.maxima_mask)
        if m.is_radial:
            return [float(m.r[i[0]]) for i in idx]
        return [m.axis[i] for i in idx]

    @property
    def ceiling(self) -> Ceiling:
        return Ceiling.of(self.n, self.sup_f)

    # -- transported operators ------------------------------------------------
    @cached_property
    def _p(self) -> float:
        return (self.n + 2.0) / (self.n - 2.0)

    @cached_property
    def _factor_data(self):
        u = self.factor.values
        lap_u = laplacian_array(self.manifold, u)
        up = u ** self._p
        h_base = (self.h.values * up - lap_u) / u
        return u, lap_u, up, h_base

    @cached_property
    def density(self) -> np.ndarray:
        """Quadrature weights of dv for this triple's metric."""
        w = self.manifold.weights
        if self.factor is None:
            return w
        return w * self.factor.values ** self.q2star

    def integrate(self, v: np.ndarray) -> float:
        return float(np.sum(self.density * v))

    def dirichlet(self, v: np.ndarray) -> float:
        m = self.manifold
        if self.factor is None:
            return dirichlet_energy(m, Field(m, v))
        return dirichlet_energy(m, Field(m, v), weight=Field(m, self.factor.values ** 2))

    def laplacian(self, v: np.ndarray) -> np.ndarray:
        m = self.manifold
        if self.factor is None:
            return laplacian_array(m, v)
        u, lap_u, up, _ = self._factor_data
        return (laplacian_array(m, u * v) - v * lap_u) / up

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.laplacian(v) + self.h.values * v

    def solve(self, rhs: np.ndarray, tol: float = 1e-11) -> np.ndarray:
        m = self.manifold
        if self.factor is None:
            return solve_array(m, self.h.values, rhs, tol)
        u, _, up, h_base = self._factor_data
        return solve_array(m, h_base, up * rhs, tol) / u

    def margin(self) -> float:
        m = self.manifold
        if self.factor is None:
            return coercivity_margin(m, self.h)
        return coercivity_margin(m, Field(m, self._factor_data[3]))

    def l2(self, v: np.ndarray) -> float:
        return float(np.sqrt(self.integrate(v * v)))

    def with_h(self, h: Field) -> "Triple":
        return Triple(h, self.f, self.manifold, self.factor)

    def with_f(self, f: Field) -> "Triple":
        return Triple(self.h, f, self.manifold, self.factor)


def make_triple(m: ManifoldModel, h, f) -> Triple:
    """Build a Triple from Fields or constants."""
    if not isinstance(h, Field):
        h = m.constant(float(h))
    if not isinstance(f, Field):
        f = m.constant(float(f))
    return Triple(h, f, m)


@dataclass
class MinimizeReport:
    """Positive normalized solution of Delta u + h u = lambda f u^{q-1}."""

    u: Field
    q: float
    lam: float
    residual: float
    iterations: int
    trace: List[Tuple[int, float]] = field(default_factory=list)
    method: str = "fixed-point"

    def to_dict(self) -> dict:
        return {"q": self.q, "lambda": self.lam, "residual": self.residual,
                "iterations": self.iterations, "method": self.method}


@dataclass(frozen=True)
class ContinuationSchedule:
    """q_j = 2* - (2* - q_start) 2^{-j}, j = 0..levels-1, extrapolated to q = 2*."""

    q_start: float = 2.2
    levels: int = 9
    fit_points: int = 3
    tol: float = 1e-9
    tol_ceiling_rel: float = 1e-6
    max_iter: int = 5000

    def exponents(self, n: int) -> np.ndarray:
        qs = critical_exponent(n)
        return qs - (qs - self.q_start) * 0.5 ** np.arange(self.levels)


def energy_I(t: Triple, w: Field) -> float:
    """I(w) = int |grad w|^2 + int h w^2."""
    _check(t.manifold, w)
    return t.dirichlet(w.values) + t.integrate(t.h.values * w.values ** 2)


def quotient_J(t: Triple, w: Field, q: float | None = None) -> float:
    """J(w) = I(w) / (int f |w|^q)^{2/q}; q defaults to 2*."""
    q = t.q2star if q is None else q
    den = t.integrate(t.f.values * np.abs(w.values) ** q)
    if not den > 0:
        raise DenominatorNonpositive(f"int f|w|^q = {den:.3e}")
    return energy_I(t, w) / den ** (2.0 / q)


def _normalize(t: Triple, u: np.ndarray, q: float) -> np.ndarray:
    c = t.integrate(t.f.values * np.abs(u) ** q)
    if not c > 0:
        raise DenominatorNonpositive(f"int f|u|^q = {c:.3e}")
    return u / c ** (1.0 / q)


def _clip_positive(t: Triple, u: np.ndarray) -> np.ndarray:
    bad = u < 1e-14
    if np.any(bad):
        total = t.integrate(np.abs(u))
        lost = t.integrate(np.abs(u) * bad)
        if total <= 0 or lost > 1e-3 * total:
            raise NonpositiveIterate(
                f"clipping would remove {lost / max(total, 1e-300):.2%} of the iterate mass")
        u = np.where(bad, 1e-14, u)
    return u


def euler_residual(t: Triple, u: np.ndarray, q: float, lam: float) -> float:
    rhs = lam * t.f.values * np.abs(u) ** (q - 2.0) * u
    return t.l2(t.apply(u) - rhs) / max(t.l2(rhs), 1e-300)


MIN_PEAK_NODES = 3


def _check_resolved(u: np.ndarray, q: float) -> None:
    """Raise when the half-maximum region of u covers fewer than MIN_PEAK_NODES nodes."""
    count = int(np.count_nonzero(u >= 0.5 * np.max(u)))
    if count < MIN_PEAK_NODES:
        raise ResolutionLimit(f"iterate at q = {q:.6g} collapsed onto {count} grid node(s)")


def _residual_floor(t: Triple) -> float:
    """Rounding floor of the strong-form residual: eps times the top of the operator spectrum."""
    z = np.where(np.sum(np.indices(t.manifold.shape), axis=0) % 2 == 0, 1.0, -1.0)
    return 4.0 * np.finfo(float).eps * t.l2(t.apply(z)) / t.l2(z)


def solve_subcritical(t: Triple, q: float, tol: float = 1e-9, u0: Field | None = None,
                      max_iter: int = 5000, damping: float = 0.5) -> MinimizeReport:
    """Positive solution of Delta u + h u = lambda f u^{q-1}, int f u^q = 1.

    Uses the damped normalized fixed-point map u <- L^{-1}(f_+ u^{q-1}) with
    Anderson mixing, which keeps the iteration count moderate as q nears the
    critical exponent and the map's contraction rate tends to 1; when
    f changes sign, a preconditioned projected gradient descent is used instead.
    The default initial guess is the constant function.
    """
    if not 2.0 < q < t.q2star:
        raise PreconditionFailed(f"q must lie in (2, {t.q2star}); got {q}")
    margin = t.margin()
    if margin <= COERCIVE_THRESHOLD:
        raise NotCoercive(margin)
    m = t.manifold
    u = np.ones(m.shape) if u0 is None else np.array(u0.values, dtype=float)
    if np.min(t.f.values) < 0:
        return _projected_gradient(t, q, tol, u, max_iter)
    fpos = np.maximum(t.f.values, 0.0)
    u = _normalize(t, _clip_positive(t, u), q)
    trace: List[Tuple[int, float]] = []
    res = np.inf
    step = np.inf
    floor = None
    best = np.inf
    accel = _Anderson(t.density)
    for it in range(max_iter + 1):
        lam = t.dirichlet(u) + t.integrate(t.h.values * u * u)
        trace.append((it, float(lam)))
        res = euler_residual(t, u, q, lam)
        if res > tol and step <= tol:
            # a stationary iterate whose residual sits at the rounding floor
            if floor is None:
                floor = _residual_floor(t) * t.l2(u) / max(t.l2(lam * fpos * u ** (q - 1.0)), 1e-300)
        if res <= tol or (floor is not None and step <= tol and res <= floor):
            _check_resolved(u, q)
            return MinimizeReport(Field(m, u), q, float(lam), float(res), it, trace)
        if it % 50 == 0:
            _check_resolved(u, q)
        v = t.solve(fpos * u ** (q - 1.0), tol=min(1e-11, tol * 1e-2))
        v = _normalize(t, _clip_positive(t, v), q)
        step = t.l2(v - u) / t.l2(u)
        best = min(best, res)
        if res > 10.0 * best:
            accel.reset()
        u = _normalize(t, _clip_positive(t, accel.step(u, v - u, damping)), q)
    raise NoConvergence(tol, max_iter, res)


class _Anderson:
    """Anderson mixing for the fixed-point residual g = G(u) - u.

    With an empty history the step is the damped map u + damping g. Mixed
    iterates that leave the positive cone are replaced by the damped step and
    the history is cleared.
    """

    def __init__(self, weights: np.ndarray, depth: int = 5):
        self.w = np.sqrt(weights).ravel()
        self.depth = depth
        self.reset()

    def reset(self) -> None:
        self.du: List[np.ndarray] = []
        self.dg: List[np.ndarray] = []
        self.prev = None

    def step(self, u: np.ndarray, g: np.ndarray, damping: float) -> np.ndarray:
        plain = u + damping * g
        if self.prev is not None:
            self.du.append((u - self.prev[0]).ravel())
            self.dg.append((g - self.prev[1]).ravel())
            del self.du[:-self.depth], self.dg[:-self.depth]
        self.prev = (u, g)
        if not self.dg:
            return plain
        G = np.stack(self.dg, axis=1)
        gamma = np.linalg.lstsq(G * self.w[:, None], g.ravel() * self.w, rcond=None)[0]
        U = np.stack(self.du, axis=1)
        mixed = plain - ((U + damping * G) @ gamma).reshape(u.shape)
        if not np.all(np.isfinite(mixed)) or np.min(mixed) <= 0:
            self.reset()
            return plain
        return mixed


def _projected_gradient(t: Triple, q: float, tol: float, u: np.ndarray,
                        max_iter: int) -> MinimizeReport:
    m = t.manifold
    f = t.f.values
    u = np.abs(u)
    u = _normalize(t, _clip_positive(t, u), q)
    trace: List[Tuple[int, float]] = []
    rng = np.random.default_rng(0)
    res = np.inf
    for it in range(max_iter + 1):
        lam = t.dirichlet(u) + t.integrate(t.h.values * u * u)
        trace.append((it, float(lam)))
        res = euler_residual(t, u, q, lam)
        if res <= tol:
            _check_resolved(u, q)
            return MinimizeReport(Field(m, u), q, float(lam), float(res), it, trace,
                                  method="projected-gradient")
        # gradient in the energy inner product, and a Lipschitz estimate of its
        # linearization by a few power iterations
        grad = u - lam * t.solve(f * u ** (q - 1.0))
        if it % 25 == 0:
            x = rng.standard_normal(m.shape)
            L_est = 1.0
            for _ in range(12):
                y = x - (q - 1.0) * lam * t.solve(f * u ** (q - 2.0) * x)
                L_est = max(1.0, t.l2(y) / max(t.l2(x), 1e-300))
                x = y / max(t.l2(y), 1e-300)
        u = _normalize(t, _clip_positive(t, u - grad / L_est), q)
    raise NoConvergence(tol, max_iter, res)


def _extrapolate(s: np.ndarray, lam: np.ndarray) -> float:
    # polynomial through the last points, evaluated at s = 0 (Neville/Richardson)
    coef = np.polyfit(s, lam, len(s) - 1)
    return float(np.polyval(coef, 0.0))


@dataclass
class CriticalEstimate:
    lam: float
    report: MinimizeReport
    exponents: List[float]
    lambdas: List[float]
    ceiling: float


def lambda_critical(t: Triple, schedule: ContinuationSchedule | None = None,
                    u0: Field | None = None) -> Tuple[float, MinimizeReport]:
    """Extrapolated lambda at q = 2* with the last subcritical report."""
    est = lambda_critical_detail(t, schedule, u0)
    return est.lam, est.report


def lambda_critical_detail(t: Triple, schedule: ContinuationSchedule | None = None,
                           u0: Field | None = None) -> CriticalEstimate:
    """Continuation in q with warm starts; raw lambda(q_j) values are kept."""
    schedule = schedule or ContinuationSchedule()
    qs = schedule.exponents(t.n)
    lams: List[float] = []
    rep = None
    start = u0
    for q in qs:
        rep = solve_subcritical(t, float(q), schedule.tol, start, schedule.max_iter)
        lams.append(rep.lam)
        start = rep.u
    k = min(schedule.fit_points, len(qs))
    s = t.q2star - qs[-k:]
    lam = _extrapolate(s, np.array(lams[-k:])) if k > 1 else lams[-1]
    ceil = t.ceiling.value
    tol_c = schedule.tol_ceiling_rel * ceil
    est = CriticalEstimate(lam, rep, [float(q) for q in qs], lams, ceil)
    if lam > ceil + tol_c:
        raise CeilingViolation(lam, ceil, tol_c, est)
    return est


class ClassKind(Enum):
    SUBCRITICAL = "Subcritical"
    WEAKLY_CRITICAL = "WeaklyCritical"
    INDETERMINATE = "Indeterminate"


@dataclass
class Classification:
    kind: ClassKind
    gap: float
    lam: float
    ceiling: float
    band: float
    estimate: Optional[CriticalEstimate] = None

    def to_dict(self) -> dict:
        d = {"classification": self.kind.value, "gap": self.gap, "lambda": self.lam,
             "ceiling": self.ceiling, "band": self.band}
        if self.estimate is not None:
            d["exponents"] = self.estimate.exponents
            d["lambdas"] = self.estimate.lambdas
        return d


def classify(t: Triple, schedule: ContinuationSchedule | None = None,
             band_rel: float = 0.02, u0: Field | None = None) -> Classification:
    """Compare the extrapolated lambda with the ceiling within a relative band.

    An estimate above the ceiling but inside the band still counts as weakly
    critical; only a violation beyond the band is indeterminate.
    """
    ceil = t.ceiling.value
    band = band_rel * ceil
    try:
        est = lambda_critical_detail(t, schedule, u0)
        lam = est.lam
    except CeilingViolation as exc:
        est, lam = exc.estimate, exc.lam
    gap = ceil - lam
    if gap > band:
        kind = ClassKind.SUBCRITICAL
    elif abs(gap) <= band:
        kind = ClassKind.WEAKLY_CRITICAL
    else:
        kind = ClassKind.INDETERMINATE
    return Classification(kind, gap, lam, ceil, band, est)


def sobolev_deficit(m: ManifoldModel, w: Field, A: float, B: float) -> float:
    """A int|grad w|^2 + B int w^2 - (int |w|^{2*})^{2/2*}."""
    _check(m, w)
    qs = critical_exponent(m.dim)
    grad = dirichlet_energy(m, w)
    l2 = integrate_array(m, w.values ** 2)
    lq = integrate_array(m, np.abs(w.values) ** qs) ** (2.0 / qs)
    return A * grad + B * l2 - lq


def b0_floor(m: ManifoldModel) -> float:
    """Closed-form lower bound max((n-2)/(4(n-1)) K^2 max S_g, Vol^{-2/n})."""
    n = m.dim
    return max((n - 2.0) / (4.0 * (n - 1.0)) * sobolev_K2(n) * m.scalar_curvature,
               m.volume ** (-2.0 / n))


def b0_lower_estimate(m: ManifoldModel, family: Sequence[Field]) -> float:
    """Certified lower bound on the second best constant B_0(g).

    Each w gives the smallest B with sobolev_deficit(w, K^2, B) >= 0; the
    maximum over the family and the closed-form floor is returned.
    """
    if len(family) == 0:
        raise PreconditionFailed("family must be nonempty")
    n = m.dim
    K2 = sobolev_K2(n)
    qs = critical_exponent(n)
    best = b0_floor(m)
    for w in family:
        _check(m, w)
        l2 = integrate_array(m, w.values ** 2)
        if l2 <= 0:
            continue
        lq = integrate_array(m, np.abs(w.values) ** qs) ** (2.0 / qs)
        best = max(best, (lq - K2 * dirichlet_energy(m, w)) / l2)
    return float(best)
