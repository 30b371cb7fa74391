"""Aubin test functions, their expansions, and the dimension-3 test functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy import integrate as sint
from scipy.interpolate import CubicSpline

from .errors import ChartRadiusError, DivergentIntegral, NotAMaximum, PreconditionFailed
from .functional import ClassKind, ContinuationSchedule, Triple, classify, critical_exponent, \
    sobolev_K2
from .green import GreenFunction, build_green
from .manifold import Field, Kind, ManifoldModel, _is_center, _torus_point, laplacian_array
from .profiles import gauss_cells, smoothstep_cutoff


@dataclass(frozen=True)
class AubinParams:
    k: float
    P: object
    delta: float

    def __post_init__(self):
        if self.k < 1:
            raise PreconditionFailed("k must be at least 1")
        if self.delta <= 0:
            raise PreconditionFailed("delta must be positive")


def aubin_profile(n: int, k: float, delta: float):
    """psi_k(r) and psi_k'(r) as callables on [0, inf)."""
    a = (n - 2.0) / 2.0
    eps2 = 1.0 / k
    tail = (eps2 + delta ** 2) ** (-a)

    def psi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < delta, (eps2 + r * r) ** (-a) - tail, 0.0)

    def dpsi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < delta, -2.0 * a * r * (eps2 + r * r) ** (-a - 1.0), 0.0)

    return psi, dpsi


def aubin_psi(m: ManifoldModel, p: AubinParams) -> Field:
    """Cutoff bubble psi_k centered at P, sampled on the grid."""
    if p.delta >= m.injectivity_radius:
        raise ChartRadiusError("delta must stay below the injectivity radius")
    d = m.distance_from(p.P)
    psi, _ = aubin_profile(m.dim, p.k, p.delta)
    return m.field(psi(d))


def aubin_J_quadrature(m: ManifoldModel, k: float, delta: float,
                       h: Callable[[np.ndarray], np.ndarray] | float,
                       f: Callable[[np.ndarray], np.ndarray] | float = 1.0,
                       q: float | None = None) -> float:
    """J(psi_k) on a radial model by composite Gauss quadrature of the analytic profile.

    h and f are radial callables (or constants) about the center.
    """
    if not m.is_radial:
        raise PreconditionFailed("analytic quadrature needs a radial model")
    n = m.dim
    q = critical_exponent(n) if q is None else q
    psi, dpsi = aubin_profile(n, k, delta)
    eps = 1.0 / np.sqrt(k)
    # cells graded geometrically from the bubble scale out to delta
    edges = np.unique(np.concatenate((np.linspace(0.0, eps, 41),
                                      np.geomspace(eps, delta, 400))))
    x, w = gauss_cells(edges, 10)
    dens = m._radial_density(x)
    hv = h(x) if callable(h) else h
    fv = f(x) if callable(f) else f
    p = psi(x)
    I = np.sum(w * dens * (dpsi(x) ** 2 + hv * p * p))
    N = np.sum(w * dens * fv * np.abs(p) ** q)
    return float(I / N ** (2.0 / q))


def aubin_expansion(n: int, hP: float, SgP: float, lapf_over_f: float, k: float,
                    sup_f: float) -> float:
    """Two-term prediction of J(psi_k) at a maximum P of f."""
    if n < 4:
        raise PreconditionFailed("the expansion needs n >= 4; dimension 3 uses the mass test")
    if sup_f <= 0:
        raise PreconditionFailed("sup f must be positive")
    ceiling = 1.0 / (sobolev_K2(n) * sup_f ** ((n - 2.0) / n))
    if n == 4:
        return ceiling * (1.0 + (6.0 * hP - SgP) * np.log(k) / (8.0 * k))
    gap = 4.0 * (n - 1.0) / (n - 2.0) * hP - SgP + (n - 4.0) / 2.0 * lapf_over_f
    return ceiling * (1.0 + gap / (n * (n - 4.0) * k))


class Branch(Enum):
    N4 = "N4"
    N_GREATER_4 = "NGreater4"


@dataclass
class CriterionReport:
    P: object
    gap: float
    branch: Branch
    h: float
    scalar_curvature: float
    lapf_over_f: float

    def to_dict(self) -> dict:
        return {"P": np.atleast_1d(self.P).tolist(), "gap": self.gap,
                "branch": self.branch.value, "h": self.h,
                "scalar_curvature": self.scalar_curvature, "lapf_over_f": self.lapf_over_f}


def _node_index(m: ManifoldModel, P) -> tuple:
    if m.is_radial:
        r = float(np.atleast_1d(P)[0]) if np.ndim(P) else float(P)
        i = int(round(r / m.spacing))
        if abs(i * m.spacing - r) > 1e-9 * max(1.0, r) or not 0 <= i < m.shape[0]:
            raise PreconditionFailed("P must be a grid node")
        return (i,)
    c = _torus_point(m, P)
    idx = np.round(c / m.spacing).astype(int)
    if np.max(np.abs(idx * m.spacing - c)) > 1e-9:
        raise PreconditionFailed("P must be a grid node")
    return tuple(idx % m.shape[0])


def _radial_lap_at(m: ManifoldModel, u: np.ndarray, i: int, step: int) -> float:
    h = m.spacing * step
    n = m.dim
    N = u.size

    def val(j):
        # even reflection through the poles of radial fields
        if j < 0:
            j = -j
        if j > N - 1:
            j = 2 * (N - 1) - j
        return u[j]

    if i == 0 or (i == N - 1 and m.kind is Kind.ROUND_SPHERE):
        nb = val(i + step) if i == 0 else val(i - step)
        return 2.0 * n * (u[i] - nb) / h ** 2
    if i == N - 1:
        raise PreconditionFailed("the Laplacian at the ball boundary is not resolved")
    r = m.r[i]
    c = np.cos(r) / np.sin(r) if m.kind is Kind.ROUND_SPHERE else 1.0 / r
    up, um = val(i + step), val(i - step)
    return -(up - 2 * u[i] + um) / h ** 2 - (n - 1) * c * (up - um) / (2 * h)


def laplacian_at(m: ManifoldModel, u: Field, P) -> float:
    """Delta_g u at a node, Richardson-refined on radial models."""
    idx = _node_index(m, P)
    if not m.is_radial:
        return float(laplacian_array(m, u.values)[idx])
    i = idx[0]
    a = _radial_lap_at(m, u.values, i, 1)
    b = _radial_lap_at(m, u.values, i, 2)
    return float((4.0 * a - b) / 3.0)


def criterion_gap(t: Triple, P) -> CriterionReport:
    """4(n-1)/(n-2) h(P) - S_g(P) + (n-4)/2 Delta f(P)/f(P) at a maximum P of f."""
    m = t.manifold
    n = m.dim
    idx = _node_index(m, P)
    if not t.maxima_mask[idx]:
        raise NotAMaximum(f"{P} is not a maximum of f")
    hP = float(t.h.values[idx])
    fP = float(t.f.values[idx])
    if t.factor is None:
        S = m.scalar_curvature
        lapf = laplacian_at(m, t.f, P)
    else:
        u = t.factor.values
        p = (n + 2.0) / (n - 2.0)
        S = float((4 * (n - 1) / (n - 2) * laplacian_array(m, u)[idx]
                   + m.scalar_curvature * u[idx]) / u[idx] ** p)
        lapf = float(t.laplacian(t.f.values)[idx])
    ratio = lapf / fP
    gap = 4.0 * (n - 1.0) / (n - 2.0) * hP - S + (n - 4.0) / 2.0 * ratio
    return CriterionReport(P, float(gap), Branch.N4 if n == 4 else Branch.N_GREATER_4, hP, S, ratio)


def criterion_gaps_at_maxima(t: Triple) -> np.ndarray:
    """Criterion gap at every maximum of f (vectorized on the torus)."""
    m = t.manifold
    n = m.dim
    if m.is_radial or t.factor is not None:
        return np.array([criterion_gap(t, P).gap for P in t.maxima])
    lapf = laplacian_array(m, t.f.values)
    mask = t.maxima_mask
    gap = 4.0 * (n - 1.0) / (n - 2.0) * t.h.values - m.scalar_curvature \
        + (n - 4.0) / 2.0 * lapf / t.f.values
    return gap[mask]


# -- dimension 3 ---------------------------------------------------------------------

def dim3_test_function(m: ManifoldModel, x0, eps: float, beta: Field, delta: float) -> Field:
    """u_eps = eta (eps^2 + d^2)^{-1/2} + beta."""
    if m.dim != 3:
        raise PreconditionFailed("dimension-3 test functions need n = 3")
    d = m.distance_from(x0)
    v = (eps * eps + d * d) ** -0.5
    return m.field(smoothstep_cutoff(d, delta) * v + beta.values)


def radial_integral_Ipq(p: int, q: int) -> float:
    """I_{p,q} = int_0^inf s^{p+2} (1+s^2)^{-q/2} ds.

    With s = tan(theta) the integral becomes int_0^{pi/2} sin^{p+2} cos^{q-p-4};
    the endpoint powers are handled by an algebraic-weight rule.
    """
    if q - p <= 3:
        raise DivergentIntegral(f"I_{{{p},{q}}} diverges at infinity (q - p = {q - p} <= 3)")
    if p <= -3:
        raise DivergentIntegral(f"I_{{{p},{q}}} diverges at 0 (p = {p} <= -3)")
    a = p + 2.0
    b = q - p - 4.0
    half = np.pi / 2

    def smooth(th):
        s = np.sinc(th / np.pi) ** a                      # (sin th / th)^a
        c = np.sinc((half - th) / np.pi) ** b             # (cos th / (pi/2 - th))^b
        return s * c

    val, _ = sint.quad(smooth, 0.0, half, weight="alg", wvar=(a, b), epsabs=1e-15,
                       epsrel=1e-13, limit=200)
    return float(val)


@dataclass
class MassSignReport:
    eps: List[float]
    deficits: List[float]
    a0: float
    a1: float
    fit_window: Tuple[float, float]
    min_deficit: float
    beta_x0: float
    mass: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dim3_deficit(t: Triple, green: GreenFunction, eps: float) -> float:
    """I(u_eps) - K^{-2} (Sup f)^{-1/3} (int f u_eps^6)^{1/3} on a radial 3-model.

    u_eps is assembled from the analytic singular part and a cubic spline of
    beta, and integrated by composite Gauss quadrature on the grid cells.
    """
    m = t.manifold
    if m.dim != 3 or not m.is_radial:
        raise PreconditionFailed("the deficit quadrature runs on radial 3-models")
    beta = CubicSpline(m.r, green.beta.values)
    dbeta = beta.derivative()
    hs = CubicSpline(m.r, t.h.values)
    fs = CubicSpline(m.r, t.f.values)
    delta = green.delta
    # refine the cells that resolve the eps scale
    fine = np.linspace(0.0, min(20 * eps, 2 * delta), 801)
    edges = np.unique(np.concatenate((m.cell_edges, m.r, fine)))
    x, w = gauss_cells(edges, 8)
    v = (eps * eps + x * x) ** -0.5
    dv = -x * v ** 3
    eta = smoothstep_cutoff(x, delta)
    deta = smoothstep_cutoff(x, delta, 1)
    u = eta * v + beta(x)
    du = deta * v + eta * dv + dbeta(x)
    dens = m._radial_density(x)
    I = np.sum(w * dens * (du * du + hs(x) * u * u))
    N = np.sum(w * dens * fs(x) * u ** 6)
    K2 = sobolev_K2(3)
    return float(I - (1.0 / K2) * t.sup_f ** (-1.0 / 3.0) * N ** (1.0 / 3.0))


def dim3_weakly_critical_test(t: Triple, x0=0.0, eps_sweep: Sequence[float] = (),
                              fit_window: Tuple[float, float] = (0.0, 0.05),
                              schedule: ContinuationSchedule | None = None,
                              green: GreenFunction | None = None) -> MassSignReport:
    """Deficit of the weakly-critical inequality along u_eps and its eps^0 coefficient.

    Refuses triples that are not classified WeaklyCritical.
    """
    m = t.manifold
    if m.dim != 3:
        raise PreconditionFailed("the dimension-3 test needs n = 3")
    if not _is_center(m, x0) and m.is_radial:
        raise PreconditionFailed("radial models test at the center")
    if not t.maxima_mask[_node_index(m, x0)]:
        raise NotAMaximum("x0 must be a maximum of f")
    c = classify(t, schedule)
    if c.kind is not ClassKind.WEAKLY_CRITICAL:
        raise PreconditionFailed(f"triple is {c.kind.value}, the test needs WeaklyCritical")
    eps_sweep = list(eps_sweep) or [0.02, 0.03, 0.04, 0.05, 0.07, 0.1]
    gf = green or build_green(m, t.h, x0, check_weak=False)
    deficits = [dim3_deficit(t, gf, e) for e in eps_sweep]
    e = np.array(eps_sweep)
    dvals = np.array(deficits)
    sel = (e >= fit_window[0]) & (e <= fit_window[1])
    if np.count_nonzero(sel) < 2:
        raise PreconditionFailed("need at least two eps values inside the fit window")
    a1, a0 = np.polyfit(e[sel], dvals[sel], 1)
    return MassSignReport(list(map(float, e)), list(map(float, dvals)), float(a0), float(a1),
                          tuple(fit_window), float(np.min(dvals)), float(gf.beta.values[0]),
                          float(gf.mass))
