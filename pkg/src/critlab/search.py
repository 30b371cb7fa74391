"""Paths of triples, bisection for the criticality flip, conformal transforms and probes."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoSignChange, NotCoercive, PreconditionFailed, SolverError
from .functional import (ClassKind, Classification, ContinuationSchedule, MinimizeReport, Triple,
                         classify, critical_exponent, sobolev_K2)
from .manifold import Field, ManifoldModel
from .profiles import cubic_bump
from .testfn import _node_index, criterion_gap, laplacian_at


def worker_count() -> int:
    """Sweep parallelism cap from CRITLAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("CRITLAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    items = list(items)
    workers = min(worker_count(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# -- conformal transform ---------------------------------------------------------------

def conformal_transform(t: Triple, u: Field) -> Triple:
    """The triple (h', f, u^{4/(n-2)} g) with h' = (Delta u + h u) / u^{(n+2)/(n-2)}.

    Transforms compose: a triple that already carries a factor gets the
    product factor and its own Laplacian is used for Delta u.
    """
    m = t.manifold
    if u.manifold is not m:
        raise PreconditionFailed("u must live on the triple's manifold")
    if not np.all(u.values > 0):
        raise PreconditionFailed("the conformal factor must be strictly positive")
    p = (t.n + 2.0) / (t.n - 2.0)
    hp = (t.laplacian(u.values) + t.h.values * u.values) / u.values ** p
    factor = u if t.factor is None else m.field(t.factor.values * u.values)
    return Triple(m.field(hp), t.f, m, factor)


# -- the beta bound ---------------------------------------------------------------------

@dataclass
class BoundReport:
    s: float
    q: float
    bound: float
    sampled_min: float
    analytic_min: float
    x_star: float
    holds: bool


def beta_is_lower_bound(s: float, q: float, samples: Sequence[float], n: int) -> BoundReport:
    """Check x^{4s/(n-2)} - s x^{q-2} >= -s on the samples and at the stationary point."""
    qs = critical_exponent(n)
    if s < 1:
        raise PreconditionFailed("s must be at least 1")
    if not 2.0 < q <= qs:
        raise PreconditionFailed("q must lie in (2, 2*]")
    x = np.asarray(samples, dtype=float)
    if np.any(x < 0):
        raise PreconditionFailed("samples must be nonnegative")
    a = 4.0 * s / (n - 2.0)
    b = q - 2.0

    def beta(v):
        return v ** a - s * v ** b

    sampled = float(np.min(beta(x))) if x.size else np.inf
    if a > b:
        xs = (s * b / a) ** (1.0 / (a - b))
        amin = float(min(beta(xs), 0.0))
    else:
        xs, amin = 0.0, 0.0
    return BoundReport(s, q, -s, sampled, amin, float(xs),
                       bool(sampled >= -s - 1e-12 and amin >= -s - 1e-12))


# -- paths ------------------------------------------------------------------------------

class PathKind(Enum):
    H_MINUS_T_ETA = "HMinusTEta"
    H_TEST_FN = "HTestFn"
    F_LINEAR_TO_ONE = "FLinearToOne"
    F_LINEAR_TO_SUP = "FLinearToSup"


@dataclass
class PathSpec:
    kind: PathKind
    base: Triple
    direction: Field
    t_range: Tuple[float, float]
    alpha: float = 0.0

    def __post_init__(self):
        lo, hi = self.t_range
        if not hi > lo:
            raise PreconditionFailed("t_range must be increasing")
        if self.is_h_path and self.direction.min() < 0:
            raise PreconditionFailed("H-path directions must be nonnegative")

    @property
    def is_h_path(self) -> bool:
        return self.kind in (PathKind.H_MINUS_T_ETA, PathKind.H_TEST_FN)


def path_triple(path: PathSpec, t: float) -> Triple:
    b = path.base
    m = b.manifold
    d = path.direction.values
    if path.kind is PathKind.H_MINUS_T_ETA:
        return b.with_h(m.field(b.h.values - t * d))
    if path.kind is PathKind.H_TEST_FN:
        return b.with_h(m.field(b.h.values + path.alpha - t * d))
    if path.kind is PathKind.F_LINEAR_TO_ONE:
        return b.with_f(m.field((1.0 - t) + t * d))
    return b.with_f(m.field((1.0 - t) * float(np.max(d)) + t * d))


@dataclass
class PathPoint:
    t: float
    classification: Classification
    margin: Optional[float] = None

    @property
    def lam(self) -> float:
        return self.classification.lam

    @property
    def kind(self) -> ClassKind:
        return self.classification.kind


@dataclass
class BisectResult:
    t0: float
    witness: Optional[MinimizeReport]
    status: str
    bracket: Tuple[float, float]
    kinds: Tuple[str, str]
    trace: List[PathPoint] = field(default_factory=list)
    monotone: bool = True

    def __iter__(self):
        yield self.t0
        yield self.witness

    def series(self) -> List[Tuple[float, float, str]]:
        return [(p.t, p.lam, p.kind.value) for p in sorted(self.trace, key=lambda z: z.t)]


def _evaluate(path: PathSpec, t: float, schedule, band_rel, u0) -> PathPoint:
    tri = path_triple(path, t)
    margin = None
    if path.kind is PathKind.H_TEST_FN:
        margin = tri.margin()
        if t - path.alpha < 1.0 / sobolev_K2(tri.n) and margin <= 0:
            raise NotCoercive(margin)
    c = classify(tri, schedule, band_rel, u0)
    return PathPoint(t, c, margin)


def _nearest_start(trace: List[PathPoint], t: float) -> Optional[Field]:
    best = None
    for p in trace:
        if p.classification.estimate is None:
            continue
        if best is None or abs(p.t - t) < abs(best.t - t):
            best = p
    return None if best is None else best.classification.estimate.report.u


def path_is_monotone(trace: Sequence[PathPoint], rel_tol: float = 1e-7) -> bool:
    """lambda nonincreasing in t, up to rel_tol of the ceiling."""
    pts = sorted(trace, key=lambda z: z.t)
    for a, b in zip(pts, pts[1:]):
        if b.lam > a.lam + rel_tol * a.classification.ceiling:
            return False
    return True


def bisect_t0(path: PathSpec, tol_t: float = 1e-3, schedule: ContinuationSchedule | None = None,
              band_rel: float = 0.02, measurable_rel: float = 1e-4,
              max_steps: int = 60) -> BisectResult:
    """Bisect the parameter where classify changes along the path.

    status is "Bracketed" when the bracket is narrower than tol_t and the
    side classified WeaklyCritical still sits at the ceiling, and
    "BandLimited" when that side is already measurably below the ceiling:
    the flip then marks the edge of the classification band rather than
    the point where lambda leaves the ceiling.
    """
    lo, hi = path.t_range
    plo = _evaluate(path, lo, schedule, band_rel, None)
    phi = _evaluate(path, hi, schedule, band_rel, _nearest_start([plo], hi))
    trace = [plo, phi]
    if plo.kind is phi.kind:
        raise NoSignChange(plo.kind.value, phi.kind.value)
    steps = 0
    while hi - lo > tol_t and steps < max_steps:
        mid = 0.5 * (lo + hi)
        pm = _evaluate(path, mid, schedule, band_rel, _nearest_start(trace, mid))
        trace.append(pm)
        if pm.kind is plo.kind:
            lo, plo = mid, pm
        else:
            hi, phi = mid, pm
        steps += 1
    wc = plo if plo.kind is ClassKind.WEAKLY_CRITICAL else phi
    status = "Bracketed"
    if wc.kind is ClassKind.WEAKLY_CRITICAL and \
            wc.classification.gap > measurable_rel * wc.classification.ceiling:
        status = "BandLimited"
    witness = wc.classification.estimate.report if wc.classification.estimate else None
    monotone = path_is_monotone(trace) if path.is_h_path else True
    return BisectResult(0.5 * (lo + hi), witness, status, (lo, hi),
                        (plo.kind.value, phi.kind.value), trace, monotone)


def sample_path(path: PathSpec, ts: Sequence[float], schedule: ContinuationSchedule | None = None,
                band_rel: float = 0.02) -> List[PathPoint]:
    """Classify along the path at the given parameters, warm-starting in order."""
    out: List[PathPoint] = []
    for t in ts:
        out.append(_evaluate(path, float(t), schedule, band_rel, _nearest_start(out, float(t))))
    return out


# -- regularizing family and the Laplacian probe ---------------------------------------------

@dataclass(frozen=True)
class RegularizingFamily:
    """P_t(x) = phi(|x| / t) with phi(s) = (1 - s^2)^3 on [0, 1]."""

    t: float
    center: object = 0.0

    def profile(self, d, order: int = 0):
        return cubic_bump(d, self.t, order)

    def lap_at_center(self, n: int) -> float:
        """Delta P_t(0) for the geometers' Laplacian: 6 n / t^2."""
        return 6.0 * n / self.t ** 2

    def field(self, m: ManifoldModel) -> Field:
        if not 0 < self.t < m.injectivity_radius:
            raise PreconditionFailed("t must lie below the injectivity radius")
        return m.field(self.profile(m.distance_from(self.center)))


def regularizing_family(t: float, x0, m: ManifoldModel) -> Field:
    return RegularizingFamily(t, x0).field(m)


@dataclass
class ProbeReport:
    t_list: List[float]
    lapf: List[float]
    rhs: List[float]
    gaps: List[float]
    classifications: List[str]
    lambdas: List[float]
    ceilings: List[float]
    h_x0: float
    threshold_t: Optional[float]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


UNRESOLVED = "Unresolved"


def criterion_rhs(n: int, S: float, lapf_over_f: float) -> float:
    """(n-2)/(4(n-1)) S - (n-2)(n-4)/(8(n-1)) Delta f / f."""
    return (n - 2.0) / (4.0 * (n - 1.0)) * S - (n - 2.0) * (n - 4.0) / (8.0 * (n - 1.0)) * lapf_over_f


def laplacian_blowup_probe(t: Triple, t_list: Sequence[float], x0=0.0,
                           schedule: ContinuationSchedule | None = None,
                           classify_each: bool = True) -> ProbeReport:
    """Criterion quantities along f_t = P_t(exp^{-1}_{x0}) with h fixed.

    A classification that fails with a solver error (typically grid-scale
    collapse of the concentrating solutions) is recorded as "Unresolved"
    with the error text in `notes`.

    threshold_t is the largest probed t at which the right side of the
    criterion is below h(x0), i.e. where the criterion first fails as t
    decreases; None when it never fails on the probed list.
    """
    m = t.manifold
    n = m.dim
    if n < 5:
        raise PreconditionFailed("the probe needs n >= 5")
    ts = sorted((float(v) for v in t_list), reverse=True)
    idx = _node_index(m, x0)
    h0 = float(t.h.values[idx])
    if not h0 > 0:
        raise PreconditionFailed("h(x0) must be positive")

    def one(tt):
        f = regularizing_family(tt, x0, m)
        tri = t.with_f(f)
        lapf = laplacian_at(m, f, x0)
        ratio = lapf / float(f.values[idx])
        rhs = criterion_rhs(n, m.scalar_curvature, ratio)
        gap = criterion_gap(tri, x0).gap
        if classify_each:
            try:
                c = classify(tri, schedule)
            except SolverError as exc:
                return lapf, rhs, gap, UNRESOLVED, float("nan"), tri.ceiling.value, str(exc)
            return lapf, rhs, gap, c.kind.value, c.lam, c.ceiling, ""
        return lapf, rhs, gap, "", float("nan"), tri.ceiling.value, ""

    rows = parallel_map(one, ts)
    lapf, rhs, gaps, kinds, lams, ceils, notes = (list(col) for col in zip(*rows))
    below = [tt for tt, r in zip(ts, rhs) if r < h0]
    threshold = max(below) if below else None
    return ProbeReport(ts, lapf, rhs, gaps, kinds, lams, ceils, h0, threshold, notes)


def smallest_hessian_eigenvalue(t: Triple) -> float:
    """Smallest eigenvalue of -Hess f over the maxima of f (torus, spectral)."""
    m = t.manifold
    if m.is_radial:
        # radial: -Hess f at the center is -f''(0) Id, estimated from the Laplacian
        return float(laplacian_at(m, t.f, 0.0) / m.dim)
    fh = np.fft.fftn(t.f.values)
    kd = m._derivative_wavenumbers()
    kf = m.wavenumbers
    best = np.inf
    H = np.empty((m.dim, m.dim) + m.shape)
    for i in range(m.dim):
        for j in range(m.dim):
            si = [1] * m.dim
            sj = [1] * m.dim
            si[i] = -1
            sj[j] = -1
            k = kf if i == j else kd
            if i == j:
                prod = (k * k).reshape(si)
            else:
                prod = k.reshape(si) * k.reshape(sj)
            H[i, j] = np.real(np.fft.ifftn(fh * prod))
    for pt in np.argwhere(t.maxima_mask):
        ev = np.linalg.eigvalsh(H[(slice(None), slice(None)) + tuple(pt)])
        best = min(best, float(ev[0]))
    return best
