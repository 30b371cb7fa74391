"""Discretized model manifolds and the fields that live on them.

Three model families are supported:

* the unit round sphere S^n, discretized radially in the polar angle r from
  the north pole (fields are functions of r only);
* the flat torus R^n / (L Z)^n on a uniform tensor grid, with spectral
  differentiation;
* the Euclidean ball of radius R, discretized radially with a zero-flux
  condition at r = R.

The radial schemes are written in conservative (flux) form.  With exact
cell volumes the discrete Laplacian is self-adjoint for the quadrature, so
summation by parts holds to rounding error, and at r = 0 the scheme reduces
to the regularized limit Delta u(0) = -n u''(0).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import special

from .errors import ChartRadiusError, GridMismatch, PreconditionFailed

DEFAULT_RADIAL_NODES = 4096
DEFAULT_TORUS_NODES = 64


class Kind(Enum):
    ROUND_SPHERE = "RoundSphere"
    FLAT_TORUS = "FlatTorus"
    EUCLIDEAN_BALL = "EuclideanBall"


class Scheme(Enum):
    UNIFORM_FD2 = "UniformFD2"
    SPECTRAL = "Spectral"


class Symmetry(Enum):
    RADIAL = "Radial"
    FULL = "Full"


def sphere_volume(n: int) -> float:
    """Volume omega_n of the unit sphere S^n in R^{n+1}."""
    return float(2.0 * np.pi ** ((n + 1) / 2.0) / special.gamma((n + 1) / 2.0))


def sin_power_integral(m: int, x: np.ndarray) -> np.ndarray:
    """Exact value of int_0^x sin(t)^m dt for 0 <= x <= pi.

    Uses the incomplete beta function, which stays accurate for tiny x
    where the usual reduction formula cancels catastrophically.
    """
    x = np.asarray(x, dtype=float)
    half = 0.5 * special.beta((m + 1) / 2.0, 0.5)
    xs = np.minimum(x, np.pi - x)
    part = half * special.betainc((m + 1) / 2.0, 0.5, np.sin(xs) ** 2)
    return np.where(x <= np.pi / 2, part, 2.0 * half - part)


@dataclass(frozen=True)
class GridSpec:
    nodes_per_axis: tuple[int, ...]
    scheme: Scheme

    def __post_init__(self):
        object.__setattr__(self, "nodes_per_axis", tuple(int(k) for k in self.nodes_per_axis))


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    """A discretized model manifold.

    Attributes
    ----------
    kind : Kind
        Model family.
    dim : int
        Dimension n >= 3 (n = 2 is accepted for small torus checks).
    grid : GridSpec
        Node counts and scheme.
    period_or_radius : float
        Torus side L or ball radius R (ignored for the unit sphere).
    """

    kind: Kind
    dim: int
    grid: GridSpec
    period_or_radius: float = 1.0

    def __post_init__(self):
        n = self.dim
        if n < 2:
            raise PreconditionFailed("dimension must be at least 2")
        if self.period_or_radius <= 0:
            raise PreconditionFailed("period_or_radius must be positive")
        nodes = self.grid.nodes_per_axis
        if self.kind is Kind.FLAT_TORUS:
            if self.grid.scheme is not Scheme.SPECTRAL:
                raise PreconditionFailed("the torus uses the spectral scheme")
            if len(nodes) != n or any(k % 2 for k in nodes) or len(set(nodes)) != 1:
                raise PreconditionFailed("torus grid must be a uniform cube with even node counts")
        else:
            if self.grid.scheme is not Scheme.UNIFORM_FD2:
                raise PreconditionFailed("radial models use the UniformFD2 scheme")
            if len(nodes) != 1:
                raise PreconditionFailed("radial models take a single node count")
            if self.kind is Kind.ROUND_SPHERE and nodes[0] < 64:
                raise PreconditionFailed("sphere grids need at least 64 nodes")
            if nodes[0] < 8:
                raise PreconditionFailed("radial grids need at least 8 nodes")

    # -- constructors -------------------------------------------------
    @classmethod
    def sphere(cls, n: int, nodes: int = DEFAULT_RADIAL_NODES) -> "ManifoldModel":
        return cls(Kind.ROUND_SPHERE, n, GridSpec((nodes,), Scheme.UNIFORM_FD2), 1.0)

    @classmethod
    def ball(cls, n: int, radius: float = 1.0, nodes: int = DEFAULT_RADIAL_NODES) -> "ManifoldModel":
        return cls(Kind.EUCLIDEAN_BALL, n, GridSpec((nodes,), Scheme.UNIFORM_FD2), float(radius))

    @classmethod
    def torus(cls, n: int, side: float = 1.0, nodes: int | None = None) -> "ManifoldModel":
        if nodes is None:
            if n > 4:
                raise PreconditionFailed("default torus grids are capped at n <= 4")
            nodes = DEFAULT_TORUS_NODES
        return cls(Kind.FLAT_TORUS, n, GridSpec((nodes,) * n, Scheme.SPECTRAL), float(side))

    # -- basic geometry ---------------------------------------------------
    @property
    def is_radial(self) -> bool:
        return self.kind is not Kind.FLAT_TORUS

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.nodes_per_axis if not self.is_radial else (self.grid.nodes_per_axis[0],)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent(self) -> float:
        """Largest radial coordinate (pi or R); torus side L."""
        return np.pi if self.kind is Kind.ROUND_SPHERE else self.period_or_radius

    @cached_property
    def spacing(self) -> float:
        if self.is_radial:
            return self.extent / (self.shape[0] - 1)
        return self.period_or_radius / self.shape[0]

    @cached_property
    def r(self) -> np.ndarray:
        """Radial node coordinates (radial models only)."""
        if not self.is_radial:
            raise PreconditionFailed("radial coordinate requested on the torus")
        return np.linspace(0.0, self.extent, self.shape[0])

    @cached_property
    def axis(self) -> np.ndarray:
        """One-dimensional node coordinates of a torus axis."""
        if self.is_radial:
            raise PreconditionFailed("axis coordinates are only defined on the torus")
        return np.arange(self.shape[0]) * self.spacing

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates: (r,) on radial models, (x1, ..., xn) on the torus."""
        if self.is_radial:
            return (self.r,)
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @property
    def volume(self) -> float:
        """Closed-form volume."""
        n = self.dim
        if self.kind is Kind.ROUND_SPHERE:
            return sphere_volume(n)
        if self.kind is Kind.FLAT_TORUS:
            return self.period_or_radius ** n
        return sphere_volume(n - 1) * self.period_or_radius ** n / n

    @property
    def scalar_curvature(self) -> float:
        return float(self.dim * (self.dim - 1)) if self.kind is Kind.ROUND_SPHERE else 0.0

    @property
    def injectivity_radius(self) -> float:
        if self.kind is Kind.ROUND_SPHERE:
            return np.pi
        if self.kind is Kind.FLAT_TORUS:
            return self.period_or_radius / 2.0
        return self.period_or_radius

    # -- radial finite-volume data ----------------------------------------
    def _radial_density(self, r: np.ndarray) -> np.ndarray:
        """omega_{n-1} times the radial volume density sin^{n-1} r or r^{n-1}."""
        s = np.sin(r) if self.kind is Kind.ROUND_SPHERE else r
        return sphere_volume(self.dim - 1) * s ** (self.dim - 1)

    def radial_volume_below(self, r: np.ndarray) -> np.ndarray:
        """Exact volume of the geodesic ball B(center, r) on a radial model."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.extent)
        w = sphere_volume(self.dim - 1)
        if self.kind is Kind.ROUND_SPHERE:
            return w * sin_power_integral(self.dim - 1, r)
        return w * r ** self.dim / self.dim

    @cached_property
    def cell_edges(self) -> np.ndarray:
        r = self.r
        mid = 0.5 * (r[1:] + r[:-1])
        return np.concatenate(([0.0], mid, [self.extent]))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: exact control volumes (radial) or h^n (torus)."""
        if self.is_radial:
            e = self.cell_edges
            if self.kind is Kind.EUCLIDEAN_BALL:
                return np.diff(self.radial_volume_below(e))
            # integrate each half of the sphere from its own pole so the small
            # polar cells do not suffer cancellation
            lo, hi = e[:-1], e[1:]
            w = sphere_volume(self.dim - 1)
            F = lambda x: sin_power_integral(self.dim - 1, x)
            half = np.pi / 2
            north = F(np.minimum(hi, half)) - F(np.minimum(lo, half))
            south = F(np.pi - np.maximum(lo, half)) - F(np.pi - np.maximum(hi, half))
            return w * (north + south)
        return np.full(self.shape, self.spacing ** self.dim)

    @cached_property
    def fluxes(self) -> np.ndarray:
        """Face coefficients omega_{n-1} s(r_{i+1/2})^{n-1} / dr of the radial scheme."""
        mid = self.cell_edges[1:-1]
        return self._radial_density(mid) / self.spacing

    # -- torus spectral data ------------------------------------------------
    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers 2 pi k / L of one torus axis (fft ordering)."""
        N = self.shape[0]
        return 2.0 * np.pi * np.fft.fftfreq(N, d=self.spacing)

    @cached_property
    def symbol(self) -> np.ndarray:
        """|2 pi k / L|^2 on the full torus frequency grid."""
        k2 = self.wavenumbers ** 2
        grids = np.meshgrid(*([k2] * self.dim), indexing="ij", sparse=True)
        return sum(grids)

    def _derivative_wavenumbers(self) -> np.ndarray:
        k = self.wavenumbers.copy()
        k[self.shape[0] // 2] = 0.0  # odd derivative of the Nyquist mode is discarded
        return k

    def field(self, values, symmetry: Symmetry | None = None) -> "Field":
        if symmetry is None:
            symmetry = Symmetry.RADIAL if self.is_radial else Symmetry.FULL
        return Field(self, values, symmetry)

    def constant(self, c: float) -> "Field":
        return self.field(np.full(self.shape, float(c)))

    def from_function(self, fn: Callable[..., np.ndarray]) -> "Field":
        """Sample fn on the nodes: fn(r) on radial models, fn(x1, ..., xn) on the torus."""
        vals = np.broadcast_to(np.asarray(fn(*self.coords), dtype=float), self.shape)
        return self.field(np.array(vals))

    def distance_from(self, p) -> np.ndarray:
        """Geodesic distance from the point p to every node."""
        if self.is_radial:
            if not _is_center(self, p):
                raise PreconditionFailed("radial models only resolve distances from the center")
            return self.r.copy()
        c = _torus_point(self, p)
        L = self.period_or_radius
        d2 = 0.0
        for j, x in enumerate(self.coords):
            d = np.abs(x - c[j]) % L
            d2 = d2 + np.minimum(d, L - d) ** 2
        return np.sqrt(d2)


@dataclass(eq=False)
class Field:
    """A scalar function sampled on the nodes of a ManifoldModel."""

    manifold: ManifoldModel
    values: np.ndarray
    symmetry: Symmetry = Symmetry.FULL

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.manifold.shape:
            raise GridMismatch(
                f"field has shape {vals.shape}, manifold grid is {self.manifold.shape}")
        if self.symmetry is Symmetry.RADIAL and not self.manifold.is_radial:
            raise GridMismatch("radial fields need a radial model")
        vals.setflags(write=False)
        self.values = vals

    # arithmetic keeps the manifold and the weaker of the two symmetries
    def _coerce(self, other):
        if isinstance(other, Field):
            if other.manifold is not self.manifold:
                raise GridMismatch("fields live on different manifolds")
            sym = self.symmetry if self.symmetry is other.symmetry else Symmetry.FULL
            return other.values, sym
        return other, self.symmetry

    def _new(self, vals, sym=None):
        return Field(self.manifold, vals, self.symmetry if sym is None else sym)

    def __add__(self, other):
        v, s = self._coerce(other)
        return self._new(self.values + v, s)

    __radd__ = __add__

    def __sub__(self, other):
        v, s = self._coerce(other)
        return self._new(self.values - v, s)

    def __rsub__(self, other):
        v, s = self._coerce(other)
        return self._new(v - self.values, s)

    def __mul__(self, other):
        v, s = self._coerce(other)
        return self._new(self.values * v, s)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, s = self._coerce(other)
        return self._new(self.values / v, s)

    def __rtruediv__(self, other):
        v, s = self._coerce(other)
        return self._new(v / self.values, s)

    def __neg__(self):
        return self._new(-self.values)

    def __pow__(self, p):
        return self._new(self.values ** p)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return self._new(fn(self.values))

    def max(self) -> float:
        return float(np.max(self.values))

    def min(self) -> float:
        return float(np.min(self.values))


def _check(m: ManifoldModel, u: Field) -> None:
    if u.manifold is not m:
        raise GridMismatch("field does not live on this manifold")


# -- points -------------------------------------------------------------------

def _is_center(m: ManifoldModel, p) -> bool:
    if np.ndim(p) == 0:
        return abs(float(p)) < 1e-14
    v = np.asarray(p, dtype=float)
    if m.kind is Kind.ROUND_SPHERE:
        return bool(np.allclose(v, np.eye(m.dim + 1)[0], atol=1e-14))
    return bool(np.allclose(v, 0.0, atol=1e-14))


def sphere_point(n: int, p) -> np.ndarray:
    """Ambient unit vector in R^{n+1}; a scalar is a polar angle on the reference meridian."""
    if np.ndim(p) == 0:
        th = float(p)
        v = np.zeros(n + 1)
        v[0], v[1] = np.cos(th), np.sin(th)
        return v
    v = np.asarray(p, dtype=float)
    if v.shape != (n + 1,):
        raise PreconditionFailed(f"sphere points need {n + 1} ambient coordinates")
    return v / np.linalg.norm(v)


def _ball_point(m: ManifoldModel, p) -> np.ndarray:
    if np.ndim(p) == 0:
        v = np.zeros(m.dim)
        v[0] = float(p)
        return v
    v = np.asarray(p, dtype=float)
    if v.shape != (m.dim,):
        raise PreconditionFailed(f"ball points need {m.dim} coordinates")
    return v


def _torus_point(m: ManifoldModel, p) -> np.ndarray:
    v = np.atleast_1d(np.asarray(p, dtype=float))
    if v.shape == (1,) and m.dim > 1:
        v = np.concatenate((v, np.zeros(m.dim - 1)))
    if v.shape != (m.dim,):
        raise PreconditionFailed(f"torus points need {m.dim} coordinates")
    return v


def geodesic_distance(m: ManifoldModel, x, y) -> float:
    """Riemannian distance between two points of the model."""
    if m.kind is Kind.ROUND_SPHERE:
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            d = abs(float(x) - float(y)) % (2 * np.pi)
            return float(min(d, 2 * np.pi - d))
        a, b = sphere_point(m.dim, x), sphere_point(m.dim, y)
        # atan2 form is accurate for nearby and antipodal points alike
        c = float(np.dot(a, b))
        return float(np.arctan2(np.linalg.norm(a - c * b), c))
    if m.kind is Kind.FLAT_TORUS:
        a, b = _torus_point(m, x), _torus_point(m, y)
        L = m.period_or_radius
        d = np.abs(a - b) % L
        return float(np.linalg.norm(np.minimum(d, L - d)))
    return float(np.linalg.norm(_ball_point(m, x) - _ball_point(m, y)))


# -- integration ----------------------------------------------------------------

def integrate(m: ManifoldModel, u: Field) -> float:
    """Quadrature of u against dv_g."""
    _check(m, u)
    return float(np.sum(m.weights * u.values))


def integrate_array(m: ManifoldModel, values: np.ndarray) -> float:
    return float(np.sum(m.weights * values))


# -- differential operators ------------------------------------------------------

def _radial_stiffness_apply(m: ManifoldModel, u: np.ndarray, edge_weight=None) -> np.ndarray:
    a = m.fluxes if edge_weight is None else m.fluxes * edge_weight
    du = np.diff(u)
    flux = a * du
    out = np.zeros_like(u)
    out[:-1] -= flux
    out[1:] += flux
    return out


def laplacian_array(m: ManifoldModel, u: np.ndarray) -> np.ndarray:
    """Delta_g applied to raw node values (geometers' sign)."""
    if m.is_radial:
        return _radial_stiffness_apply(m, u) / m.weights
    return np.real(np.fft.ifftn(m.symbol * np.fft.fftn(u)))


def laplacian(m: ManifoldModel, u: Field) -> Field:
    """Delta_g u with the sign making Delta of a positive bump positive at its peak."""
    _check(m, u)
    return Field(m, laplacian_array(m, u.values), u.symmetry)


def gradient_arrays(m: ManifoldModel, u: np.ndarray) -> list[np.ndarray]:
    """Spectral gradient components on the torus."""
    if m.is_radial:
        raise PreconditionFailed("use radial_derivative on radial models")
    uh = np.fft.fftn(u)
    k = m._derivative_wavenumbers()
    out = []
    for j in range(m.dim):
        shape = [1] * m.dim
        shape[j] = -1
        out.append(np.real(np.fft.ifftn(1j * k.reshape(shape) * uh)))
    return out


def radial_derivative(m: ManifoldModel, u: np.ndarray) -> np.ndarray:
    """Second-order derivative in r, one-sided at the ends with the symmetry of radial fields."""
    d = np.gradient(u, m.spacing, edge_order=2)
    d[0] = 0.0
    if m.kind is Kind.ROUND_SPHERE:
        d[-1] = 0.0
    return d


def gradient_norm_sq(m: ManifoldModel, u: Field) -> np.ndarray:
    """|grad u|^2 at the nodes."""
    _check(m, u)
    if m.is_radial:
        return radial_derivative(m, u.values) ** 2
    return sum(g ** 2 for g in gradient_arrays(m, u.values))


def dirichlet_energy(m: ManifoldModel, u: Field, weight: Field | None = None) -> float:
    """int |grad u|^2 dv_g, optionally weighted by a nonnegative Field c.

    On radial models the weighted form uses sqrt(c_i c_{i+1}) on each face,
    the discretization under which int |grad(wv)|^2 = int w^2 |grad v|^2 +
    int v^2 w Delta w holds exactly.
    """
    _check(m, u)
    if m.is_radial:
        du = np.diff(u.values)
        a = m.fluxes
        if weight is not None:
            c = weight.values
            a = a * np.sqrt(c[1:] * c[:-1])
        return float(np.sum(a * du * du))
    if weight is None:
        uh = np.fft.fftn(u.values)
        N = m.size
        return float(np.sum(m.symbol * np.abs(uh) ** 2) * m.period_or_radius ** m.dim / N ** 2)
    g2 = sum(g ** 2 for g in gradient_arrays(m, u.values))
    return integrate_array(m, weight.values * g2)


def gradient_pairing(m: ManifoldModel, u: Field, v: Field) -> float:
    """int <grad u, grad v> dv_g in the same discretization as the Laplacian."""
    _check(m, u)
    _check(m, v)
    if m.is_radial:
        return float(np.sum(m.fluxes * np.diff(u.values) * np.diff(v.values)))
    uh, vh = np.fft.fftn(u.values), np.fft.fftn(v.values)
    N = m.size
    return float(np.real(np.sum(m.symbol * uh * np.conj(vh))) * m.period_or_radius ** m.dim / N ** 2)


def radial_laplacian_exact(kind: Kind, n: int, r, du, d2u) -> np.ndarray:
    """Closed-form radial Laplacian -u'' - (n-1) c(r) u' from analytic derivatives.

    c(r) = cot r on the sphere and 1/r in flat models; at r = 0 the limit
    -n u''(0) is used.
    """
    r = np.asarray(r, dtype=float)
    du = np.asarray(du, dtype=float)
    d2u = np.asarray(d2u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.cos(r) / np.sin(r) if kind is Kind.ROUND_SPHERE else 1.0 / r
        out = -d2u - (n - 1) * c * du
    return np.where(r == 0.0, -n * d2u, out)


# -- charts -------------------------------------------------------------------

@dataclass(frozen=True)
class ChartSampling:
    """Normal-coordinate chart centered at a point.

    rho holds the sampled chart radii; the metric in normal coordinates is
    g = dr^2 + tangential(rho) * (Euclidean tangential part), with
    tangential = (sin rho / rho)^2 on the sphere and 1 in flat models.
    """

    kind: Kind
    dim: int
    center: np.ndarray
    radius: float
    rho: np.ndarray
    tangential: np.ndarray
    det: np.ndarray
    period: float = 0.0

    def metric(self, x: np.ndarray) -> np.ndarray:
        """Metric components g_ij at a chart point x."""
        x = np.asarray(x, dtype=float)
        rho = np.linalg.norm(x)
        if rho == 0.0 or self.kind is not Kind.ROUND_SPHERE:
            return np.eye(self.dim)
        e = x / rho
        t = (np.sin(rho) / rho) ** 2
        P = np.outer(e, e)
        return P + t * (np.eye(self.dim) - P)

    def inverse_metric(self, x: np.ndarray) -> np.ndarray:
        """Metric components g^ij at a chart point x."""
        return np.linalg.inv(self.metric(x))

    def to_manifold(self, x: np.ndarray) -> np.ndarray:
        """Image of a chart point under the exponential map."""
        x = np.asarray(x, dtype=float)
        if self.kind is Kind.ROUND_SPHERE:
            p = self.center
            rho = np.linalg.norm(x)
            if rho == 0.0:
                return p.copy()
            # tangent frame at p: Gram-Schmidt against the ambient basis
            basis = _tangent_basis(p)
            v = basis.T @ x
            return np.cos(rho) * p + np.sin(rho) * v / rho
        y = self.center + x
        if self.kind is Kind.FLAT_TORUS:
            y = np.mod(y, self.period)
        return y


def _tangent_basis(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent space of the unit sphere at p."""
    n1 = p.size
    q, _ = np.linalg.qr(np.column_stack([p, np.eye(n1)]))
    basis = q[:, 1:n1].T
    return basis


def exp_chart_sample(m: ManifoldModel, center, radius: float, resolution: int) -> ChartSampling:
    """Sample the exponential chart of radius `radius` at `center`."""
    if radius <= 0:
        raise ChartRadiusError("chart radius must be positive")
    if m.kind is Kind.EUCLIDEAN_BALL:
        c = _ball_point(m, center)
        limit = m.period_or_radius - np.linalg.norm(c)
    else:
        limit = m.injectivity_radius
    if radius >= limit:
        raise ChartRadiusError(f"chart radius {radius} must stay below {limit}")
    rho = np.linspace(0.0, radius, int(resolution))
    if m.kind is Kind.ROUND_SPHERE:
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(rho == 0, 1.0, (np.sin(rho) / np.where(rho == 0, 1.0, rho)) ** 2)
        return ChartSampling(m.kind, m.dim, sphere_point(m.dim, center), radius, rho, t,
                             t ** (m.dim - 1))
    ones = np.ones_like(rho)
    c = _torus_point(m, center) if m.kind is Kind.FLAT_TORUS else _ball_point(m, center)
    return ChartSampling(m.kind, m.dim, c, radius, rho, ones, ones,
                         m.period_or_radius if m.kind is Kind.FLAT_TORUS else 0.0)


# -- spherical means ----------------------------------------------------------------

def _bessel_mean_kernel(n: int, z: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Mean of exp(i k.x) over the unit sphere of R^n as a function of z = |k| rho.

    With nu = n/2 - 1 the kernel is Gamma(n/2) (2/z)^nu J_nu(z); its
    z-derivative is -Gamma(n/2) 2^nu z^{-nu} J_{nu+1}(z).
    """
    nu = n / 2.0 - 1.0
    g = special.gamma(n / 2.0) * 2.0 ** nu
    z = np.asarray(z, dtype=float)
    small = z < 1e-8
    zs = np.where(small, 1.0, z)
    if derivative:
        val = -g * zs ** (-nu) * special.jv(nu + 1, zs)
        return np.where(small, -z / n, val)
    val = g * zs ** (-nu) * special.jv(nu, zs)
    return np.where(small, 1.0, val)


def spherical_mean(m: ManifoldModel, values: np.ndarray, center, rho: np.ndarray,
                   derivative: bool = False) -> np.ndarray:
    """Average of a torus field over Euclidean spheres |x - center| = rho.

    Exact for the trigonometric interpolant of the nodal values, via the
    Bessel mean of each Fourier mode.  With derivative=True the rho
    derivative of the mean is returned.
    """
    if m.is_radial:
        raise PreconditionFailed("spherical means are only needed on the torus")
    c = _torus_point(m, center)
    uh = np.fft.fftn(values)
    k = m.wavenumbers
    phase = np.ones(m.shape, dtype=complex)
    for j in range(m.dim):
        shape = [1] * m.dim
        shape[j] = -1
        phase = phase * np.exp(1j * k * c[j]).reshape(shape)
    coef = (uh * phase).ravel() / m.size
    kk = np.broadcast_to(m.symbol, m.shape).ravel()
    keys, inv = np.unique(np.round(kk, 9), return_inverse=True)
    cr = np.bincount(inv, weights=coef.real)
    kabs = np.sqrt(keys)
    rho = np.asarray(rho, dtype=float)
    z = np.outer(rho, kabs)
    ker = _bessel_mean_kernel(m.dim, z, derivative)
    if derivative:
        ker = ker * kabs[None, :]
    return ker @ cr
