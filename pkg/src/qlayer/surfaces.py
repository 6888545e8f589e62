"""Embedded surfaces in R^3 and their first/second order geometry.

Built-in families are graphs z = f(u, v) with analytic derivatives; the
radially symmetric ones additionally expose their profile f(r) so that
geodesic radii, areas and curvature integrals reduce to 1-D quadrature.
Plug-in surfaces (``GraphSurface`` with no derivative callback,
``ParametricSurface``) fall back to central differences.

Sign conventions: the unit normal has positive z-component at the parameter
origin, b_ij = p_ij . N, the shape operator is S = g^{-1} b and the mean
curvature is the trace H = k1 + k2.  With these choices convex graphs have
H >= 0 and Delta_Sigma z = H n_z.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy import optimize, sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import csgraph

from .errors import ImmersionError, LayerSelfIntersectionRisk

_GL16 = np.polynomial.legendre.leggauss(16)
IMMERSION_TOL = 1e-12


@lru_cache(maxsize=None)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(n: int, lo: float, hi: float):
    """Nodes and weights of the n-point Gauss-Legendre rule on [lo, hi]."""
    x, w = _leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Surface:
    """Base class.  Subclasses implement :meth:`derivatives`."""

    family: str = field(default="surface", init=False)
    symmetry: str = field(default="general", init=False)

    @property
    def scale(self) -> float:
        """Characteristic length used to size grids and cutoffs."""
        return 1.0

    @property
    def extent(self) -> float | None:
        """Half-width of the parameter box; ``None`` means all of R^2."""
        return None

    def params(self) -> dict:
        return {}

    @property
    def tag(self) -> str:
        body = ",".join(f"{k}={v:g}" for k, v in sorted(self.params().items()))
        return f"{self.family}({body})"

    def derivatives(self, u, v):
        """Return p, p_u, p_v, p_uu, p_uv, p_vv with trailing axis of size 3."""
        raise NotImplementedError

    def position(self, u, v):
        return self.derivatives(u, v)[0]

    @cached_property
    def orientation(self) -> float:
        _, pu, pv, *_ = self.derivatives(np.array(0.0), np.array(0.0))
        nz = np.cross(pu, pv)[..., 2]
        return -1.0 if float(nz) < 0 else 1.0

    def candidate_curves(self) -> tuple:
        """Closed curves offered to the collar construction (parameter circles)."""
        return ()


def _numeric_derivatives(fun, u, v, h):
    """Central differences of a vector map (u, v) -> R^3."""
    p = fun(u, v)
    pe, pw = fun(u + h, v), fun(u - h, v)
    pn, ps = fun(u, v + h), fun(u, v - h)
    pu = (pe - pw) / (2 * h)
    pv = (pn - ps) / (2 * h)
    puu = (pe - 2 * p + pw) / h**2
    pvv = (pn - 2 * p + ps) / h**2
    puv = (fun(u + h, v + h) - fun(u + h, v - h) - fun(u - h, v + h)
           + fun(u - h, v - h)) / (4 * h**2)
    return p, pu, pv, puu, puv, pvv


def _graph_vectors(u, v, f, fu, fv, fuu, fuv, fvv):
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    zero, one = np.zeros_like(u), np.ones_like(u)
    p = np.stack([u, v, f * one], axis=-1)
    pu = np.stack([one, zero, fu * one], axis=-1)
    pv = np.stack([zero, one, fv * one], axis=-1)
    puu = np.stack([zero, zero, fuu * one], axis=-1)
    puv = np.stack([zero, zero, fuv * one], axis=-1)
    pvv = np.stack([zero, zero, fvv * one], axis=-1)
    return p, pu, pv, puu, puv, pvv


@dataclass(frozen=True)
class RadialGraph(Surface):
    """Graph of a radial profile z = f(r), r = sqrt(u^2 + v^2)."""

    symmetry: str = field(default="radial", init=False)

    # profile interface: f, f', f'', f'/r (the last one regular at r = 0)
    def f(self, r):
        raise NotImplementedError

    def fp(self, r):
        return self.fp_over_r(r) * r

    def fpp(self, r):
        raise NotImplementedError

    def fp_over_r(self, r):
        raise NotImplementedError

    def W(self, r):
        """Arclength density d(rho)/dr = sqrt(1 + f'^2)."""
        return np.sqrt(1.0 + self.fp(r) ** 2)

    def principal(self, r):
        """Meridian and parallel principal curvatures at parameter radius r."""
        r = np.asarray(r, float)
        w = self.W(r)
        return self.fpp(r) / w**3, self.fp_over_r(r) / w

    def derivatives(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        r = np.hypot(u, v)
        q = self.fp_over_r(r)
        d = self.fpp(r) - q
        safe = np.where(r > 0, r, 1.0)
        cu = np.where(r > 0, u / safe, 0.0)
        cv = np.where(r > 0, v / safe, 0.0)
        cuu, cuv, cvv = cu * cu, cu * cv, cv * cv
        return _graph_vectors(u, v, self.f(r), q * u, q * v,
                              q + d * cuu, d * cuv, q + d * cvv)

    # -- arclength along meridians ------------------------------------------
    def arclength(self, r):
        """Geodesic distance rho(r) = int_0^r sqrt(1 + f'^2) from the apex."""
        r = np.abs(np.asarray(r, float))
        flat = r.ravel()
        if flat.size == 0:
            return r.copy()
        rmax = float(flat.max())
        if rmax == 0.0:
            return np.zeros_like(r)
        s = self.scale
        geo = s / 16 * 2.0 ** np.arange(0, max(1, math.ceil(math.log2(max(rmax, s / 16) * 16 / s))) + 1)
        knots = np.unique(np.concatenate([[0.0], geo[geo < rmax], flat]))
        x, w = _GL16
        lo, hi = knots[:-1], knots[1:]
        half = 0.5 * (hi - lo)
        pts = lo[:, None] + half[:, None] * (x[None, :] + 1.0)
        seg = (self.W(pts) * w[None, :]).sum(axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return cum[np.searchsorted(knots, r)]

    def r_of_rho(self, rho):
        """Inverse of :meth:`arclength` (Newton iteration from a table guess)."""
        rho = np.asarray(rho, float)
        if rho.size == 0:
            return rho.copy()
        top = float(np.max(rho))
        if top <= 0:
            return np.zeros_like(rho)
        s = self.scale
        table_r = np.concatenate([[0.0], np.geomspace(s * 1e-3, max(top, s) * 1.01, 400)])
        table_rho = self.arclength(table_r)
        while table_rho[-1] < top:
            table_r = np.append(table_r, table_r[-1] * 2)
            table_rho = self.arclength(table_r)
        r = np.interp(rho, table_rho, table_r)
        for _ in range(4):
            r = np.maximum(r - (self.arclength(r) - rho) / self.W(r), 0.0)
        return r

    def circumference(self, rho):
        return 2 * np.pi * self.r_of_rho(rho)

    def area(self, rho):
        """Area of the geodesic ball B(rho)."""
        r_max = float(self.r_of_rho(np.array([rho]))[0])
        if r_max == 0:
            return 0.0
        total = 0.0
        for lo, hi in _geometric_panels(0.0, r_max, self.scale):
            x, w = gauss_legendre(16, lo, hi)
            total += np.sum(w * 2 * np.pi * x * self.W(x))
        return total


@dataclass(frozen=True)
class Plane(RadialGraph):
    family: str = field(default="plane", init=False)

    def f(self, r):
        return np.zeros_like(np.asarray(r, float))

    def fpp(self, r):
        return np.zeros_like(np.asarray(r, float))

    def fp_over_r(self, r):
        return np.zeros_like(np.asarray(r, float))

    def candidate_curves(self):
        return (ParameterCircle(50.0),)


@dataclass(frozen=True)
class HyperboloidSheet(RadialGraph):
    """z = slope * sqrt(width^2 + r^2); apex curvatures slope/width."""

    slope: float = 1.0
    width: float = 1.0
    family: str = field(default="hyperboloid", init=False)

    @property
    def scale(self):
        return self.width

    def params(self):
        return {"slope": self.slope, "width": self.width}

    def f(self, r):
        return self.slope * np.sqrt(self.width**2 + np.asarray(r, float) ** 2)

    def fp_over_r(self, r):
        return self.slope / np.sqrt(self.width**2 + np.asarray(r, float) ** 2)

    def fpp(self, r):
        s2 = self.width**2
        return self.slope * s2 / (s2 + np.asarray(r, float) ** 2) ** 1.5

    def candidate_curves(self):
        return tuple(ParameterCircle(c * self.width) for c in (50.0, 5e3, 5e4, 5e5))


@dataclass(frozen=True)
class GaussianBump(RadialGraph):
    """z = height * exp(-r^2 / width^2); positive cap, negative annulus."""

    height: float = 1.0
    width: float = 1.0
    family: str = field(default="bump", init=False)

    @property
    def scale(self):
        return self.width

    def params(self):
        return {"height": self.height, "width": self.width}

    def f(self, r):
        return self.height * np.exp(-np.asarray(r, float) ** 2 / self.width**2)

    def fp_over_r(self, r):
        return -2 * self.f(r) / self.width**2

    def fpp(self, r):
        r = np.asarray(r, float)
        w2 = self.width**2
        return self.f(r) * (-2 / w2 + 4 * r * r / w2**2)

    def candidate_curves(self):
        return tuple(ParameterCircle(c * self.width) for c in (2.0, 5.0))


@dataclass(frozen=True)
class FlattenedCap(RadialGraph):
    """z = slope * width * log cosh(r / width).

    Paraboloid-like cap (curvature slope/width at the apex) that opens into a
    cone of slope ``slope``; K >= 0 everywhere and ||B|| -> 0.
    """

    slope: float = 1.0
    width: float = 1.0
    family: str = field(default="cap", init=False)

    @property
    def scale(self):
        return self.width

    def params(self):
        return {"slope": self.slope, "width": self.width}

    def f(self, r):
        x = np.abs(np.asarray(r, float)) / self.width
        logcosh = x + np.log1p(np.exp(-2 * x)) - math.log(2.0)
        return self.slope * self.width * logcosh

    def fp_over_r(self, r):
        r = np.asarray(r, float)
        x = r / self.width
        small = np.abs(x) < 1e-4
        xs = np.where(small, 1.0, x)
        return np.where(small, (self.slope / self.width) * (1 - x * x / 3),
                        self.slope * np.tanh(xs) / np.where(small, 1.0, r))

    def fpp(self, r):
        x = np.abs(np.asarray(r, float)) / self.width
        e = np.exp(-2 * x)
        return (self.slope / self.width) * 4 * e / (1 + e) ** 2

    def candidate_curves(self):
        return tuple(ParameterCircle(c * self.width) for c in (50.0, 5e3, 5e4, 5e5))


@dataclass(frozen=True)
class GraphSurface(Surface):
    """Plug-in graph z = height(u, v) over a finite parameter box."""

    height: Callable = None
    box: float = 20.0
    length_scale: float = 1.0
    height_derivatives: Callable | None = None
    family: str = field(default="graph", init=False)

    @property
    def scale(self):
        return self.length_scale

    @property
    def extent(self):
        return self.box

    def params(self):
        return {"box": self.box}

    def derivatives(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        if self.height_derivatives is not None:
            return _graph_vectors(u, v, *self.height_derivatives(u, v))
        h = 1e-4 * self.scale

        def lift(a, b):
            return np.stack(np.broadcast_arrays(a, b, self.height(a, b)), axis=-1)

        return _numeric_derivatives(lift, u, v, h)


@dataclass(frozen=True)
class EllipticBump(GraphSurface):
    """z = height * exp(-u^2/wu^2 - v^2/wv^2): built-in non-radial family."""

    amplitude: float = 1.0
    wu: float = 1.0
    wv: float = 2.0
    family: str = field(default="elliptic_bump", init=False)

    @property
    def scale(self):
        return min(self.wu, self.wv)

    @property
    def extent(self):
        return 6.0 * max(self.wu, self.wv)

    def params(self):
        return {"amplitude": self.amplitude, "wu": self.wu, "wv": self.wv}

    def derivatives(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        a, bu, bv = self.amplitude, 1 / self.wu**2, 1 / self.wv**2
        f = a * np.exp(-bu * u * u - bv * v * v)
        fu, fv = -2 * bu * u * f, -2 * bv * v * f
        fuu = (4 * bu * bu * u * u - 2 * bu) * f
        fvv = (4 * bv * bv * v * v - 2 * bv) * f
        fuv = 4 * bu * bv * u * v * f
        return _graph_vectors(u, v, f, fu, fv, fuu, fuv, fvv)


@dataclass(frozen=True)
class ParametricSurface(Surface):
    """Plug-in immersion (u, v) -> R^3; all derivatives by central differences."""

    position_map: Callable = None
    box: float = 10.0
    length_scale: float = 1.0
    family: str = field(default="parametric", init=False)

    @property
    def scale(self):
        return self.length_scale

    @property
    def extent(self):
        return self.box

    def derivatives(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        return _numeric_derivatives(self.position_map, u, v, 1e-4 * self.scale)


@dataclass(frozen=True)
class ParameterCircle:
    """The curve {u^2 + v^2 = radius^2} in the parameter plane."""

    radius: float

    def points(self, n=64):
        th = 2 * np.pi * np.arange(n) / n
        return self.radius * np.cos(th), self.radius * np.sin(th)


FAMILIES = {
    "plane": Plane,
    "hyperboloid": HyperboloidSheet,
    "bump": GaussianBump,
    "cap": FlattenedCap,
    "elliptic_bump": EllipticBump,
}


def make_surface(family: str, **params) -> Surface:
    """Instantiate a built-in family by name."""
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown surface family {family!r}; "
                         f"choose from {sorted(FAMILIES)}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# Pointwise geometry
# ---------------------------------------------------------------------------

@dataclass
class GeomSample:
    """Geometry at one point or a batch of points (leading array axes)."""

    u: np.ndarray
    v: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    nz: np.ndarray
    g: np.ndarray
    b: np.ndarray
    S: np.ndarray
    shape_eigs: np.ndarray
    K: np.ndarray
    H: np.ndarray
    normB: np.ndarray
    tangents: tuple
    dnormal: tuple
    sqrt_det_g: np.ndarray

    @property
    def grad_nz(self):
        """Parameter gradient (d/du, d/dv) of the normal's z-component."""
        return np.stack([self.dnormal[0][..., 2], self.dnormal[1][..., 2]], axis=-1)


def _inv2(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1] / det
    inv[..., 1, 1] = m[..., 0, 0] / det
    inv[..., 0, 1] = -m[..., 0, 1] / det
    inv[..., 1, 0] = -m[..., 1, 0] / det
    return inv, det


def sample(surface: Surface, u, v) -> GeomSample:
    """Evaluate the full first/second order geometry at parameter points.

    Raises
    ------
    ImmersionError
        If det g drops below ``IMMERSION_TOL`` (relative to scale^4).
    """
    p, pu, pv, puu, puv, pvv = surface.derivatives(u, v)
    g = np.empty(p.shape[:-1] + (2, 2))
    g[..., 0, 0] = np.einsum("...i,...i", pu, pu)
    g[..., 0, 1] = g[..., 1, 0] = np.einsum("...i,...i", pu, pv)
    g[..., 1, 1] = np.einsum("...i,...i", pv, pv)
    detg = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
    if np.any(detg <= IMMERSION_TOL * surface.scale**4):
        raise ImmersionError(f"{surface.tag}: det g <= {IMMERSION_TOL:g} at a sampled point")
    ginv, detg = _inv2(g)
    cross = np.cross(pu, pv) * surface.orientation
    N = cross / np.linalg.norm(cross, axis=-1, keepdims=True)
    b = np.empty_like(g)
    b[..., 0, 0] = np.einsum("...i,...i", puu, N)
    b[..., 0, 1] = b[..., 1, 0] = np.einsum("...i,...i", puv, N)
    b[..., 1, 1] = np.einsum("...i,...i", pvv, N)
    S = ginv @ b
    H = S[..., 0, 0] + S[..., 1, 1]
    K = (b[..., 0, 0] * b[..., 1, 1] - b[..., 0, 1] ** 2) / detg
    disc = np.sqrt(np.maximum(0.25 * H * H - K, 0.0))
    eigs = np.stack([0.5 * H + disc, 0.5 * H - disc], axis=-1)
    # Weingarten: N_i = -S^k_i p_k
    Nu = -(S[..., 0, 0, None] * pu + S[..., 1, 0, None] * pv)
    Nv = -(S[..., 0, 1, None] * pu + S[..., 1, 1, None] * pv)
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    return GeomSample(
        u=u, v=v, point=p, normal=N, nz=N[..., 2], g=g, b=b, S=S,
        shape_eigs=eigs, K=K, H=H, normB=np.sqrt(np.maximum(H * H - 2 * K, 0.0)),
        tangents=(pu, pv), dnormal=(Nu, Nv), sqrt_det_g=np.sqrt(detg),
    )


def normal_field(surface: Surface, u, v):
    """Unit normal only (used by finite-difference checks)."""
    _, pu, pv, *_ = surface.derivatives(u, v)
    c = np.cross(pu, pv) * surface.orientation
    return c / np.linalg.norm(c, axis=-1, keepdims=True)


def weingarten_residual(surface: Surface, u, v, h=None):
    """Relative mismatch between finite-difference dN and -S dp."""
    h = 1e-4 * surface.scale if h is None else h
    s = sample(surface, u, v)
    dNu = (normal_field(surface, u + h, v) - normal_field(surface, u - h, v)) / (2 * h)
    dNv = (normal_field(surface, u, v + h) - normal_field(surface, u, v - h)) / (2 * h)
    num = np.linalg.norm(dNu - s.dnormal[0], axis=-1) + np.linalg.norm(dNv - s.dnormal[1], axis=-1)
    ref = np.maximum(s.normB, 1.0 / surface.scale)
    return num / ref


def laplace_beltrami(surface: Surface, fn: Callable, u, v, h=None):
    """Delta_Sigma fn = |g|^{-1/2} d_i(|g|^{1/2} g^{ij} d_j fn) by central differences."""
    h = 1e-3 * surface.scale if h is None else h

    def flux(uu, vv):
        s = sample(surface, uu, vv)
        du = (fn(uu + h, vv) - fn(uu - h, vv)) / (2 * h)
        dv = (fn(uu, vv + h) - fn(uu, vv - h)) / (2 * h)
        ginv, _ = _inv2(s.g)
        fu = s.sqrt_det_g * (ginv[..., 0, 0] * du + ginv[..., 0, 1] * dv)
        fv = s.sqrt_det_g * (ginv[..., 1, 0] * du + ginv[..., 1, 1] * dv)
        return fu, fv

    fe, _ = flux(u + h, v)
    fw, _ = flux(u - h, v)
    _, fn_ = flux(u, v + h)
    _, fs = flux(u, v - h)
    s = sample(surface, u, v)
    return ((fe - fw) + (fn_ - fs)) / (2 * h) / s.sqrt_det_g


# ---------------------------------------------------------------------------
# Geodesic distance
# ---------------------------------------------------------------------------

def _geometric_panels(lo, hi, scale, per_octave=2):
    """Split [lo, hi] into panels whose end ratio is at most 2**(1/per_octave)."""
    panels = []
    if hi <= lo:
        return panels
    start = lo
    if lo <= 0:
        first = min(hi, scale)
        n = max(1, per_octave)
        edges = np.linspace(0.0, first, n + 1)
        panels.extend(zip(edges[:-1], edges[1:]))
        start = first
    if hi > start:
        n = max(1, math.ceil(per_octave * math.log2(hi / start) - 1e-12))
        edges = np.geomspace(start, hi, n + 1)
        panels.extend(zip(edges[:-1], edges[1:]))
    return panels


# moves up to (3, 2): largest angular gap 18.4 deg, flat-metric error <= 1.3%
_STENCIL = tuple((i, j) for i in range(4) for j in range(-3, 4)
                 if (i > 0 or j > 0) and math.gcd(i, abs(j)) == 1 and i * i + j * j < 14)


@dataclass
class DistanceField:
    """Geodesic distance from the parameter origin on a 32-neighbour grid graph."""

    axis: np.ndarray
    distance: np.ndarray

    def __call__(self, u, v):
        interp = RegularGridInterpolator((self.axis, self.axis), self.distance,
                                         bounds_error=False, fill_value=np.inf)
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        pts = np.stack([u.ravel(), v.ravel()], axis=-1)
        return interp(pts).reshape(u.shape)


@lru_cache(maxsize=16)
def distance_field(surface: Surface, resolution: int = 201) -> DistanceField:
    """Shortest paths on the parameter graph with midpoint edge lengths from g."""
    L = surface.extent
    if L is None:
        raise ValueError("distance_field needs a surface with a finite parameter box")
    n = resolution | 1
    axis = np.linspace(-L, L, n)
    h = axis[1] - axis[0]
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, lens = [], [], []
    for di, dj in _STENCIL:
        i0 = np.arange(0, n - di)
        j0 = np.arange(max(0, -dj), n - max(0, dj))
        I, J = np.meshgrid(i0, j0, indexing="ij")
        U = axis[I] + 0.5 * di * h
        V = axis[J] + 0.5 * dj * h
        g = sample(surface, U, V).g
        d = np.array([di * h, dj * h])
        ln = np.sqrt(np.einsum("i,...ij,j", d, g, d))
        rows.append(idx[I, J].ravel())
        cols.append(idx[I + di, J + dj].ravel())
        lens.append(ln.ravel())
    rows, cols, lens = map(np.concatenate, (rows, cols, lens))
    graph = sparse.csr_matrix((lens, (rows, cols)), shape=(n * n, n * n))
    dist = csgraph.dijkstra(graph, directed=False, indices=idx[n // 2, n // 2])
    return DistanceField(axis=axis, distance=dist.reshape(n, n))


def geodesic_radius(surface: Surface, u, v):
    """Distance from the basepoint (parameter origin) to (u, v)."""
    if surface.symmetry == "radial":
        return surface.arclength(np.hypot(u, v))
    return distance_field(surface)(u, v)


# ---------------------------------------------------------------------------
# Global integrals
# ---------------------------------------------------------------------------

@dataclass
class TotalCurvature:
    total_K: float
    total_abs_K: float
    error_estimate: float
    converged: bool


def _radial_K_breaks(surface: RadialGraph, r_max):
    r = np.concatenate([[0.0], np.geomspace(surface.scale * 1e-3, r_max, 2000)])
    k = np.prod(surface.principal(r), axis=0)
    out = []
    for i in np.nonzero(np.sign(k[:-1]) * np.sign(k[1:]) < 0)[0]:
        out.append(optimize.brentq(lambda x: float(np.prod(surface.principal(np.array(x)))),
                                   r[i], r[i + 1], xtol=1e-14 * surface.scale))
    return out


def _radial_integral(surface: RadialGraph, fn, r_max, order=16, breaks=()):
    knots = sorted({0.0, r_max, *[b for b in breaks if 0 < b < r_max]})
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        for a, b in _geometric_panels(lo, hi, surface.scale):
            x, w = gauss_legendre(order, a, b)
            total += np.sum(w * fn(x) * 2 * np.pi * x * surface.W(x))
    return total


def total_curvature(surface: Surface, R: float, tol: float = 1e-8) -> TotalCurvature:
    """int_{B(R)} K and int_{B(R)} |K| by 2-D quadrature."""
    if R <= 0:
        raise ValueError("R must be positive")
    if surface.symmetry == "radial":
        r_max = float(surface.r_of_rho(np.array([R]))[0])
        breaks = _radial_K_breaks(surface, r_max)

        def K(x):
            return np.prod(surface.principal(x), axis=0)

        vals = []
        for order in (16, 8):
            vals.append((_radial_integral(surface, K, r_max, order, breaks),
                         _radial_integral(surface, lambda x: np.abs(K(x)), r_max, order, breaks)))
        err = max(abs(vals[0][0] - vals[1][0]), abs(vals[0][1] - vals[1][1]))
        tk, tak = vals[0]
    else:
        out = []
        dist = distance_field(surface)
        for n in (400, 200):
            x, w = _tensor_rule(surface.extent, n)
            U, V = np.meshgrid(x, x, indexing="ij")
            Wt = np.outer(w, w)
            s = sample(surface, U, V)
            inside = dist(U, V) <= R
            dA = Wt * s.sqrt_det_g * inside
            out.append((np.sum(s.K * dA), np.sum(np.abs(s.K) * dA)))
        tk, tak = out[0]
        err = max(abs(out[0][0] - out[1][0]), abs(out[0][1] - out[1][1]))
    converged = err <= tol * max(1.0, abs(tak))
    return TotalCurvature(float(tk), float(tak), float(err), bool(converged))


def _tensor_rule(L, n, order=4):
    panels = np.linspace(-L, L, n // order + 1)
    xs, ws = [], []
    for a, b in zip(panels[:-1], panels[1:]):
        x, w = gauss_legendre(order, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def boundary_length(surface: Surface, R: float) -> float:
    """Length of the geodesic circle of radius R."""
    if surface.symmetry == "radial":
        return float(surface.circumference(np.array([R]))[0])
    dist = distance_field(surface)
    x, w = _tensor_rule(surface.extent, 400)
    U, V = np.meshgrid(x, x, indexing="ij")
    s = sample(surface, U, V)
    d = dist(U, V)
    width = 2.5 * (x[-1] - x[0]) / x.size
    kernel = np.maximum(0.0, 1 - np.abs(d - R) / width) / width
    return float(np.sum(np.outer(w, w) * s.sqrt_det_g * kernel))


def boundary_B_integral(surface: Surface, R: float) -> float:
    """Line integral of ||B|| over the geodesic circle of radius R."""
    if R <= 0:
        raise ValueError("R must be positive")
    if surface.symmetry == "radial":
        r = surface.r_of_rho(np.array([R]))
        km, kp = surface.principal(r)
        return float(2 * np.pi * r[0] * np.hypot(km, kp)[0])
    dist = distance_field(surface)
    x, w = _tensor_rule(surface.extent, 400)
    U, V = np.meshgrid(x, x, indexing="ij")
    s = sample(surface, U, V)
    d = dist(U, V)
    width = 2.5 * (x[-1] - x[0]) / x.size
    kernel = np.maximum(0.0, 1 - np.abs(d - R) / width) / width
    return float(np.sum(np.outer(w, w) * s.sqrt_det_g * s.normB * kernel))


@dataclass
class HartmanResult:
    lambda_estimate: float
    residual: float
    relative_residual: float
    lambdas: list
    total_K: float


def hartman_deficit(surface: Surface, radii, tol: float = 1e-2) -> HartmanResult:
    """Isoperimetric constant of the (single) end and the Gauss-Bonnet residual.

    lambda is estimated as Length(dB(r)) / r, extrapolated assuming a 1/r
    correction from the two largest radii; the residual compares
    int_{B(r_max)} K with 2 pi chi - lambda (chi = 1 for graphs).
    """
    radii = np.asarray(radii, float)
    if radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("need at least two increasing radii")
    lams = np.array([boundary_length(surface, r) / r for r in radii])
    steps = np.abs(np.diff(lams)) / np.maximum(np.abs(lams[1:]), 1e-300)
    if np.any(steps > tol):
        warnings.warn(f"slow convergence of isoperimetric estimates: {lams}", RuntimeWarning)
    r1, r2 = radii[-2:]
    l1, l2 = lams[-2:]
    lam = (l2 * r2 - l1 * r1) / (r2 - r1)
    tk = total_curvature(surface, radii[-1]).total_K
    resid = abs(tk - (2 * np.pi - lam))
    return HartmanResult(float(lam), float(resid), float(resid / (2 * np.pi)),
                         [float(x) for x in lams], float(tk))


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

@dataclass
class AdmissibilityReport:
    sup_normB: float
    Ca: float
    totalK: float
    totalAbsK: float
    K_sign: str
    asymptotically_flat: bool
    decay_exponent_estimate: float | None
    totally_geodesic: bool
    argmax_radius: float
    far_radius: float

    def to_dict(self):
        return dict(self.__dict__)


def _sup_normB_radial(surface: RadialGraph, r_far):
    r = np.concatenate([[0.0], np.geomspace(surface.scale * 1e-4, r_far, 4000)])
    nb = np.hypot(*surface.principal(r))
    i = int(np.argmax(nb))
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, r.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda x: -float(np.hypot(*surface.principal(np.array(x)))),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * surface.scale})
        if -res.fun > nb[i]:
            return float(-res.fun), float(res.x)
    return float(nb[i]), float(r[i])


def admissibility(surface: Surface, a: float, far_radius: float | None = None,
                  flat_tol: float = 1e-2) -> AdmissibilityReport:
    """Check the hypotheses the certifier and solver rely on.

    Raises
    ------
    LayerSelfIntersectionRisk
        If sup ||B|| * a >= 1.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    scale = surface.scale
    if surface.symmetry == "radial":
        far = 1e3 * scale if far_radius is None else far_radius
        r_far = float(surface.r_of_rho(np.array([far]))[0])
        C, r_arg = _sup_normB_radial(surface, r_far)
        rr = np.geomspace(scale * 1e-3, r_far, 3000)
        km, kp = surface.principal(rr)
        Kmin, Kmax = float(np.min(km * kp)), float(np.max(km * kp))
        tail_r = np.geomspace(r_far / 10, r_far, 50)
        tail_rho = surface.arclength(tail_r)
        tail_B = np.hypot(*surface.principal(tail_r))
    else:
        far = 0.95 * surface.extent if far_radius is None else far_radius
        x = np.linspace(-surface.extent, surface.extent, 301)
        U, V = np.meshgrid(x, x, indexing="ij")
        s = sample(surface, U, V)
        i = np.unravel_index(np.argmax(s.normB), s.normB.shape)
        res = optimize.minimize(lambda p: -float(sample(surface, p[0], p[1]).normB),
                                [U[i], V[i]], method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-14})
        C = max(float(s.normB[i]), float(-res.fun))
        r_arg = float(np.hypot(*res.x))
        Kmin, Kmax = float(s.K.min()), float(s.K.max())
        d = distance_field(surface)(U, V)
        ring = (d > far / 10) & (d < far)
        tail_rho, tail_B = d[ring], s.normB[ring]
    tc = total_curvature(surface, far)
    K_sign = "nonnegative" if Kmin >= -1e-12 * max(Kmax, 1.0 / scale**2) else "mixed"
    tg = C <= 1e-12 / scale
    B_far = float(np.max(tail_B[tail_rho >= 0.9 * np.max(tail_rho)])) if tail_B.size else 0.0
    flat = B_far <= flat_tol / scale
    alpha = None
    pos = tail_B > 1e-300
    if np.count_nonzero(pos) >= 2 and not tg:
        slope = np.polyfit(np.log(tail_rho[pos]), np.log(tail_B[pos]), 1)[0]
        alpha = float(-slope)
    report = AdmissibilityReport(
        sup_normB=C, Ca=C * a, totalK=tc.total_K, totalAbsK=tc.total_abs_K,
        K_sign=K_sign, asymptotically_flat=bool(flat), decay_exponent_estimate=alpha,
        totally_geodesic=bool(tg), argmax_radius=r_arg, far_radius=float(far),
    )
    if C * a >= 1:
        err = LayerSelfIntersectionRisk(
            f"{surface.tag}: C*a = {C * a:.6g} >= 1 (C = sup||B|| = {C:.6g}, a = {a:g})")
        err.report = report
        raise err
    return report


def dump_samples_csv(surface: Surface, path, radius: float, n: int = 21):
    """Write geometry on an n x n parameter grid as CSV (u,v,K,H,normB,nz)."""
    x = np.linspace(-radius, radius, n)
    U, V = np.meshgrid(x, x, indexing="ij")
    s = sample(surface, U, V)
    cols = np.column_stack([U.ravel(), V.ravel(), s.K.ravel(), s.H.ravel(),
                            s.normB.ravel(), s.nz.ravel()])
    np.savetxt(path, cols, delimiter=",", header="u,v,K,H,normB,nz", comments="", fmt="%.17g")
