"""Quadratic forms Q = Q1 + Q2 for separable test fields on the layer.

    Q1(f, f) = int_Omega G^{ij} d_i f d_j f dOmega            (horizontal energy)
    Q2(f, f) = int_Omega ((d_t f)^2 - kappa^2 f^2) dOmega      (transverse excess)

with dOmega = J dSigma dt.  A field is a finite sum of products u(x) tau(t).

When every transverse factor is chi(t) = cos(kappa t) times a smooth ratio
gamma(t), Q2 is evaluated in the equivalent ground-state form

    Q2 = int int [chi^2 Gamma_t^2 J + chi chi' (H - 2 K t) Gamma^2] dt dSigma,

(f = chi Gamma, one integration by parts in t).  It has no cancellation
between the two large terms of the direct form, which matters once the
support mass reaches 1e10 and beyond.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CoverageError, FoldError, ZeroNormError
from .layer import FOLD_TOL, LayerConfig, layer_metric_at
from .surfaces import (
    GeomSample, Surface, _geometric_panels, distance_field, gauss_legendre, sample,
)

# ---------------------------------------------------------------------------
# Transverse profiles
# ---------------------------------------------------------------------------


class Transverse:
    """A function tau(t) on [-a, a] vanishing at both ends."""

    parity = 0  # +1 even, -1 odd, 0 neither

    def __call__(self, t, cfg: LayerConfig):
        """Return tau(t), tau'(t)."""
        raise NotImplementedError

    def ratio(self, t, cfg: LayerConfig):
        """Return (tau / chi, (tau / chi)') or ``None`` when not available."""
        return None


@dataclass(frozen=True)
class PolyCos(Transverse):
    """tau(t) = p(t) cos(kappa t) with p given by ascending coefficients."""

    coeffs: tuple = (1.0,)

    @property
    def parity(self):
        odd = any(c != 0 for c in self.coeffs[1::2])
        even = any(c != 0 for c in self.coeffs[0::2])
        return 1 if not odd else (-1 if not even else 0)

    def _poly(self, t):
        p = np.polynomial.polynomial.polyval(t, self.coeffs)
        dp = np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(self.coeffs)) \
            if len(self.coeffs) > 1 else np.zeros_like(t)
        return p, dp

    def __call__(self, t, cfg):
        t = np.asarray(t, float)
        k = cfg.kappa
        c, s = np.cos(k * t), np.sin(k * t)
        p, dp = self._poly(t)
        return p * c, dp * c - k * p * s

    def ratio(self, t, cfg):
        return self._poly(np.asarray(t, float))


def Cosine() -> PolyCos:
    """chi(t) = cos(kappa t), the transverse ground mode."""
    return PolyCos((1.0,))


def TimesT() -> PolyCos:
    """chi_1(t) = t cos(kappa t)."""
    return PolyCos((0.0, 1.0))


@dataclass(frozen=True)
class SineSeries(Transverse):
    """sum_n c_n sin(n pi (t + a) / 2a), n = 1, 2, ...: the Dirichlet modes."""

    coeffs: tuple = (1.0,)

    @property
    def parity(self):
        odd_modes = any(c != 0 for c in self.coeffs[0::2])   # n = 1, 3, ... are even in t
        even_modes = any(c != 0 for c in self.coeffs[1::2])
        return 1 if not even_modes else (-1 if not odd_modes else 0)

    def __call__(self, t, cfg):
        t = np.asarray(t, float)
        val = np.zeros_like(t)
        der = np.zeros_like(t)
        for n, c in enumerate(self.coeffs, start=1):
            w = n * math.pi / (2 * cfg.a)
            val = val + c * np.sin(w * (t + cfg.a))
            der = der + c * w * np.cos(w * (t + cfg.a))
        return val, der


# ---------------------------------------------------------------------------
# Surface fields
# ---------------------------------------------------------------------------


@dataclass
class Nodes:
    """Surface quadrature nodes with their geometry and geodesic radius."""

    u: np.ndarray
    v: np.ndarray
    area: np.ndarray          # dSigma weights
    geom: GeomSample
    rho: np.ndarray
    grad_rho: np.ndarray      # parameter gradient, shape (n, 2)


class SurfaceField:
    """Scalar field u on the surface with parameter gradient."""

    def evaluate(self, nodes: Nodes):
        """Return values (n,) and parameter gradients (n, 2)."""
        raise NotImplementedError

    def rho_support(self, surface: Surface) -> tuple[float, float]:
        """Geodesic annulus (rho_in, rho_out) containing the support."""
        raise NotImplementedError

    def param_radius(self, surface: Surface) -> float:
        """Radius of a parameter disk containing the support."""
        raise NotImplementedError

    def breaks(self) -> tuple:
        """Geodesic radii where the field is not smooth."""
        return ()

    radial = False


@dataclass(frozen=True)
class RadialField(SurfaceField):
    """u = profile(rho) for a profile exposing ``__call__``, ``support`` and ``breaks``."""

    profile: object
    radial = True

    def evaluate(self, nodes):
        val, der = self.profile(nodes.rho)
        return val, der[:, None] * nodes.grad_rho

    def rho_support(self, surface):
        return tuple(self.profile.support)

    def param_radius(self, surface):
        rho_out = self.profile.support[1]
        if surface.symmetry == "radial":
            return float(surface.r_of_rho(np.array([rho_out]))[0])
        return float(rho_out)  # graphs: parameter distance <= geodesic distance

    def breaks(self):
        return tuple(self.profile.breaks)


@dataclass(frozen=True)
class CartesianField(SurfaceField):
    """u given by closures of the parameters, supported in the disk of ``radius``."""

    fn: object
    grad: object
    radius: float

    def evaluate(self, nodes):
        val = np.asarray(self.fn(nodes.u, nodes.v), float)
        gu, gv = self.grad(nodes.u, nodes.v)
        return val, np.stack([gu, gv], axis=-1)

    def rho_support(self, surface):
        if surface.symmetry == "radial":
            return 0.0, float(surface.arclength(np.array([self.radius]))[0])
        return 0.0, math.inf

    def param_radius(self, surface):
        return self.radius

    def breaks(self):
        return ()


@dataclass(frozen=True)
class NormalZField(SurfaceField):
    """n_z times a base field."""

    base: SurfaceField

    @property
    def radial(self):
        return self.base.radial

    def evaluate(self, nodes):
        val, grad = self.base.evaluate(nodes)
        nz = nodes.geom.nz
        return nz * val, nz[:, None] * grad + val[:, None] * nodes.geom.grad_nz

    def rho_support(self, surface):
        return self.base.rho_support(surface)

    def param_radius(self, surface):
        return self.base.param_radius(surface)

    def breaks(self):
        return self.base.breaks()


@dataclass(frozen=True)
class ProductField(SurfaceField):
    first: SurfaceField
    second: SurfaceField

    @property
    def radial(self):
        return self.first.radial and self.second.radial

    def evaluate(self, nodes):
        a, ga = self.first.evaluate(nodes)
        b, gb = self.second.evaluate(nodes)
        return a * b, b[:, None] * ga + a[:, None] * gb

    def rho_support(self, surface):
        a0, a1 = self.first.rho_support(surface)
        b0, b1 = self.second.rho_support(surface)
        return max(a0, b0), min(a1, b1)

    def param_radius(self, surface):
        return min(self.first.param_radius(surface), self.second.param_radius(surface))

    def breaks(self):
        return self.first.breaks() + self.second.breaks()


@dataclass
class LayerField:
    """f(x, t) = sum_k u_k(x) tau_k(t)."""

    terms: list = field(default_factory=list)

    def __add__(self, other: "LayerField") -> "LayerField":
        return LayerField(list(self.terms) + list(other.terms))

    def scaled(self, c: float) -> "LayerField":
        return LayerField([(ProductField(u, _Constant(c)), tau) for u, tau in self.terms])

    @property
    def radial(self) -> bool:
        return all(u.radial for u, _ in self.terms)

    def support_annulus(self, surface) -> tuple[float, float]:
        sup = [u.rho_support(surface) for u, _ in self.terms]
        return min(s[0] for s in sup), max(s[1] for s in sup)

    def param_radius(self, surface) -> float:
        return max(u.param_radius(surface) for u, _ in self.terms)

    def breaks(self) -> tuple:
        return tuple(b for u, _ in self.terms for b in u.breaks())


@dataclass(frozen=True)
class _Constant(SurfaceField):
    c: float
    radial = True

    def evaluate(self, nodes):
        n = nodes.rho.shape[0]
        return np.full(n, self.c), np.zeros((n, 2))

    def rho_support(self, surface):
        return 0.0, math.inf

    def param_radius(self, surface):
        return math.inf


def separable(u: SurfaceField, tau: Transverse) -> LayerField:
    return LayerField([(u, tau)])


# ---------------------------------------------------------------------------
# Quadrature grids
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class QuadratureGrid:
    """Surface nodes with area weights and a Gauss-Legendre rule in t.

    Polar grids (radial surfaces) integrate in geodesic polar coordinates,
    dSigma = r(rho) drho dtheta: Gauss-Legendre of ``order`` on panels in rho
    split at every field break and geometrically (ratio 2**(1/2)) beyond one
    length scale, trapezoid with ``n_theta`` points in angle.  The rule is
    exact for polynomials of degree 2*order - 1 in rho on each panel and for
    trigonometric polynomials of degree < n_theta in angle.

    Tensor grids cover [-L, L]^2 with ``order``-point Gauss panels.
    """

    surface: Surface
    kind: str
    nodes: Nodes
    t: np.ndarray
    wt: np.ndarray
    a: float
    coverage: float
    settings: dict

    @property
    def size(self):
        return self.nodes.u.size * self.t.size

    def coarse(self) -> "QuadratureGrid":
        s = dict(self.settings)
        s["order"] = max(2, s["order"] // 2)
        s["n_t"] = max(2, s["n_t"] // 2)
        if "n_theta" in s:
            s["n_theta"] = max(1, s["n_theta"] // 2)
        return _rebuild(self.surface, self.kind, self.a, s)

    def refined(self) -> "QuadratureGrid":
        s = dict(self.settings)
        s["order"] *= 2
        s["n_t"] *= 2
        if "n_theta" in s and s["n_theta"] > 1:
            s["n_theta"] *= 2
        return _rebuild(self.surface, self.kind, self.a, s)


def _rebuild(surface, kind, a, s):
    if kind == "polar":
        return polar_grid(surface, a, **s)
    return tensor_grid(surface, a, **s)


def _t_rule(a, n_t):
    return gauss_legendre(n_t, -a, a)


def polar_grid(surface: Surface, a: float, rho_max: float, breaks: Sequence[float] = (),
               order: int = 8, n_theta: int = 1, n_t: int = 16, per_octave: int = 2
               ) -> QuadratureGrid:
    """Geodesic polar grid on a radial surface out to ``rho_max``."""
    if surface.symmetry != "radial":
        raise ValueError("polar grids need a radially symmetric surface")
    knots = sorted({0.0, float(rho_max), *[float(b) for b in breaks if 0 < b < rho_max]})
    xs, ws = [], []
    for lo, hi in zip(knots[:-1], knots[1:]):
        for p, q in _geometric_panels(lo, hi, surface.scale, per_octave):
            x, w = gauss_legendre(order, p, q)
            xs.append(x)
            ws.append(w)
    rho = np.concatenate(xs)
    wr = np.concatenate(ws)
    r = surface.r_of_rho(rho)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    RHO = np.broadcast_to(rho[:, None], R.shape)
    area = (wr * r)[:, None] * np.full(n_theta, 2 * np.pi / n_theta)[None, :]
    u, v = (R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()
    geom = sample(surface, u, v)
    rr = R.ravel()
    Wr = surface.W(rr)
    grad_rho = np.stack([Wr * u / rr, Wr * v / rr], axis=-1)
    nodes = Nodes(u=u, v=v, area=area.ravel(), geom=geom, rho=RHO.ravel().copy(), grad_rho=grad_rho)
    t, wt = _t_rule(a, n_t)
    settings = dict(rho_max=float(rho_max), breaks=tuple(knots[1:-1]), order=order,
                    n_theta=n_theta, n_t=n_t, per_octave=per_octave)
    return QuadratureGrid(surface, "polar", nodes, t, wt, a, float(rho_max), settings)


def tensor_grid(surface: Surface, a: float, half_width: float, panels: int = 16,
                order: int = 8, n_t: int = 16) -> QuadratureGrid:
    """Tensor Gauss grid on the parameter square [-half_width, half_width]^2."""
    edges = np.linspace(-half_width, half_width, panels + 1)
    xs, ws = zip(*(gauss_legendre(order, p, q) for p, q in zip(edges[:-1], edges[1:])))
    x, w = np.concatenate(xs), np.concatenate(ws)
    U, V = np.meshgrid(x, x, indexing="ij")
    u, v = U.ravel(), V.ravel()
    geom = sample(surface, u, v)
    area = np.outer(w, w).ravel() * geom.sqrt_det_g
    rho, grad_rho = _rho_and_gradient(surface, u, v, h=(x[-1] - x[0]) / x.size)
    nodes = Nodes(u=u, v=v, area=area, geom=geom, rho=rho, grad_rho=grad_rho)
    t, wt = _t_rule(a, n_t)
    settings = dict(half_width=float(half_width), panels=panels, order=order, n_t=n_t)
    return QuadratureGrid(surface, "tensor", nodes, t, wt, a, float(half_width), settings)


def _rho_and_gradient(surface, u, v, h):
    if surface.symmetry == "radial":
        r = np.hypot(u, v)
        rs = np.where(r > 0, r, 1.0)
        W = surface.W(r)
        return surface.arclength(r), np.stack([W * u / rs, W * v / rs], axis=-1)
    if surface.extent is None:
        return np.full(u.shape, np.nan), np.zeros(u.shape + (2,))
    d = distance_field(surface)
    gu = (d(u + h, v) - d(u - h, v)) / (2 * h)
    gv = (d(u, v + h) - d(u, v - h)) / (2 * h)
    return d(u, v), np.stack([gu, gv], axis=-1)


def grid_for(fields: Sequence[LayerField], surface: Surface, cfg: LayerConfig,
             order: int = 8, n_theta: int | None = None, n_t: int = 16,
             panels: int = 16) -> QuadratureGrid:
    """Default grid covering the supports of ``fields``."""
    if surface.symmetry == "radial":
        rho_out = max(f.support_annulus(surface)[1] for f in fields)
        breaks = set()
        for f in fields:
            for u, _ in f.terms:
                breaks.update(u.breaks())
                lo, hi = u.rho_support(surface)
                breaks.update(b for b in (lo, hi) if math.isfinite(b))
        radial = all(f.radial for f in fields)
        nth = n_theta if n_theta is not None else (1 if radial else 32)
        return polar_grid(surface, cfg.a, rho_out, sorted(breaks), order=order,
                          n_theta=nth, n_t=n_t)
    half = surface.extent if surface.extent is not None else \
        max(f.param_radius(surface) for f in fields)
    return tensor_grid(surface, cfg.a, half, panels=panels, order=order, n_t=n_t)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class FormValue:
    """Q, Q1, Q2 and the L2 norm squared of one field."""

    Q: float
    Q1: float
    Q2: float
    L2_norm_sq: float
    quadrature_error_estimate: float
    Q1_error: float = 0.0
    Q2_error: float = 0.0
    mass_error: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FormMatrices:
    """Gram matrices of Q1, Q2, Q and the mass for a list of fields."""

    Q1: np.ndarray
    Q2: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    err_Q: np.ndarray
    err_M: np.ndarray
    err_Q1: np.ndarray
    q2_mode: str


def _check_coverage(fields, grid):
    surface = grid.surface
    for f in fields:
        if grid.kind == "polar":
            need = f.support_annulus(surface)[1]
            if need > grid.coverage * (1 + 1e-12):
                raise CoverageError(f"field support reaches rho = {need:.6g} beyond grid "
                                    f"coverage {grid.coverage:.6g}")
        else:
            need = f.param_radius(surface)
            if need > grid.coverage * (1 + 1e-12):
                raise CoverageError(f"field support radius {need:.6g} exceeds the grid box "
                                    f"{grid.coverage:.6g}")


def _layer_arrays(grid: QuadratureGrid):
    s = grid.nodes.geom
    t = grid.t[None, :]
    J = 1.0 - s.H[:, None] * t + s.K[:, None] * t * t
    if np.any(J <= FOLD_TOL):
        raise FoldError(f"layer folds on the quadrature grid: min J = {float(J.min()):.3g}")
    Nu, Nv = s.dnormal
    III = np.empty(s.g.shape)
    III[:, 0, 0] = np.einsum("ni,ni->n", Nu, Nu)
    III[:, 0, 1] = III[:, 1, 0] = np.einsum("ni,ni->n", Nu, Nv)
    III[:, 1, 1] = np.einsum("ni,ni->n", Nv, Nv)
    tt = grid.t[None, :, None, None]
    # p_i . N_j = -b_ij, so G = g - 2 t b + t^2 III
    Gh = s.g[:, None] - 2 * tt * s.b[:, None] + tt * tt * III[:, None]
    det = Gh[..., 0, 0] * Gh[..., 1, 1] - Gh[..., 0, 1] ** 2
    Ginv = np.stack([Gh[..., 1, 1], -Gh[..., 0, 1], Gh[..., 0, 0]], axis=-1) / det[..., None]
    W = grid.nodes.area[:, None] * grid.wt[None, :]
    return J, Ginv, W


def _field_arrays(f: LayerField, grid: QuadratureGrid, cfg: LayerConfig, want_ratio: bool):
    n, m = grid.nodes.u.size, grid.t.size
    F = np.zeros((n, m))
    Ft = np.zeros((n, m))
    DF = np.zeros((n, m, 2))
    Gam = np.zeros((n, m)) if want_ratio else None
    Gam_t = np.zeros((n, m)) if want_ratio else None
    for u, tau in f.terms:
        val, grad = u.evaluate(grid.nodes)
        tv, td = tau(grid.t, cfg)
        F += val[:, None] * tv[None, :]
        Ft += val[:, None] * td[None, :]
        DF += grad[:, None, :] * tv[None, :, None]
        if want_ratio:
            gv, gd = tau.ratio(grid.t, cfg)
            Gam += val[:, None] * gv[None, :]
            Gam_t += val[:, None] * gd[None, :]
    return F, Ft, DF, Gam, Gam_t


def _ratio_available(fields, grid, cfg):
    return all(tau.ratio(grid.t[:1], cfg) is not None for f in fields for _, tau in f.terms)


def _raw_matrices(fields, grid, cfg, q2_mode):
    J, Ginv, W = _layer_arrays(grid)
    use_ratio = q2_mode == "ground_state"
    arrs = [_field_arrays(f, grid, cfg, use_ratio) for f in fields]
    k = len(fields)
    Q1 = np.zeros((k, k))
    Q2 = np.zeros((k, k))
    M = np.zeros((k, k))
    # magnitudes for the roundoff floor
    A1 = np.zeros((k, k))
    A2 = np.zeros((k, k))
    s = grid.nodes.geom
    if use_ratio:
        kap = cfg.kappa
        chi = np.cos(kap * grid.t)[None, :]
        chichi = (-kap * np.cos(kap * grid.t) * np.sin(kap * grid.t))[None, :]
        wdir = W * J * chi**2
        wpot = W * chichi * (s.H[:, None] - 2 * s.K[:, None] * grid.t[None, :])
    WJ = W * J
    for i in range(k):
        Fi, Fti, DFi, Gi, Gti = arrs[i]
        for j in range(i, k):
            Fj, Ftj, DFj, Gj, Gtj = arrs[j]
            e1 = WJ * (Ginv[..., 0] * DFi[..., 0] * DFj[..., 0]
                       + Ginv[..., 1] * (DFi[..., 0] * DFj[..., 1] + DFi[..., 1] * DFj[..., 0])
                       + Ginv[..., 2] * DFi[..., 1] * DFj[..., 1])
            if use_ratio:
                e2 = wdir * Gti * Gtj + wpot * Gi * Gj
            else:
                e2 = WJ * (Fti * Ftj - cfg.kappa_sq * Fi * Fj)
            em = WJ * Fi * Fj
            Q1[i, j] = Q1[j, i] = np.sum(e1)
            Q2[i, j] = Q2[j, i] = np.sum(e2)
            M[i, j] = M[j, i] = np.sum(em)
            A1[i, j] = A1[j, i] = np.sum(np.abs(e1))
            A2[i, j] = A2[j, i] = np.sum(np.abs(e2)) + (
                np.sum(np.abs(WJ * Fti * Ftj)) + cfg.kappa_sq * np.sum(np.abs(em))
                if not use_ratio else 0.0)
    return Q1, Q2, M, A1, A2


def form_matrix(fields: Sequence[LayerField], surface: Surface, cfg: LayerConfig,
                grid: QuadratureGrid | None = None, q2_mode: str = "auto",
                estimate_error: bool = True) -> FormMatrices:
    """Gram matrices Q1[i, j] = Q1(f_i, f_j) etc. with half-resolution error estimates.

    ``q2_mode`` is "ground_state", "direct" or "auto" (ground state whenever
    every transverse factor exposes its ratio to chi).
    """
    fields = list(fields)
    if grid is None:
        grid = grid_for(fields, surface, cfg)
    if grid.surface is not surface and grid.surface != surface:
        raise ValueError("grid was built for a different surface")
    if abs(grid.a - cfg.a) > 1e-15 * cfg.a:
        raise ValueError("grid was built for a different layer width")
    _check_coverage(fields, grid)
    if q2_mode == "auto":
        q2_mode = "ground_state" if _ratio_available(fields, grid, cfg) else "direct"
    if q2_mode not in ("ground_state", "direct"):
        raise ValueError(f"unknown q2_mode {q2_mode!r}")
    Q1, Q2, M, A1, A2 = _raw_matrices(fields, grid, cfg, q2_mode)
    eps = np.finfo(float).eps
    floor_Q = 64 * eps * (A1 + A2)
    floor_M = 64 * eps * np.abs(M)
    if estimate_error:
        c1, c2, cm, _, _ = _raw_matrices(fields, grid.coarse(), cfg, q2_mode)
        err_Q = np.abs((Q1 + Q2) - (c1 + c2)) + floor_Q
        err_M = np.abs(M - cm) + floor_M
        err_Q1 = np.abs(Q1 - c1) + 64 * eps * A1
    else:
        err_Q, err_M, err_Q1 = floor_Q, floor_M, 64 * eps * A1
    return FormMatrices(Q1=Q1, Q2=Q2, Q=Q1 + Q2, M=M, err_Q=err_Q, err_M=err_M,
                        err_Q1=err_Q1, q2_mode=q2_mode)


def eval_forms(field: LayerField, surface: Surface, cfg: LayerConfig,
               grid: QuadratureGrid | None = None, q2_mode: str = "auto") -> FormValue:
    """Q(f, f), Q1(f, f), Q2(f, f) and ||f||^2 on the layer.

    Raises
    ------
    CoverageError
        Support of ``field`` leaves the grid.
    FoldError
        J <= 1e-8 somewhere on the grid.
    """
    m = form_matrix([field], surface, cfg, grid, q2_mode)
    Q1, Q2 = float(m.Q1[0, 0]), float(m.Q2[0, 0])
    return FormValue(Q=Q1 + Q2, Q1=Q1, Q2=Q2, L2_norm_sq=float(m.M[0, 0]),
                     quadrature_error_estimate=float(m.err_Q[0, 0]),
                     Q1_error=float(m.err_Q1[0, 0]),
                     mass_error=float(m.err_M[0, 0]))


def full_form(field: LayerField, surface: Surface, cfg: LayerConfig,
              grid: QuadratureGrid | None = None) -> float:
    """Q(f, f) = int G^{ab} d_a f d_b f dOmega - kappa^2 int f^2 dOmega, unsplit.

    Uses the full 3 x 3 Fermi metric from :func:`layer_metric_at`, so it is
    an independent check on the Q1 + Q2 decomposition.
    """
    if grid is None:
        grid = grid_for([field], surface, cfg)
    _check_coverage([field], grid)
    F, Ft, DF, _, _ = _field_arrays(field, grid, cfg, False)
    s = grid.nodes.geom
    total = 0.0
    for k, t in enumerate(grid.t):
        lm = layer_metric_at(s, t, cfg)
        Ginv = np.linalg.inv(lm.G)
        d = np.concatenate([DF[:, k, :], Ft[:, k, None]], axis=-1)
        dens = np.einsum("ni,nij,nj->n", d, Ginv, d) - cfg.kappa_sq * F[:, k] ** 2
        total += float(np.sum(grid.nodes.area * grid.wt[k] * lm.J * dens))
    return total


def rayleigh_quotient(field: LayerField, surface: Surface, cfg: LayerConfig,
                      grid: QuadratureGrid | None = None) -> float:
    """int |grad f|^2 / int f^2 = kappa^2 + Q / ||f||^2.

    Computed as the sum on the right so that the sign of the (possibly tiny)
    gap to kappa^2 survives rounding.
    """
    fv = eval_forms(field, surface, cfg, grid)
    if not fv.L2_norm_sq > 0:
        raise ZeroNormError("field has zero L2 norm on the layer")
    return cfg.kappa_sq + fv.Q / fv.L2_norm_sq


# ---------------------------------------------------------------------------
# Transverse integrals
# ---------------------------------------------------------------------------


@dataclass
class TransverseIntegrals:
    chi_norm_sq: float
    chi_prime_identity_residual: float
    sigma: float
    C1_quadrature: float
    m2: float
    t2_chi_sq: float

    def to_dict(self):
        return dict(self.__dict__)


def transverse_integrals(cfg: LayerConfig, n: int = 64) -> TransverseIntegrals:
    """One-dimensional integrals of chi = cos(kappa t) and chi_1 = t chi.

    sigma = -int chi' chi t,  C1 = int (chi' chi_1' t - kappa^2 chi chi_1 t),
    m2 = int t^2 (chi'^2 - kappa^2 chi^2),  t2_chi_sq = int t^2 chi^2.
    """
    t, w = gauss_legendre(n, -cfg.a, cfg.a)
    k = cfg.kappa
    chi, dchi = np.cos(k * t), -k * np.sin(k * t)
    chi1, dchi1 = t * chi, chi + t * dchi
    norm = np.sum(w * chi**2)
    resid = np.sum(w * (dchi**2 - k * k * chi**2))
    return TransverseIntegrals(
        chi_norm_sq=float(norm),
        chi_prime_identity_residual=float(resid),
        sigma=float(-np.sum(w * dchi * chi * t)),
        C1_quadrature=float(np.sum(w * (dchi * dchi1 * t - k * k * chi * chi1 * t))),
        m2=float(np.sum(w * t * t * (dchi**2 - k * k * chi**2))),
        t2_chi_sq=float(np.sum(w * t * t * chi**2)),
    )
