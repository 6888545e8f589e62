"""Fermi-coordinate metric of the layer Omega = Sigma x [-a, a].

A point of the layer is p(x) + t N(x).  In these coordinates

    G_ij = g_ij + t (p_i . N_j + p_j . N_i) + t^2 N_i . N_j,   G_i3 = 0,  G_33 = 1,

and sqrt(det G) = J sqrt(det g) with J = 1 - H t + K t^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FoldError, SandwichViolation
from .surfaces import GeomSample, Surface, sample

FOLD_TOL = 1e-8


@dataclass(frozen=True)
class LayerConfig:
    """Half-width ``a`` of the layer and the transverse threshold kappa = pi / 2a."""

    a: float

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError(f"layer half-width must be positive, got {self.a!r}")

    @property
    def kappa(self) -> float:
        return math.pi / (2 * self.a)

    @property
    def kappa_sq(self) -> float:
        return math.pi**2 / (4 * self.a**2)


@dataclass
class LayerMetric:
    G: np.ndarray
    G_horiz_inv: np.ndarray
    J: np.ndarray
    dOmega_density: np.ndarray


def _dot(x, y):
    return np.einsum("...i,...i", x, y)


def layer_metric_at(s: GeomSample, t, cfg: LayerConfig) -> LayerMetric:
    """Metric of the layer at the sampled surface point(s) and height(s) ``t``.

    Raises
    ------
    FoldError
        If J <= 1e-8 at any evaluated point.
    ValueError
        If |t| > a.
    """
    t = np.asarray(t, float)
    if np.any(np.abs(t) > cfg.a * (1 + 1e-12)):
        raise ValueError("t outside [-a, a]")
    tt = np.broadcast_to(t, np.broadcast_shapes(s.K.shape, t.shape))
    G = _fermi_metric(s, tt)
    J = 1.0 - s.H * tt + s.K * tt * tt
    if np.any(J <= FOLD_TOL):
        raise FoldError(f"layer folds: min J = {float(np.min(J)):.3g} <= {FOLD_TOL:g}")
    h = G[..., :2, :2]
    det = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] ** 2
    inv = np.empty_like(h)
    inv[..., 0, 0] = h[..., 1, 1] / det
    inv[..., 1, 1] = h[..., 0, 0] / det
    inv[..., 0, 1] = inv[..., 1, 0] = -h[..., 0, 1] / det
    return LayerMetric(G=G, G_horiz_inv=inv, J=J, dOmega_density=J * s.sqrt_det_g)


def relative_eigenvalues(s: GeomSample, G: np.ndarray) -> np.ndarray:
    """Eigenvalues of g^{-1/2} G_horiz g^{-1/2}, ascending on the last axis."""
    w, V = np.linalg.eigh(s.g)
    root_inv = V @ (V.swapaxes(-1, -2) / np.sqrt(w)[..., :, None])
    shape = G.shape[:-2]
    M = np.broadcast_to(root_inv, shape + (2, 2))
    rel = M @ G[..., :2, :2] @ M
    return np.linalg.eigvalsh(0.5 * (rel + rel.swapaxes(-1, -2)))


@dataclass
class Comparison:
    epsilon: np.ndarray
    eig_min: np.ndarray
    eig_max: np.ndarray
    informative: np.ndarray


def comparison_epsilon(s: GeomSample, cfg: LayerConfig, n_t: int = 33) -> Comparison:
    """Pointwise sandwich width eps = 2a||B|| + a^2 ||B||^2 and the checked bounds.

    The relative eigenvalues are scanned over ``n_t`` equispaced heights
    (endpoints included).

    Raises
    ------
    SandwichViolation
        If a relative eigenvalue leaves [1 - eps, 1 + eps] where eps < 1.
    """
    a = cfg.a
    eps = 2 * a * s.normB + (a * s.normB) ** 2
    ts = np.linspace(-a, a, n_t)
    lo = np.full(eps.shape, np.inf)
    hi = np.full(eps.shape, -np.inf)
    for t in ts:
        G = _fermi_metric(s, t)
        ev = relative_eigenvalues(s, G)
        lo = np.minimum(lo, ev[..., 0])
        hi = np.maximum(hi, ev[..., -1])
    informative = eps < 1
    slack = 1e-12 * (1 + eps)
    bad = informative & ((lo < 1 - eps - slack) | (hi > 1 + eps + slack))
    if np.any(bad):
        raise SandwichViolation(f"{int(np.count_nonzero(bad))} point(s) violate the metric sandwich")
    return Comparison(epsilon=eps, eig_min=lo, eig_max=hi, informative=informative)


def _fermi_metric(s: GeomSample, t):
    """G at heights t (broadcast against the sample); no fold check."""
    pu, pv = s.tangents
    Nu, Nv = s.dnormal
    t = np.asarray(t, float)
    G = np.zeros(np.broadcast_shapes(s.K.shape, t.shape) + (3, 3))
    pairs = ((pu, Nu), (pv, Nv))
    for i in range(2):
        for j in range(i, 2):
            (p_i, N_i), (p_j, N_j) = pairs[i], pairs[j]
            val = _dot(p_i, p_j) + t * (_dot(p_i, N_j) + _dot(p_j, N_i)) + t * t * _dot(N_i, N_j)
            G[..., i, j] = G[..., j, i] = val
    G[..., 2, 2] = 1.0
    return G


@dataclass
class VolumeSandwich:
    lower: np.ndarray
    upper: np.ndarray
    J_min: np.ndarray
    J_max: np.ndarray
    vacuous: np.ndarray
    holds: np.ndarray


def volume_sandwich(s: GeomSample, cfg: LayerConfig, n_t: int = 65) -> VolumeSandwich:
    """Bounds (1 - eps)^2 <= J <= (1 + eps)^2, checked on a t grid.

    Where eps >= 1 the bounds are reported but flagged vacuous and
    ``holds`` is True trivially.
    """
    a = cfg.a
    eps = 2 * a * s.normB + (a * s.normB) ** 2
    ts = np.linspace(-a, a, n_t)
    J = 1.0 - s.H[..., None] * ts + s.K[..., None] * ts**2
    jmin, jmax = J.min(axis=-1), J.max(axis=-1)
    lower, upper = (1 - eps) ** 2, (1 + eps) ** 2
    vacuous = eps >= 1
    tol = 1e-12
    holds = vacuous | ((jmin >= lower - tol) & (jmax <= upper + tol))
    return VolumeSandwich(lower=lower, upper=upper, J_min=jmin, J_max=jmax,
                          vacuous=vacuous, holds=holds)


def dump_ray_csv(surface: Surface, cfg: LayerConfig, path, radius: float,
                 n: int = 50, n_t: int = 9, direction: float = 0.0):
    """Write G along the parameter ray at angle ``direction`` for several heights."""
    r = np.linspace(0.0, radius, n)
    u, v = r * math.cos(direction), r * math.sin(direction)
    s = sample(surface, u, v)
    rows = []
    for t in np.linspace(-cfg.a, cfg.a, n_t):
        G = _fermi_metric(s, t)
        J = 1.0 - s.H * t + s.K * t * t
        for k in range(n):
            rows.append([r[k], t, G[k, 0, 0], G[k, 0, 1], G[k, 1, 1], J[k]])
    np.savetxt(path, np.array(rows), delimiter=",", header="r,t,G11,G12,G22,J",
               comments="", fmt="%.17g")
