"""Finite-volume discretisation of the Dirichlet form on truncated layers.

Two discretisations share the eigensolver:

* ``axisym_reduce``: radial surfaces, angular mode m, vertex grid in the
  geodesic radius rho times interior t nodes.  With principal curvatures
  k_m (meridian) and k_p (parallel) and r = r(rho),

      int |grad f|^2 dOmega / 2 pi
          = int [ f_rho^2 r (1 - t k_p) / (1 - t k_m)
                  + m^2 f^2 (1 - t k_m) / (r (1 - t k_p))
                  + f_t^2 r J ] drho dt,          J = (1 - t k_m)(1 - t k_p).

* ``assemble``: full 3-D grid (u, v) x t on a parameter square; horizontal
  energy from the four corner gradients of every cell (the average of the
  two P1 triangulations), lumped mass.

Both are second order.  The lateral boundary and t = +-a are Dirichlet, so
every truncated eigenvalue is an upper bound for the bottom of the
spectrum, and nested radial meshes make lambda_min(R) exactly nonincreasing.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sla

from .errors import (
    ConvergenceError, DiscretizationInconsistency, FoldError, ResourceLimitError,
)
from .layer import FOLD_TOL, LayerConfig
from .surfaces import Surface, geodesic_radius, sample

log = logging.getLogger(__name__)

MAX_UNKNOWNS = 600_000


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialMesh:
    """Vertex grid 0 = rho_0 < ... < rho_N in geodesic radius.

    Spacing ``h`` up to ``uniform_until``, then growing by ``growth`` per
    cell, capped at ``max_spacing``.  The sequence does not depend on R; it
    is cut at the first node >= R, so meshes for different R are nested.
    """

    R: float
    h: float
    uniform_until: float = 5.0
    growth: float = 1.02
    max_spacing: float = 5.0

    @property
    def nodes(self) -> np.ndarray:
        return _mesh_nodes(self.R, self.h, self.uniform_until, self.growth, self.max_spacing)

    @property
    def radius(self) -> float:
        """Actual truncation radius (last node)."""
        return float(self.nodes[-1])

    @classmethod
    def uniform(cls, R: float, h: float) -> "RadialMesh":
        n = max(1, round(R / h))
        return cls(R=R, h=R / n, uniform_until=math.inf)


def _mesh_nodes(R, h, until, q, hmax):
    x = [0.0]
    step = h
    while x[-1] < R * (1 - 1e-12):
        if x[-1] >= until - 1e-12 * max(1.0, until):
            step = min(step * q, hmax)
        x.append(x[-1] + step)
    return np.array(x)


@dataclass(frozen=True)
class TruncatedLayer:
    """Truncation of the layer to the geodesic ball of radius R.

    ``mesh`` is a RadialMesh (axisymmetric runs) or ``None`` for 3-D runs, in
    which case ``n_uv`` points per side cover the parameter square.
    ``n_t`` counts interior t nodes, so dt = 2a / (n_t + 1).
    """

    surface_tag: str
    R: float
    n_t: int = 16
    mesh: RadialMesh | None = None
    n_uv: int | None = None
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.n_t < 7:
            raise ValueError("need at least 8 t intervals across the fiber (n_t >= 7)")


def discrete_threshold(a: float, n_t: int) -> float:
    """Lowest eigenvalue of the 3-point Dirichlet Laplacian on [-a, a] with n_t interior nodes."""
    dt = 2 * a / (n_t + 1)
    return (4 / dt**2) * math.sin(math.pi * dt / (4 * a)) ** 2


# ---------------------------------------------------------------------------
# Axisymmetric reduction
# ---------------------------------------------------------------------------


@dataclass
class ReducedProblem:
    A: sparse.csr_matrix
    M: sparse.csr_matrix
    rho: np.ndarray          # radial coordinate of each unknown
    t: np.ndarray            # height of each unknown
    shape: tuple             # (n_rho_unknowns, n_t)
    m: int
    kappa_h_sq: float
    truncation_radius: float


def _axis_geometry(surface, x):
    r = surface.r_of_rho(x)
    km, kp = surface.principal(r)
    return r, km, kp


def axisym_reduce(surface: Surface, cfg: LayerConfig, trunc: TruncatedLayer, m: int = 0
                  ) -> ReducedProblem:
    """Two-dimensional problem in (rho, t) for angular mode ``m``.

    Raises
    ------
    ValueError
        For non-radial surfaces or m < 0.
    FoldError
        If J <= 1e-8 at a node.
    """
    if surface.symmetry != "radial":
        raise ValueError("axisymmetric reduction needs a radially symmetric surface")
    if m < 0:
        raise ValueError("angular mode must be >= 0")
    mesh = trunc.mesh if trunc.mesh is not None else RadialMesh(trunc.R, h=0.1 * surface.scale)
    rho = mesh.nodes
    hs = np.diff(rho)
    N = rho.size - 1                    # unknown nodes 0..N-1 (node N is the lateral boundary)
    nt = trunc.n_t
    dt = 2 * cfg.a / (nt + 1)
    t = -cfg.a + dt * np.arange(1, nt + 1)
    t_half = -cfg.a + dt * (np.arange(nt + 1) + 0.5)

    # dual cells: right half of node i is [rho_i, rho_i + h_i/2], left half of node i+1 the rest
    right = rho[:-1] + hs / 4
    left = rho[1:] - hs / 4
    r_right, _, _ = _axis_geometry(surface, right)
    r_left, _, _ = _axis_geometry(surface, left)
    area = np.zeros(N)
    area += r_right * hs / 2
    area[1:] += r_left[:-1] * hs[:-1] / 2
    inv_r = np.zeros(N)
    inv_r[1:] += hs[1:N] / 2 / np.maximum(r_right[1:], 1e-300)
    inv_r[1:] += hs[:N - 1] / 2 / np.maximum(r_left[:-1], 1e-300)

    r_node, km, kp = _axis_geometry(surface, rho[:-1])
    J = (1 - np.outer(km, t)) * (1 - np.outer(kp, t))
    J_half = (1 - np.outer(km, t_half)) * (1 - np.outer(kp, t_half))
    if np.any(J <= FOLD_TOL) or np.any(J_half <= FOLD_TOL):
        raise FoldError("layer folds on the solver grid")

    mid = rho[:-1] + hs / 2
    r_mid, km_mid, kp_mid = _axis_geometry(surface, mid)
    # rho-edge i connects nodes i and i+1, i = 0..N-1 (edge N-1 touches the boundary)
    c_rho = (r_mid[:, None] * (1 - np.outer(kp_mid, t)) / (1 - np.outer(km_mid, t))
             / hs[:, None] * dt)
    w_t = area[:, None] * J_half / dt   # t-edges k = 0..nt between levels k-1 and k

    diag = np.zeros((N, nt))
    diag += w_t[:, :-1] + w_t[:, 1:]
    diag += c_rho
    diag[1:] += c_rho[:-1]
    if m > 0:
        diag += m * m * (inv_r[:, None] * (1 - np.outer(km, t)) / (1 - np.outer(kp, t))) * dt
    mass = area[:, None] * J * dt

    idx = np.arange(N * nt).reshape(N, nt)
    rows = [idx.ravel(), idx[:, :-1].ravel(), idx[:-1].ravel()]
    cols = [idx.ravel(), idx[:, 1:].ravel(), idx[1:].ravel()]
    vals = [diag.ravel(), -w_t[:, 1:-1].ravel(), -c_rho[:-1].ravel()]
    upper = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(N * nt, N * nt)).tocsr()
    A = upper + sparse.triu(upper, 1).T
    M = sparse.diags(mass.ravel()).tocsr()
    keep = np.ones(N, bool)
    if m > 0:
        keep[0] = False                 # f vanishes on the axis for m >= 1
    sel = idx[keep].ravel()
    A = A[sel][:, sel].tocsr()
    M = M[sel][:, sel].tocsr()
    RHO = np.broadcast_to(rho[:-1, None], (N, nt))[keep].ravel()
    T = np.broadcast_to(t[None, :], (N, nt))[keep].ravel()
    return ReducedProblem(A=A, M=M, rho=RHO, t=T, shape=(int(keep.sum()), nt), m=m,
                          kappa_h_sq=discrete_threshold(cfg.a, nt),
                          truncation_radius=float(rho[-1]))


# ---------------------------------------------------------------------------
# Full 3-D assembly
# ---------------------------------------------------------------------------


def _corner_operators(hx, hy):
    """Gradient rows at the four cell corners, local order (00, 10, 01, 11)."""
    Du = {0: np.array([-1.0, 1.0, 0.0, 0.0]) / hx, 1: np.array([0.0, 0.0, -1.0, 1.0]) / hx}
    Dv = {0: np.array([-1.0, 0.0, 1.0, 0.0]) / hy, 1: np.array([0.0, -1.0, 0.0, 1.0]) / hy}
    ops = []
    for a in (0, 1):
        for b in (0, 1):
            ops.append((Du[b], Dv[a]))
    return ops


def assemble(surface: Surface, cfg: LayerConfig, trunc: TruncatedLayer,
             half_width: float | None = None, max_unknowns: int = MAX_UNKNOWNS):
    """Stiffness and mass matrices of the 3-D discretisation.

    The unknowns are grid nodes with geodesic radius < R strictly inside the
    parameter square; all other nodes carry the Dirichlet value 0.

    Returns
    -------
    A, M : scipy.sparse.csr_matrix
    info : dict with node coordinates ``u``, ``v``, ``t``, ``rho`` and ``kappa_h_sq``.
    """
    n = trunc.n_uv or 101
    nt = trunc.n_t
    est = n * n * nt
    if est > max_unknowns * 2:
        raise ResourceLimitError(f"3-D grid {n}x{n}x{nt} exceeds the unknown budget {max_unknowns}")
    L = half_width if half_width is not None else 1.05 * _param_radius(surface, trunc.R)
    x = np.linspace(-L, L, n)
    hx = hy = x[1] - x[0]
    dt = 2 * cfg.a / (nt + 1)
    t = -cfg.a + dt * np.arange(1, nt + 1)
    t_half = -cfg.a + dt * (np.arange(nt + 1) + 0.5)

    U, V = np.meshgrid(x, x, indexing="ij")
    rho_nodes = geodesic_radius(surface, U, V)
    inside = rho_nodes < trunc.R
    inside[[0, -1], :] = False
    inside[:, [0, -1]] = False
    n_unknown = int(inside.sum()) * nt
    if n_unknown > max_unknowns:
        raise ResourceLimitError(f"{n_unknown} unknowns exceed the budget {max_unknowns}")

    node = sample(surface, U, V)
    cu = 0.5 * (x[:-1] + x[1:])
    CU, CV = np.meshgrid(cu, cu, indexing="ij")
    cell = sample(surface, CU, CV)
    Nu, Nv = cell.dnormal
    III = np.empty(cell.g.shape)
    III[..., 0, 0] = np.einsum("...i,...i", Nu, Nu)
    III[..., 0, 1] = III[..., 1, 0] = np.einsum("...i,...i", Nu, Nv)
    III[..., 1, 1] = np.einsum("...i,...i", Nv, Nv)

    gid = np.arange(n * n * nt).reshape(n, n, nt)
    ops = _corner_operators(hx, hy)
    rows, cols, vals = [], [], []
    quarter = hx * hy / 4 * dt
    for k, tk in enumerate(t):
        Gh = cell.g - 2 * tk * cell.b + tk * tk * III
        J = 1 - cell.H * tk + cell.K * tk * tk
        if np.any(J <= FOLD_TOL):
            raise FoldError("layer folds on the solver grid")
        det = Gh[..., 0, 0] * Gh[..., 1, 1] - Gh[..., 0, 1] ** 2
        s = J * cell.sqrt_det_g / det
        K00, K01, K11 = Gh[..., 1, 1] * s, -Gh[..., 0, 1] * s, Gh[..., 0, 0] * s
        E = np.zeros(K00.shape + (4, 4))
        for du, dv in ops:
            E += quarter * (K00[..., None, None] * np.outer(du, du)
                            + K01[..., None, None] * (np.outer(du, dv) + np.outer(dv, du))
                            + K11[..., None, None] * np.outer(dv, dv))
        dof = np.stack([gid[:-1, :-1, k], gid[1:, :-1, k], gid[:-1, 1:, k], gid[1:, 1:, k]], axis=-1)
        for p in range(4):
            for q in range(4):
                rows.append(dof[..., p].ravel())
                cols.append(dof[..., q].ravel())
                vals.append(E[..., p, q].ravel())

    area = hx * hy * node.sqrt_det_g
    Jn = 1 - node.H[..., None] * t + node.K[..., None] * t * t
    Jh = 1 - node.H[..., None] * t_half + node.K[..., None] * t_half * t_half
    if np.any(Jn <= FOLD_TOL) or np.any(Jh <= FOLD_TOL):
        raise FoldError("layer folds on the solver grid")
    wt = area[..., None] * Jh / dt
    diag = wt[..., :-1] + wt[..., 1:]
    rows += [gid.ravel(), gid[..., :-1].ravel(), gid[..., 1:].ravel()]
    cols += [gid.ravel(), gid[..., 1:].ravel(), gid[..., :-1].ravel()]
    vals += [diag.ravel(), -wt[..., 1:-1].ravel(), -wt[..., 1:-1].ravel()]
    size = n * n * nt
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size)).tocsr()
    M = sparse.diags((area[..., None] * Jn * dt).ravel()).tocsr()
    sel = gid[inside].ravel()
    A = A[sel][:, sel].tocsr()
    A = 0.5 * (A + A.T)
    M = M[sel][:, sel].tocsr()
    info = dict(
        u=np.broadcast_to(U[..., None], (n, n, nt))[inside].ravel(),
        v=np.broadcast_to(V[..., None], (n, n, nt))[inside].ravel(),
        t=np.broadcast_to(t, (n, n, nt))[inside].ravel(),
        rho=np.broadcast_to(rho_nodes[..., None], (n, n, nt))[inside].ravel(),
        kappa_h_sq=discrete_threshold(cfg.a, nt), spacing=hx, half_width=L,
    )
    return A, M, info


def _param_radius(surface, R):
    if surface.symmetry == "radial":
        return float(surface.r_of_rho(np.array([R]))[0])
    if surface.extent is None:
        return R
    return surface.extent / 1.05


# ---------------------------------------------------------------------------
# Eigensolver
# ---------------------------------------------------------------------------


@dataclass
class SpectrumResult:
    lambda_min: float
    next_eigs: list
    eigenvector: np.ndarray = field(repr=False)
    residual_norm: float
    localization_fraction: float
    eigenvalues: np.ndarray = field(default=None, repr=False)
    residuals: np.ndarray = field(default=None, repr=False)
    kappa_h_sq: float | None = None
    truncation_radius: float | None = None
    n_unknowns: int = 0
    method: str = ""
    mode: int | None = None
    coords: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return dict(lambda_min=self.lambda_min, next_eigs=list(self.next_eigs),
                    residual_norm=self.residual_norm,
                    localization_fraction=self.localization_fraction,
                    kappa_h_sq=self.kappa_h_sq, truncation_radius=self.truncation_radius,
                    n_unknowns=self.n_unknowns, method=self.method, mode=self.mode)


def _residuals(A, M, w, X):
    R = A @ X - (M @ X) * w[None, :]
    mdiag = M.diagonal()
    num = np.sqrt(np.sum(R * R / mdiag[:, None], axis=0))
    den = np.sqrt(np.sum(X * (M @ X), axis=0))
    return num / den / np.maximum(np.abs(w), 1.0)


def count_below(A, M, sigma: float) -> int:
    """Number of eigenvalues of (A, M) below ``sigma`` (Sylvester inertia).

    Uses a sparse LU with symmetric ordering and diagonal pivoting, so the
    pivots are those of an LDL^T factorisation.
    """
    S = (A - sigma * M).tocsc()
    lu = sla.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    if not (np.all(lu.perm_r == lu.perm_c)):
        raise ConvergenceError("inertia count needs diagonal pivoting", best_residual=math.inf)
    return int(np.count_nonzero(lu.U.diagonal() < 0))


def lower_shift(A, M, rel: float = 1e-4) -> float:
    """A shift sigma < lambda_min with lambda_min - sigma <= rel * lambda_min.

    Inertia bisection.  A few inverse-iteration steps (A is positive
    definite under Dirichlet conditions) give a Rayleigh-quotient upper
    bound, so the bracket starts narrow.
    """
    hi = float(np.min(A.diagonal() / M.diagonal()))
    try:
        lu = sla.splu(A.tocsc())
        x = np.ones(A.shape[0])
        for _ in range(6):
            x = lu.solve(M @ x)
            x /= np.linalg.norm(x)
        hi = min(hi, float(x @ (A @ x)) / float(x @ (M @ x)))
    except RuntimeError:
        pass
    gap = 8 * rel
    lo = hi * (1 - gap)
    while count_below(A, M, lo) > 0:
        hi, gap = lo, min(2 * gap, 0.5)
        lo = hi * (1 - gap)
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if count_below(A, M, mid) == 0:
            lo = mid
        else:
            hi = mid
    return lo


def smallest_eigs(A, M, k: int = 4, tol: float = 1e-8, method: str = "shift-invert",
                  maxiter: int = 2000, seed: int = 0):
    """k lowest eigenpairs of A x = lambda M x (M diagonal positive).

    ``method="shift-invert"`` (default) runs ARPACK on (A - sigma M)^{-1} M
    with sigma placed just below lambda_min by inertia bisection, then
    confirms by an inertia count that no eigenvalue was skipped.
    ``method="lobpcg"`` runs blocked LOBPCG with a Jacobi preconditioner
    (block size max(k, 4)).  Eigenvectors are M-normalised.  The residual is
    ||A x - lambda M x||_{M^-1} / ||x||_M / max(lambda, 1).

    Raises
    ------
    ConvergenceError
        If a residual exceeds ``tol``; carries the best residual.
    """
    n = A.shape[0]
    if k < 1 or tol <= 0:
        raise ValueError("need k >= 1 and tol > 0")
    k = min(k, n - 1) if n > 1 else 1
    if method == "shift-invert":
        if n <= 64:
            import scipy.linalg as la
            w, X = la.eigh(A.toarray(), M.toarray())
            w, X = w[:k], X[:, :k]
        else:
            sigma = lower_shift(A, M, rel=1e-2)
            w, X = sla.eigsh(A.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM",
                             tol=tol * 1e-3, v0=np.random.default_rng(seed).standard_normal(n))
            if count_below(A, M, float(np.min(w)) * (1 - 1e-10)) != 0:
                raise ConvergenceError("shift-invert skipped the lowest eigenvalue",
                                       best_residual=math.inf)
    elif method == "lobpcg":
        rng = np.random.default_rng(seed)
        bs = max(k, 4)
        X0 = rng.standard_normal((n, bs))
        P = sparse.diags(1.0 / A.diagonal())
        with warnings.catch_warnings():
            # convergence is judged by our own residual check below
            warnings.simplefilter("ignore", UserWarning)
            w, X = sla.lobpcg(A, X0, B=M, M=P, tol=tol * 1e-2, maxiter=maxiter, largest=False)
        w, X = w[:k], X[:, :k]
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(w)
    w, X = w[order], X[:, order]
    X = X / np.sqrt(np.sum(X * (M @ X), axis=0))[None, :]
    X = X * np.sign(X[np.argmax(np.abs(X[:, 0])), :] + 1e-300)[None, :]
    res = _residuals(A, M, w, X)
    if np.any(res > tol):
        raise ConvergenceError(f"{method} residual {res.max():.3g} > tol {tol:g}",
                               best_residual=float(res.max()))
    return w, X, res


def _result(prob_rho, w, X, res, M, R_trunc, method, kh2, mode, coords):
    mass = M.diagonal() * X[:, 0] ** 2
    loc = float(mass[prob_rho < R_trunc / 2].sum() / mass.sum())
    return SpectrumResult(
        lambda_min=float(w[0]), next_eigs=[float(x) for x in w[1:]], eigenvector=X[:, 0],
        residual_norm=float(res[0]), localization_fraction=loc, eigenvalues=w, residuals=res,
        kappa_h_sq=kh2, truncation_radius=R_trunc, n_unknowns=int(M.shape[0]),
        method=method, mode=mode, coords=coords,
    )


def solve(surface: Surface, cfg: LayerConfig, trunc: TruncatedLayer, k: int = 2,
          m: int | None = 0, tol: float = 1e-8, method: str = "shift-invert") -> SpectrumResult:
    """Lowest eigenvalues on a truncated layer.

    Radial surfaces use the axisymmetric reduction for mode ``m``
    (``m=None`` forces the 3-D assembly); others use the 3-D assembly.
    """
    if surface.symmetry == "radial" and m is not None and trunc.mesh is not None:
        prob = axisym_reduce(surface, cfg, trunc, m)
        w, X, res = smallest_eigs(prob.A, prob.M, k, tol, method)
        return _result(prob.rho, w, X, res, prob.M, prob.truncation_radius, method,
                       prob.kappa_h_sq, m, dict(rho=prob.rho, t=prob.t))
    A, M, info = assemble(surface, cfg, trunc)
    w, X, res = smallest_eigs(A, M, k, tol, method)
    return _result(info["rho"], w, X, res, M, trunc.R, method, info["kappa_h_sq"], None,
                   dict(rho=info["rho"], t=info["t"], u=info["u"], v=info["v"]))


def eigs_by_mode(surface, cfg, trunc, modes=(0, 1, 2), k=1, tol=1e-8):
    """Lowest eigenvalue per angular mode."""
    return {m: solve(surface, cfg, trunc, k=k, m=m, tol=tol) for m in modes}


# ---------------------------------------------------------------------------
# Truncation study
# ---------------------------------------------------------------------------


@dataclass
class TruncationStudy:
    results: list
    radii: list
    lambda_extrapolated: float
    kappa_sq: float
    kappa_h_sq: float
    margin_discrete: float
    margin_continuum: float
    tolerance: float
    tolerance_parts: dict
    below_threshold: bool
    monotone: bool
    fit: dict

    def to_dict(self):
        return dict(radii=list(self.radii), lambdas=[r.lambda_min for r in self.results],
                    localization=[r.localization_fraction for r in self.results],
                    lambda_extrapolated=self.lambda_extrapolated, kappa_sq=self.kappa_sq,
                    kappa_h_sq=self.kappa_h_sq, margin_discrete=self.margin_discrete,
                    margin_continuum=self.margin_continuum, tolerance=self.tolerance,
                    tolerance_parts=dict(self.tolerance_parts),
                    below_threshold=self.below_threshold, monotone=self.monotone,
                    fit=dict(self.fit))


def truncation_study(surface: Surface, cfg: LayerConfig, radii, h: float | None = None,
                     n_t: int = 16, tol: float = 1e-8, refine_check: bool = True,
                     mesh_kw: dict | None = None, uniform: bool = False) -> TruncationStudy:
    """lambda_min on nested truncations, extrapolated as lambda_inf + c / R^2.

    The margin is measured against the threshold of the same t
    discretisation, kappa_h^2, which the discrete far field approaches.
    The combined tolerance adds the solver residual, the spread between the
    extrapolated and last value and (``refine_check``) the change of the
    margin when both spacings are halved.

    Raises
    ------
    DiscretizationInconsistency
        If lambda_min increases with R beyond the solver tolerance.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 3 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("need at least three increasing radii")
    h = 0.1 * surface.scale if h is None else h
    mesh_kw = dict(mesh_kw or {})

    def mesh(R, hh):
        return RadialMesh.uniform(R, hh) if uniform else RadialMesh(R, hh, **mesh_kw)

    results = []
    for R in radii:
        tr = TruncatedLayer(surface.tag, R, n_t=n_t, mesh=mesh(R, h))
        results.append(solve(surface, cfg, tr, k=2, m=0, tol=tol))
    lam = np.array([r.lambda_min for r in results])
    Rt = np.array([r.truncation_radius for r in results])
    steps = np.diff(lam)
    slack = tol * np.maximum(np.abs(lam[1:]), 1.0) * 10
    monotone = bool(np.all(steps <= slack))
    if not monotone:
        raise DiscretizationInconsistency(
            f"lambda_min increases with R: {lam.tolist()} at R = {Rt.tolist()}")
    X = np.column_stack([np.ones_like(Rt), 1 / Rt**2])
    coef, *_ = np.linalg.lstsq(X, lam, rcond=None)
    lam_inf = float(coef[0])
    kh2 = results[0].kappa_h_sq
    parts = dict(solver=float(max(r.residual_norm for r in results) * max(lam.max(), 1.0)),
                 extrapolation=float(abs(lam_inf - lam[-1])))
    if refine_check:
        tr = TruncatedLayer(surface.tag, radii[-1], n_t=2 * n_t + 1, mesh=mesh(radii[-1], h / 2))
        fine = solve(surface, cfg, tr, k=1, m=0, tol=tol)
        parts["discretization"] = float(abs((fine.kappa_h_sq - fine.lambda_min)
                                            - (kh2 - lam[-1])))
        parts["refined_margin"] = float(fine.kappa_h_sq - fine.lambda_min)
    tol_total = parts["solver"] + parts["extrapolation"] + parts.get("discretization", 0.0)
    margin = kh2 - lam_inf
    return TruncationStudy(
        results=results, radii=Rt.tolist(), lambda_extrapolated=lam_inf,
        kappa_sq=cfg.kappa_sq, kappa_h_sq=kh2, margin_discrete=float(margin),
        margin_continuum=float(cfg.kappa_sq - lam_inf), tolerance=float(tol_total),
        tolerance_parts=parts, below_threshold=bool(margin > tol_total), monotone=monotone,
        fit=dict(lambda_inf=lam_inf, c=float(coef[1])),
    )


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def export_eigenvector_csv(result: SpectrumResult, path):
    """(rho, t, value) rows of the ground-state eigenvector."""
    data = np.column_stack([result.coords["rho"], result.coords["t"], result.eigenvector])
    np.savetxt(path, data, delimiter=",", header="rho,t,value", comments="", fmt="%.17g")


def export_triplets(A, path):
    """Coordinate-format text dump (row col value, 0-based)."""
    C = sparse.coo_matrix(A)
    np.savetxt(path, np.column_stack([C.row, C.col, C.data]), fmt=["%d", "%d", "%.17g"],
               header=f"{A.shape[0]} {A.shape[1]} {C.nnz}")
