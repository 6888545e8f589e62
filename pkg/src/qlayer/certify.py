"""Variational certificates sigma_0 < kappa^2 from explicit test fields.

Two families of witnesses are built on radially symmetric surfaces:

* ``certify_nonneg_curvature``: f = phi chi + eps j t chi, where phi is a
  logarithmic cutoff (small Dirichlet energy on a parabolic surface) and j a
  bump supported where phi == 1.  The cross term Q(phi chi, j t chi) reduces
  to -sigma int H j with sigma = -int chi' chi t > 0.
* ``certify_general_curve``: the perturbation is rho~ n_z t chi, with rho~
  equal to one inside a closed curve C and decaying across a collar.  Its
  cross term against phi chi is C1 int grad z . grad rho~ (using H n_z = Delta z),
  which the alignment of the curve's conormal with the z-axis keeps away from 0.

Both minimise A + 2 eps b + eps^2 c in closed form.  A certificate is issued
only when Q(eps*) plus the quadrature error budget is negative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import AdmissibilityError, CoverageError
from .forms import (
    Cosine, LayerField, NormalZField, PolyCos, RadialField, TimesT, form_matrix,
    grid_for, separable, transverse_integrals,
)
from .layer import LayerConfig
from .surfaces import ParameterCircle, RadialGraph, Surface, _geometric_panels, \
    admissibility, gauss_legendre, sample

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Radial profiles
# ---------------------------------------------------------------------------


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x), 6 * x * (1 - x)


@dataclass(frozen=True)
class LogCutoff:
    """0 below r0, log-linear up to 1 on [r0, r1], 1 on [r1, r2], log-linear down to 0 on [r2, r3]."""

    r0: float
    r1: float
    r2: float
    r3: float

    def __post_init__(self):
        if not (0 < self.r0 < self.r1 <= self.r2 < self.r3):
            raise ValueError(f"need 0 < r0 < r1 <= r2 < r3, got {self.radii}")

    @property
    def radii(self):
        return (self.r0, self.r1, self.r2, self.r3)

    @property
    def support(self):
        return (self.r0, self.r3)

    @property
    def breaks(self):
        return self.radii

    def __call__(self, rho):
        rho = np.asarray(rho, float)
        safe = np.where(rho > 0, rho, 1.0)
        li, lo = math.log(self.r1 / self.r0), math.log(self.r3 / self.r2)
        up = (rho > self.r0) & (rho < self.r1)
        down = (rho > self.r2) & (rho < self.r3)
        flat = (rho >= self.r1) & (rho <= self.r2)
        val = np.where(up, np.log(safe / self.r0) / li, 0.0)
        val = np.where(down, np.log(self.r3 / safe) / lo, val)
        val = np.where(flat, 1.0, val)
        der = np.where(up, 1 / (li * safe), 0.0) - np.where(down, 1 / (lo * safe), 0.0)
        return val, der

    def flat_energy(self) -> float:
        """Dirichlet energy of the same profile on the plane."""
        return 2 * math.pi / math.log(self.r1 / self.r0) + 2 * math.pi / math.log(self.r3 / self.r2)


@dataclass(frozen=True)
class AnnulusBump:
    """Smoothstep ramps on [s0, s1] and [s2, s3], times the weight (s0 / rho)^decay.

    Values lie in [0, 1]; the construction rejects slopes of 2 or more.
    """

    s0: float
    s1: float
    s2: float
    s3: float
    decay: float = 0.0

    def __post_init__(self):
        if not (0 < self.s0 < self.s1 <= self.s2 < self.s3):
            raise ValueError("need 0 < s0 < s1 <= s2 < s3")
        if self.max_slope() >= 2:
            raise ValueError(f"bump slope {self.max_slope():.3g} >= 2")

    @property
    def support(self):
        return (self.s0, self.s3)

    @property
    def breaks(self):
        return (self.s0, self.s1, self.s2, self.s3)

    def __call__(self, rho):
        rho = np.asarray(rho, float)
        a, da = _smoothstep((rho - self.s0) / (self.s1 - self.s0))
        b, db = _smoothstep((self.s3 - rho) / (self.s3 - self.s2))
        inside = (rho > self.s0) & (rho < self.s3)
        safe = np.where(inside, rho, self.s0)
        w = (self.s0 / safe) ** self.decay
        dw = -self.decay * w / safe
        val = a * b * w
        der = (da / (self.s1 - self.s0) * b - a * db / (self.s3 - self.s2)) * w + a * b * dw
        return np.where(inside, val, 0.0), np.where(inside, der, 0.0)

    def max_slope(self) -> float:
        x = np.linspace(self.s0, self.s3, 4001)
        return float(np.max(np.abs(self(x)[1])))


@dataclass(frozen=True)
class Collar:
    """rho~ = inner log ramp on [r0, r1] times a decreasing smoothstep on [rho_c, rho_c + width]."""

    r0: float
    r1: float
    rho_c: float
    width: float

    def __post_init__(self):
        if not (0 < self.r0 < self.r1 <= self.rho_c) or self.width <= 0:
            raise ValueError("need 0 < r0 < r1 <= rho_c and width > 0")

    @property
    def support(self):
        return (self.r0, self.rho_c + self.width)

    @property
    def breaks(self):
        return (self.r0, self.r1, self.rho_c, self.rho_c + self.width)

    def __call__(self, rho):
        rho = np.asarray(rho, float)
        safe = np.where(rho > 0, rho, 1.0)
        li = math.log(self.r1 / self.r0)
        up = (rho > self.r0) & (rho < self.r1)
        inner = np.where(up, np.log(safe / self.r0) / li, (rho >= self.r1) * 1.0)
        dinner = np.where(up, 1 / (li * safe), 0.0)
        s, ds = _smoothstep((rho - self.rho_c) / self.width)
        c, dc = 1 - s, -ds / self.width
        return inner * c, dinner * c + inner * dc


@dataclass(frozen=True)
class CutoffSpec:
    kind: str                       # parabolic_log | annulus_bump | curve_collar
    radii: tuple
    collar_width: float | None = None
    decay: float = 0.0

    def profile(self):
        if self.kind == "parabolic_log":
            return LogCutoff(*self.radii)
        if self.kind == "annulus_bump":
            return AnnulusBump(*self.radii, decay=self.decay)
        if self.kind == "curve_collar":
            r0, r1, rho_c = self.radii
            return Collar(r0, r1, rho_c, self.collar_width)
        raise ValueError(f"unknown cutoff kind {self.kind!r}")


# ---------------------------------------------------------------------------
# 1-D radial integrals
# ---------------------------------------------------------------------------


def radial_integral(surface: RadialGraph, fn, knots, order: int = 16) -> float:
    """int fn(rho) dSigma over the geodesic annulus [knots[0], knots[-1]]."""
    xs, ws = [], []
    for lo, hi in zip(knots[:-1], knots[1:]):
        for p, q in _geometric_panels(lo, hi, surface.scale):
            x, w = gauss_legendre(order, p, q)
            xs.append(x)
            ws.append(w)
    if not xs:
        return 0.0
    x, w = np.concatenate(xs), np.concatenate(ws)
    return float(np.sum(w * fn(x) * 2 * np.pi * surface.r_of_rho(x)))


def profile_energy(profile, surface: RadialGraph) -> float:
    """int |grad phi|^2 dSigma for a radial profile."""
    knots = sorted(set(profile.breaks))
    return radial_integral(surface, lambda x: profile(x)[1] ** 2, knots)


def profile_mass(profile, surface: RadialGraph) -> float:
    knots = sorted(set(profile.breaks))
    return radial_integral(surface, lambda x: profile(x)[0] ** 2, knots)


@dataclass
class Cutoff:
    spec: CutoffSpec
    field: RadialField
    dirichlet_energy: float
    mass: float


def build_parabolic_cutoff(spec: CutoffSpec, surface: Surface, coverage: float | None = None) -> Cutoff:
    """Radial cutoff field with its Dirichlet energy and mass.

    Raises
    ------
    CoverageError
        If the outer radius exceeds ``coverage`` (geodesic).
    """
    if surface.symmetry != "radial":
        raise ValueError("radial cutoffs need a radially symmetric surface")
    prof = spec.profile()
    if coverage is not None and prof.support[1] > coverage:
        raise CoverageError(f"cutoff radius {prof.support[1]:.6g} beyond coverage {coverage:.6g}")
    return Cutoff(spec, RadialField(prof), profile_energy(prof, surface), profile_mass(prof, surface))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass
class Certificate:
    surface_tag: str
    a: float
    family: str
    verdict: str
    kappa_sq: float
    Q_value: float | None = None
    error_budget: float | None = None
    parameters: dict = field(default_factory=dict)
    integrals: dict = field(default_factory=dict)
    reason: str = ""
    candidates: list = field(default_factory=list)
    witness: LayerField | None = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self) -> dict:
        return {
            "surface_tag": self.surface_tag, "a": self.a, "family": self.family,
            "verdict": self.verdict, "kappa_sq": self.kappa_sq, "Q_value": self.Q_value,
            "error_budget": self.error_budget, "parameters": dict(self.parameters),
            "integrals": dict(self.integrals), "reason": self.reason,
            "candidates": [dict(c) for c in self.candidates],
        }


@dataclass(frozen=True)
class Shape:
    """Log-ratio shape of the witness: inner ramp, plateau, outer ramp (natural logs)."""

    name: str
    ramp: float
    plateau: float
    decay: float = 1.0


LITERAL = "literal"
DEFAULT_SHAPES = (Shape(LITERAL, math.log(2), math.log(2), 0.0),
                  Shape("l3p4", 3.0, 4.0), Shape("l3p6", 3.0, 6.0),
                  Shape("l4p4", 4.0, 4.0), Shape("l4p6", 4.0, 6.0))


@dataclass
class SearchBudget:
    radii: tuple = (20.0, 40.0, 80.0, 160.0)     # multiples of the curvature scale 1 / sup||B||
    shapes: tuple = DEFAULT_SHAPES
    max_candidates: int = 64
    order: int = 8
    n_t: int = 16

    @classmethod
    def coerce(cls, budget) -> "SearchBudget":
        if budget is None:
            return cls()
        if isinstance(budget, SearchBudget):
            return budget
        return cls(max_candidates=int(budget))


def _refusal(surface, cfg, family, reason) -> Certificate:
    return Certificate(surface.tag, cfg.a, family, "refused", cfg.kappa_sq, reason=reason)


def _check_preconditions(surface, cfg, family, need_nonneg, refuse_flat=True):
    try:
        rep = admissibility(surface, cfg.a)
    except AdmissibilityError as exc:
        return None, _refusal(surface, cfg, family, f"admissibility: {exc}")
    if rep.totally_geodesic and refuse_flat:
        return rep, _refusal(surface, cfg, family, "totally geodesic surface: no bound state to certify")
    if need_nonneg and rep.K_sign != "nonnegative":
        return rep, _refusal(surface, cfg, family, "Gauss curvature changes sign")
    if surface.symmetry != "radial":
        return rep, _refusal(surface, cfg, family, "witness construction needs a radial surface")
    return rep, None


@dataclass
class _Quad:
    A: float
    b: float
    c: float
    dA: float
    db: float
    dc: float
    M: np.ndarray
    Q1_cross: float

    def optimum(self):
        eps = -self.b / self.c
        q = self.A - self.b**2 / self.c
        err = self.dA + 2 * abs(eps) * self.db + eps**2 * self.dc
        return eps, q, err

    def mass(self, eps):
        return self.M[0, 0] + 2 * eps * self.M[0, 1] + eps**2 * self.M[1, 1]


def _quadratic(base: LayerField, pert: LayerField, surface, cfg, budget) -> _Quad:
    grid = grid_for([base, pert], surface, cfg, order=budget.order, n_t=budget.n_t)
    m = form_matrix([base, pert], surface, cfg, grid)
    return _Quad(A=m.Q[0, 0], b=m.Q[0, 1], c=m.Q[1, 1], dA=m.err_Q[0, 0], db=m.err_Q[0, 1],
                 dc=m.err_Q[1, 1], M=m.M, Q1_cross=m.Q1[0, 1])


def nonneg_witness(R: float, shape: Shape):
    """Cutoff and bump profiles for base radius R and a given shape."""
    if shape.name == LITERAL:
        phi = LogCutoff(R / 2, R, 2 * R, 2 * R * math.exp(6.0))
        j = AnnulusBump(4 * R / 3, 17 * R / 12, 19 * R / 12, 5 * R / 3, 0.0)
        return phi, j
    r0 = R / 2
    r1 = r0 * math.exp(shape.ramp)
    r2 = r1 * math.exp(shape.plateau)
    r3 = r2 * math.exp(shape.ramp)
    # keep j 5% inside the plateau so geodesic-radius errors cannot leak it onto a ramp
    s0, s3 = 1.05 * r1, r2 / 1.05
    j = AnnulusBump(s0, 2 * s0, s3 / 2, s3, shape.decay)
    return LogCutoff(r0, r1, r2, r3), j


def certify_nonneg_curvature(surface: Surface, cfg: LayerConfig, search_budget=None) -> Certificate:
    """Search f = phi chi + eps j t chi for Q(f, f) + error < 0.

    Radii escalate through ``budget.radii`` (times 1 / sup||B||); at each
    radius every shape is tried and the search stops at the first radius
    with a certified candidate.  The best candidate minimises Q + error,
    ties broken by smaller R then smaller |eps|.
    """
    family = "nonneg_curvature"
    budget = SearchBudget.coerce(search_budget)
    rep, refusal = _check_preconditions(surface, cfg, family, need_nonneg=True)
    if refusal is not None:
        return refusal
    unit = 1.0 / rep.sup_normB
    ti = transverse_integrals(cfg)
    cands = []
    best = None
    n_eval = 0
    for mult in budget.radii:
        R = mult * unit
        for shape in budget.shapes:
            if n_eval >= budget.max_candidates:
                break
            n_eval += 1
            phi, j = nonneg_witness(R, shape)
            base = separable(RadialField(phi), Cosine())
            pert = separable(RadialField(j), TimesT())
            qd = _quadratic(base, pert, surface, cfg, budget)
            eps, q, err = qd.optimum()
            rec = dict(R=R, shape=shape.name, epsilon=eps, A=qd.A, b=qd.b, c=qd.c,
                       Q=q, error=err, phi_radii=list(phi.radii), j_radii=list(j.breaks),
                       Q1_cross=qd.Q1_cross)
            cands.append(rec)
            log.debug("candidate %s", rec)
            key = (q + err, R, abs(eps))
            if best is None or key < best[0]:
                best = (key, rec, phi, j, qd)
        if best is not None and best[0][0] < 0:
            break
    if best is None:
        return Certificate(surface.tag, cfg.a, family, "not_found", cfg.kappa_sq,
                           reason="empty search budget", candidates=cands)
    (_, rec, phi, j, qd) = best
    eps, q, err = qd.optimum()
    witness = separable(RadialField(phi), Cosine()) + \
        LayerField([(RadialField(_Scaled(j, eps)), TimesT())])
    mass = qd.mass(eps)
    verdict = "certified" if q + err < 0 else "not_found"
    params = dict(R=rec["R"], shape=rec["shape"], epsilon=eps, cutoff_radii=rec["phi_radii"],
                  bump_radii=rec["j_radii"], curvature_scale=unit)
    integrals = dict(A=qd.A, b=qd.b, c=qd.c, dA=qd.dA, db=qd.db, dc=qd.dc, mass=mass,
                     rayleigh=cfg.kappa_sq + q / mass, rayleigh_gap=q / mass,
                     sigma=ti.sigma, C1=ti.C1_quadrature, Q1_cross=qd.Q1_cross,
                     Ca=rep.Ca)
    reason = "" if verdict == "certified" else "search budget exhausted without Q + error < 0"
    return Certificate(surface.tag, cfg.a, family, verdict, cfg.kappa_sq, Q_value=q,
                       error_budget=err, parameters=params, integrals=integrals,
                       reason=reason, candidates=cands, witness=witness)


@dataclass(frozen=True)
class _Scaled:
    """A radial profile multiplied by a constant."""

    profile: object
    c: float

    @property
    def support(self):
        return self.profile.support

    @property
    def breaks(self):
        return self.profile.breaks

    def __call__(self, rho):
        v, d = self.profile(rho)
        return self.c * v, self.c * d


# ---------------------------------------------------------------------------
# Curve construction
# ---------------------------------------------------------------------------


def curve_alignment(surface: RadialGraph, curve: ParameterCircle, direction=(0.0, 0.0, 1.0), n=256):
    """<gamma, direction> along the curve, gamma the outward unit conormal in R^3."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    u, v = curve.points(n)
    s = sample(surface, u, v)
    pu, pv = s.tangents
    r = np.hypot(u, v)
    grad = np.stack([u / r, v / r], axis=-1) * surface.W(r)[:, None]      # d rho / d(u, v)
    ginv = np.linalg.inv(s.g)
    up = np.einsum("nij,nj->ni", ginv, grad)
    gamma = up[:, :1] * pu + up[:, 1:] * pv
    gamma /= np.linalg.norm(gamma, axis=-1, keepdims=True)
    return gamma @ d


@dataclass(frozen=True)
class CurveShape:
    name: str
    inner_ramp: float       # log(r1 / r0)
    inner_fraction: float   # r1 / rho_C
    collar: float           # collar width / rho_C
    outer_ramp: float       # log(r3 / r2)


DEFAULT_CURVE_SHAPES = (CurveShape("c1", 6.0, 0.05, 1.0, 12.0),
                        CurveShape("c2", 8.0, 0.05, 1.0, 12.0),
                        CurveShape("c3", 8.0, 0.1, 0.5, 16.0))


def curve_fields(surface, rho_c, shape: CurveShape, direction=(0.0, 0.0, 1.0)):
    r1 = shape.inner_fraction * rho_c
    r0 = r1 * math.exp(-shape.inner_ramp)
    width = shape.collar * rho_c
    r2 = rho_c + width
    phi = LogCutoff(r0, r1, r2, r2 * math.exp(shape.outer_ramp))
    rt = Collar(r0, r1, rho_c, width)
    return phi, rt


def _grad_z_dot_grad(surface: RadialGraph, prof, lo, hi, direction_z=True):
    """int grad z . grad rho~ over lo <= rho <= hi (radial: dz/drho = f'/W)."""
    knots = sorted({lo, hi, *[b for b in prof.breaks if lo < b < hi]})

    def integrand(x):
        r = surface.r_of_rho(x)
        return surface.fp(r) / surface.W(r) * prof(x)[1]

    return radial_integral(surface, integrand, knots)


def certify_general_curve(surface: Surface, cfg: LayerConfig, curve=None,
                          direction=(0.0, 0.0, 1.0), search_budget=None,
                          shapes: Sequence[CurveShape] = DEFAULT_CURVE_SHAPES) -> Certificate:
    """Witness phi chi + eps rho~ n_z t chi built around a closed curve.

    ``curve`` is a parameter circle (or ``None`` to try the surface's
    candidate curves in order).  The alignment delta_2 = min <gamma, z> is
    measured along the curve; delta_2 <= 0 ends the search with verdict
    not_found and reason "alignment_failure".
    """
    family = "general_curve"
    budget = SearchBudget.coerce(search_budget)
    # a flat surface is searched anyway: the cross term vanishes and nothing is found
    rep, refusal = _check_preconditions(surface, cfg, family, need_nonneg=False, refuse_flat=False)
    if refusal is not None:
        return refusal
    d = np.asarray(direction, float)
    if np.linalg.norm(d[:2]) > 1e-12:
        return _refusal(surface, cfg, family, "radial construction needs the symmetry axis as direction")
    sgn = 1.0 if d[2] > 0 else -1.0
    curves = [curve] if curve is not None else list(surface.candidate_curves())
    if not curves:
        return Certificate(surface.tag, cfg.a, family, "not_found", cfg.kappa_sq,
                           reason="no candidate curves")
    ti = transverse_integrals(cfg)
    cands, best = [], None
    n_eval = 0
    for cv in curves:
        delta2 = float(np.min(curve_alignment(surface, cv, d)))
        rho_c = float(surface.arclength(np.array([cv.radius]))[0])
        length = float(surface.circumference(np.array([rho_c]))[0])
        area = surface.area(rho_c)
        misaligned = not delta2 > 1e-12
        for shape in shapes[:1] if misaligned else shapes:
            if n_eval >= budget.max_candidates:
                break
            n_eval += 1
            phi, rt = curve_fields(surface, rho_c, shape)
            base = separable(RadialField(phi), Cosine())
            pert = LayerField([(NormalZField(RadialField(rt)), PolyCos((0.0, sgn)))])
            qd = _quadratic(base, pert, surface, cfg, budget)
            eps, q, err = qd.optimum()
            flux_all = _grad_z_dot_grad(surface, rt, rt.r0, rho_c + rt.width)
            flux_collar = _grad_z_dot_grad(surface, rt, rho_c, rho_c + rt.width)
            rec = dict(curve_radius=cv.radius, rho_c=rho_c, shape=shape.name, delta2=delta2,
                       length=length, area=area, epsilon=eps, A=qd.A, b=qd.b, c=qd.c, Q=q,
                       error=err, collar_width=rt.width, flux=flux_all, collar_flux=flux_collar,
                       cutoff_radii=list(phi.radii), collar_radii=[rt.r0, rt.r1, rho_c])
            aligned = not misaligned and abs(flux_collar) >= 0.5 * delta2 * length
            rec["alignment_ok"] = bool(aligned)
            if misaligned:
                rec["reason"] = "alignment_failure"
            cands.append(rec)
            if not aligned:
                continue
            key = (q + err, rho_c, abs(eps))
            if best is None or key < best[0]:
                best = (key, rec, phi, rt, qd)
        if best is not None and best[0][0] < 0:
            break
    if best is None:
        reason = "alignment_failure" if all(c.get("reason") == "alignment_failure" for c in cands) \
            else "no aligned candidate"
        return Certificate(surface.tag, cfg.a, family, "not_found", cfg.kappa_sq,
                           reason=reason, candidates=cands)
    _, rec, phi, rt, qd = best
    eps, q, err = qd.optimum()
    witness = separable(RadialField(phi), Cosine()) + \
        LayerField([(NormalZField(RadialField(_Scaled(rt, eps))), PolyCos((0.0, sgn)))])
    mass = qd.mass(eps)
    verdict = "certified" if q + err < 0 else "not_found"
    params = dict(curve_radius=rec["curve_radius"], rho_c=rec["rho_c"], shape=rec["shape"],
                  epsilon=eps, epsilon1=rec["collar_width"], cutoff_radii=rec["cutoff_radii"],
                  collar_radii=rec["collar_radii"])
    integrals = dict(A=qd.A, b=qd.b, c=qd.c, dA=qd.dA, db=qd.db, dc=qd.dc, mass=mass,
                     rayleigh=cfg.kappa_sq + q / mass, rayleigh_gap=q / mass,
                     delta2=rec["delta2"], length=rec["length"], area=rec["area"],
                     grad_z_dot_grad_rho=rec["flux"], collar_flux=rec["collar_flux"],
                     C1=ti.C1_quadrature, C1_flux_prediction=ti.C1_quadrature * rec["flux"] * sgn,
                     Ca=rep.Ca)
    reason = "" if verdict == "certified" else "search budget exhausted without Q + error < 0"
    return Certificate(surface.tag, cfg.a, family, verdict, cfg.kappa_sq, Q_value=q,
                       error_budget=err, parameters=params, integrals=integrals, reason=reason,
                       candidates=cands, witness=witness)


# ---------------------------------------------------------------------------
# Essential spectrum probe
# ---------------------------------------------------------------------------


@dataclass
class EssProbe:
    rayleigh_value: float
    gap: float
    energy: float
    mass: float
    radii: tuple
    Q: float
    error: float
    sandwich_floor: float

    def to_dict(self):
        return dict(self.__dict__)


def _ramp_for_energy(surface, start, target):
    """Log-ramp length ell with int |grad phi|^2 = target on [start, start e^ell]."""
    def energy(ell):
        return radial_integral(surface, lambda x: 1.0 / (ell * x) ** 2,
                               [start, start * math.exp(ell)])

    lo, hi = 1e-3, 1.0
    while energy(hi) > target:
        hi *= 2
        if hi > 700:
            raise ValueError("energy target too small for a representable ramp")
    return optimize.brentq(lambda e: energy(e) - target, lo, hi, xtol=1e-12, rtol=1e-12)


def minimum_probe_mass(surface: Surface, compact_radius: float, energy_budget: float) -> float:
    """Smallest int phi^2 reachable by the probe cutoff (no plateau)."""
    r0 = float(compact_radius)
    r1 = r0 * math.exp(_ramp_for_energy(surface, r0, energy_budget / 2))
    r3 = r1 * math.exp(_ramp_for_energy(surface, r1, energy_budget / 2))
    return profile_mass(LogCutoff(r0, r1, r1, r3), surface)


def ess_spectrum_probe(surface: Surface, cfg: LayerConfig, compact_radius: float,
                       target_mass: float, energy_budget: float = 1.0) -> EssProbe:
    """Rayleigh quotient of phi chi with phi supported outside B(compact_radius).

    Each ramp of phi carries half of ``energy_budget``; the plateau is sized
    so that int phi^2 dSigma = target_mass (or the minimum reachable value).
    """
    if surface.symmetry != "radial":
        raise ValueError("probe needs a radially symmetric surface")
    r0 = float(compact_radius)
    ell_in = _ramp_for_energy(surface, r0, energy_budget / 2)
    r1 = r0 * math.exp(ell_in)

    def build(r2):
        r2 = max(r2, r1)
        ell_out = _ramp_for_energy(surface, r2, energy_budget / 2)
        return LogCutoff(r0, r1, r2, r2 * math.exp(ell_out))

    def mass_gap(log_r2):
        return profile_mass(build(math.exp(log_r2)), surface) - target_mass

    lo = math.log(r1)
    if mass_gap(lo) >= 0:
        r2 = r1
    else:
        hi = lo + 1.0
        while mass_gap(hi) < 0:
            hi += 1.0
        r2 = math.exp(optimize.brentq(mass_gap, lo, hi, xtol=1e-12))
    phi = build(r2)
    f = separable(RadialField(phi), Cosine())
    m = form_matrix([f], surface, cfg)
    Q, M = float(m.Q[0, 0]), float(m.M[0, 0])
    # floor on rho >= r0 from the metric sandwich with delta = sup ||B|| there
    r_in = surface.r_of_rho(np.array([r0]))[0]
    rr = np.geomspace(r_in, r_in * 1e3, 400)
    delta = float(np.max(np.hypot(*surface.principal(rr))))
    e = 2 * cfg.a * delta + (cfg.a * delta) ** 2
    floor = ((1 - e) / (1 + e)) ** 2 * cfg.kappa_sq if e < 1 else 0.0
    return EssProbe(rayleigh_value=cfg.kappa_sq + Q / M, gap=Q / M,
                    energy=profile_energy(phi, surface), mass=profile_mass(phi, surface),
                    radii=phi.radii, Q=Q, error=float(m.err_Q[0, 0]), sandwich_floor=floor)
