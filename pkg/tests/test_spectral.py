import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse
from scipy.integrate import quad
from scipy.special import j0, jn_zeros

from qlayer.certify import AnnulusBump
from qlayer.errors import ConvergenceError, FoldError, ResourceLimitError
from qlayer.forms import RadialField, SineSeries, polar_grid, rayleigh_quotient, separable
from qlayer.layer import LayerConfig
from qlayer.spectral import (RadialMesh, TruncatedLayer, assemble, axisym_reduce, count_below,
                             discrete_threshold, eigs_by_mode, export_eigenvector_csv,
                             export_triplets, smallest_eigs, solve, truncation_study)
from qlayer.surfaces import make_surface

J01, J02 = jn_zeros(0, 2)
J11 = jn_zeros(1, 1)[0]


def slab(R, h, n_t=16):
    return TruncatedLayer("plane()", R, n_t=n_t, mesh=RadialMesh.uniform(R, h))


def test_discrete_threshold():
    for a, nt in ((1.0, 16), (0.5, 9)):
        dt = 2 * a / (nt + 1)
        T = (np.diag(np.full(nt, 2.0)) - np.diag(np.ones(nt - 1), 1) - np.diag(np.ones(nt - 1), -1))
        assert_allclose(discrete_threshold(a, nt), np.linalg.eigvalsh(T / dt**2)[0], rtol=1e-12)
    assert discrete_threshold(1.0, 16) < LayerConfig(1.0).kappa_sq


class TestSlab:
    def test_bessel_modes(self, plane):
        cfg = LayerConfig(1.0)
        r = solve(plane, cfg, slab(10.0, 0.05), k=2)
        assert_allclose(r.lambda_min, cfg.kappa_sq + (J01 / 10) ** 2, rtol=0.01)
        # against the same t discretisation the radial error is O(h^2)
        assert_allclose(r.lambda_min, r.kappa_h_sq + (J01 / 10) ** 2, rtol=1e-5)
        assert_allclose(r.next_eigs[0], r.kappa_h_sq + (J02 / 10) ** 2, rtol=1e-4)
        r1 = solve(plane, cfg, slab(10.0, 0.05), k=1, m=1)
        assert_allclose(r1.lambda_min, r1.kappa_h_sq + (J11 / 10) ** 2, rtol=1e-5)

    def test_localization_matches_bessel_mass(self, plane):
        r = solve(plane, LayerConfig(1.0), slab(10.0, 0.05))
        inner = quad(lambda x: j0(J01 * x) ** 2 * x, 0, 0.5)[0]
        total = quad(lambda x: j0(J01 * x) ** 2 * x, 0, 1)[0]
        assert_allclose(r.localization_fraction, inner / total, atol=5e-3)

    def test_three_dimensional_cross_check(self, plane):
        cfg = LayerConfig(1.0)
        full = solve(plane, cfg, TruncatedLayer("plane()", 3.0, n_t=8, n_uv=41), k=3, m=None)
        axi = solve(plane, cfg, TruncatedLayer("plane()", 3.0, n_t=8, mesh=RadialMesh.uniform(3.0, 0.02)))
        assert_allclose(full.lambda_min, axi.lambda_min, rtol=0.02)
        assert axi.n_unknowns * 5 < full.n_unknowns
        # m = 1 pair stays degenerate under the square's symmetry
        assert_allclose(full.eigenvalues[1], full.eigenvalues[2], rtol=1e-8)
        assert_allclose(full.eigenvalues[1], full.kappa_h_sq + (J11 / 3) ** 2, rtol=0.03)

    def test_truncation_slope(self, plane):
        cfg = LayerConfig(1.0)
        st = truncation_study(plane, cfg, [10.0, 20.0, 40.0], h=0.1, uniform=True,
                              refine_check=False)
        gap = np.array([r.lambda_min for r in st.results]) - st.kappa_h_sq
        slope = np.polyfit(np.log(st.radii), np.log(gap), 1)[0]
        assert_allclose(slope, -2.0, atol=0.02)
        assert not st.below_threshold
        assert_allclose(st.lambda_extrapolated, cfg.kappa_sq, rtol=0.005)

    def test_mesh_order(self, plane):
        cfg = LayerConfig(1.0)
        exact = cfg.kappa_sq + (J01 / 10) ** 2
        lams = [solve(plane, cfg, slab(10.0, h, nt), k=1).lambda_min
                for h, nt in ((0.4, 7), (0.2, 15), (0.1, 31))]
        err = np.abs(np.array(lams) - exact)
        assert np.all(np.log2(err[:-1] / err[1:]) >= 1.8)


class TestOperators:
    def test_axisym_structure(self, hyperboloid):
        prob = axisym_reduce(hyperboloid, LayerConfig(0.5),
                             TruncatedLayer("h", 20.0, n_t=8, mesh=RadialMesh(20.0, 0.2)), m=0)
        assert abs(prob.A - prob.A.T).max() == 0
        assert np.all(prob.M.diagonal() > 0)
        assert count_below(prob.A, prob.M, 0.0) == 0
        assert prob.A.shape == (prob.shape[0] * prob.shape[1],) * 2

    def test_3d_structure(self, hyperboloid):
        A, M, info = assemble(hyperboloid, LayerConfig(0.5),
                              TruncatedLayer("h", 2.0, n_t=7, n_uv=21))
        assert abs(A - A.T).max() == 0
        assert np.all(M.diagonal() > 0)
        assert count_below(A, M, 0.0) == 0
        assert np.all(info["rho"] < 2.0) and np.all(np.abs(info["t"]) < 0.5)

    def test_m_orthogonality_and_residuals(self, hyperboloid):
        prob = axisym_reduce(hyperboloid, LayerConfig(0.5),
                             TruncatedLayer("h", 30.0, n_t=8, mesh=RadialMesh(30.0, 0.1)))
        w, X, res = smallest_eigs(prob.A, prob.M, k=4, tol=1e-8)
        assert np.all(np.diff(w) >= 0) and np.all(res <= 1e-8)
        assert_allclose(X.T @ (prob.M @ X), np.eye(4), atol=1e-8)

    def test_lobpcg_agrees(self, plane):
        prob = axisym_reduce(plane, LayerConfig(1.0), slab(5.0, 0.1, n_t=8))
        w1, _, _ = smallest_eigs(prob.A, prob.M, k=2)
        w2, _, res = smallest_eigs(prob.A, prob.M, k=2, method="lobpcg", tol=1e-6)
        assert_allclose(w2, w1, rtol=1e-8)
        assert np.all(res <= 1e-6)

    def test_inertia_count(self, plane):
        prob = axisym_reduce(plane, LayerConfig(1.0), slab(5.0, 0.1, n_t=8))
        w = np.linalg.eigvalsh(np.diag(1 / np.sqrt(prob.M.diagonal())) @ prob.A.toarray()
                               @ np.diag(1 / np.sqrt(prob.M.diagonal())))
        for s in (w[0] * 0.99, 0.5 * (w[2] + w[3]), 0.5 * (w[10] + w[11])):
            assert count_below(prob.A, prob.M, s) == np.count_nonzero(w < s)

    def test_variational_consistency(self, hyperboloid):
        # any sampled field has discrete Rayleigh quotient >= lambda_min
        cfg = LayerConfig(0.5)
        prob = axisym_reduce(hyperboloid, cfg, TruncatedLayer("h", 40.0, n_t=12,
                                                              mesh=RadialMesh(40.0, 0.1)))
        lam = smallest_eigs(prob.A, prob.M, k=1)[0][0]
        rng = np.random.default_rng(3)
        for _ in range(10):
            c = rng.normal(size=3)
            x = (np.cos(cfg.kappa * prob.t) * (1 + c[0] * prob.t)
                 * np.exp(-(prob.rho / (5 + 10 * abs(c[1]))) ** 2) * (40 - prob.rho))
            rq = x @ (prob.A @ x) / (x @ (prob.M @ x))
            assert rq >= lam * (1 - 1e-12)

    def test_ground_state_in_mode_zero(self, hyperboloid, bump):
        for s, a in ((hyperboloid, 0.5), (bump, 0.2)):
            res = eigs_by_mode(s, LayerConfig(a), TruncatedLayer("x", 15.0, n_t=8,
                                                                 mesh=RadialMesh(15.0, 0.1)))
            lams = [res[m].lambda_min for m in (0, 1, 2)]
            assert lams[0] < lams[1] < lams[2]

    def test_hyperboloid_3d_vs_axisym(self, hyperboloid):
        cfg = LayerConfig(0.5)
        full = solve(hyperboloid, cfg, TruncatedLayer("h", 3.0, n_t=8, n_uv=41), k=1, m=None)
        axi = solve(hyperboloid, cfg, TruncatedLayer("h", 3.0, n_t=8, mesh=RadialMesh.uniform(3.0, 0.02)),
                    k=1)
        assert_allclose(full.lambda_min, axi.lambda_min, rtol=0.02)


class TestStudy:
    def test_hyperboloid_bound_state(self, hyperboloid):
        cfg = LayerConfig(0.5)
        st = truncation_study(hyperboloid, cfg, [100.0, 200.0, 400.0])
        lams = [r.lambda_min for r in st.results]
        assert st.monotone and all(b <= a for a, b in zip(lams, lams[1:]))
        assert st.below_threshold and st.margin_discrete > st.tolerance
        assert lams[-1] < st.kappa_h_sq
        assert st.results[-1].localization_fraction >= 0.9
        loc = [r.localization_fraction for r in st.results]
        assert loc == sorted(loc)
        d = st.to_dict()
        assert d["lambdas"] == lams and d["kappa_sq"] == cfg.kappa_sq

    def test_monotone_on_graded_meshes(self, bump, plane):
        for s, a in ((bump, 0.2), (plane, 1.0)):
            st = truncation_study(s, LayerConfig(a), [10.0, 20.0, 40.0, 80.0], h=0.2, n_t=8,
                                  refine_check=False)
            lams = [r.lambda_min for r in st.results]
            assert all(b <= a_ for a_, b in zip(lams, lams[1:]))

    def test_bad_radii(self, plane):
        with pytest.raises(ValueError):
            truncation_study(plane, LayerConfig(1.0), [10.0, 20.0])
        with pytest.raises(ValueError):
            truncation_study(plane, LayerConfig(1.0), [10.0, 30.0, 20.0])


def test_sandwich_floor_far_field(hyperboloid):
    # fields supported outside B(R) where ||B|| < delta obey the sandwich floor
    cfg = LayerConfig(0.5)
    R = 50.0
    r_in = hyperboloid.r_of_rho(np.array([R]))[0]
    rr = np.geomspace(r_in, 1e4 * r_in, 400)
    delta = float(np.max(np.hypot(*hyperboloid.principal(rr))))
    e = 2 * cfg.a * delta + (cfg.a * delta) ** 2
    floor = ((1 - e) / (1 + e)) ** 2 * cfg.kappa_sq
    rng = np.random.default_rng(11)
    for _ in range(5):
        s0 = R * (1 + rng.random())
        prof = AnnulusBump(s0, 2 * s0, 3 * s0, 4 * s0, decay=rng.random())
        f = separable(RadialField(prof), SineSeries(tuple(rng.normal(size=3))))
        grid = polar_grid(hyperboloid, cfg.a, 4 * s0, breaks=prof.breaks[:3], order=12,
                          n_theta=4, n_t=24)
        assert rayleigh_quotient(f, hyperboloid, cfg, grid) >= floor


def test_exports(tmp_path, plane):
    prob = axisym_reduce(plane, LayerConfig(1.0), slab(2.0, 0.25, n_t=7))
    path = tmp_path / "A.txt"
    export_triplets(prob.A, path)
    n, m_, nnz = map(int, path.read_text().splitlines()[0].lstrip("# ").split())
    data = np.loadtxt(path)
    B = sparse.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                          shape=(n, m_))
    assert nnz == prob.A.nnz and abs(B - prob.A).max() == 0
    r = solve(plane, LayerConfig(1.0), slab(2.0, 0.25, n_t=7), k=1)
    csv = tmp_path / "ev.csv"
    export_eigenvector_csv(r, csv)
    assert csv.read_text().splitlines()[0] == "rho,t,value"
    rows = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert_allclose(rows[:, 2], r.eigenvector, rtol=1e-15)


def test_errors(plane, hyperboloid):
    with pytest.raises(ValueError):
        TruncatedLayer("p", 5.0, n_t=4)
    elliptic = make_surface("elliptic_bump", amplitude=1.0, wu=1.0, wv=2.0)
    with pytest.raises(ValueError):
        axisym_reduce(elliptic, LayerConfig(0.1), TruncatedLayer("e", 5.0, mesh=RadialMesh(5.0, 0.1)))
    with pytest.raises(ValueError):
        axisym_reduce(plane, LayerConfig(1.0), slab(2.0, 0.5), m=-1)
    with pytest.raises(ResourceLimitError):
        assemble(plane, LayerConfig(1.0), TruncatedLayer("p", 5.0, n_t=64, n_uv=401))
    with pytest.raises(FoldError):
        axisym_reduce(make_surface("bump", height=1.0, width=1.0), LayerConfig(1.5),
                      TruncatedLayer("b", 5.0, n_t=15, mesh=RadialMesh(5.0, 0.1)))
    prob = axisym_reduce(plane, LayerConfig(1.0), slab(5.0, 0.1, n_t=8))
    with pytest.raises(ValueError):
        smallest_eigs(prob.A, prob.M, k=0)
    with pytest.raises(ValueError):
        smallest_eigs(prob.A, prob.M, method="power")
    with pytest.raises(ConvergenceError) as exc:
        smallest_eigs(prob.A, prob.M, k=2, method="lobpcg", tol=1e-12, maxiter=2)
    assert exc.value.best_residual > 1e-12
