import numpy as np
import pytest

from gtbm import geometry as G
from gtbm.errors import (
    DomainError,
    NoOverlapError,
    NonSPDError,
    TimeRangeError,
    UnsupportedOperationError,
)
from gtbm.geometry import (
    ChartPoint,
    CigarFamily,
    EuclideanFamily,
    HyperbolicFamily,
    SphereFamily,
    StaticModeFamily,
    TorusConformalFamily,
    sym_sqrt,
)

ORIGIN = ChartPoint(0, np.zeros(2))


def all_families(nrf_family):
    return [
        EuclideanFamily(2),
        SphereFamily(dim=2, kappa=2.0),
        SphereFamily(dim=3, kappa=1.0),
        HyperbolicFamily(dim=2, kappa=2.0),
        CigarFamily(kappa=2.0),
        StaticModeFamily(amplitude=0.3, mode_kx=1, mode_ky=1),
        nrf_family,
    ]


def sample_point(family, rng):
    if family.name == "hyperbolic":
        x = 0.5 * rng.uniform(-1, 1, family.dim)
    elif family.name in ("torus_nrf", "static_custom"):
        x = rng.uniform(0, 2 * np.pi, family.dim)
    else:
        x = rng.uniform(-1.2, 1.2, family.dim)
    return x


def sample_time(family, rng):
    hi = min(0.9 * family.t_max, 2.0)
    return rng.uniform(0.0, hi)


def test_euclidean_metric_is_identity():
    fam = EuclideanFamily(2)
    p = ChartPoint(0, np.array([3.0, -1.0]))
    assert np.array_equal(G.metric_at(fam, 1.7, p), np.eye(2))
    assert np.array_equal(G.dt_metric_at(fam, 1.7, p), np.zeros((2, 2)))


@pytest.mark.parametrize("dim", [2, 3])
def test_shrinking_sphere_scale(dim):
    fam = SphereFamily(dim=dim, kappa=2.0)
    p = ChartPoint(0, 0.3 * np.ones(dim))
    g0 = G.metric_at(fam, 0.0, p)
    t = 0.4 * fam.t_max
    factor = 1.0 - 2.0 * (dim - 1) * t
    assert np.allclose(G.metric_at(fam, t, p), factor * g0, rtol=1e-13)


@pytest.mark.parametrize("dim", [2, 3])
def test_expanding_hyperbolic_scale(dim):
    fam = HyperbolicFamily(dim=dim, kappa=2.0)
    p = ChartPoint(0, np.full(dim, 0.2))
    g0 = G.metric_at(fam, 0.0, p)
    assert np.allclose(G.metric_at(fam, 0.7, p), (1 + 2 * (dim - 1) * 0.7) * g0)


def test_conformal_christoffel_components():
    # 2D e^u delta metric: G^1_11 = u_x/2, G^1_22 = -u_x/2, G^1_12 = u_y/2
    fam = StaticModeFamily(amplitude=0.4, mode_kx=1, mode_ky=2)
    x = np.array([1.1, 0.6])
    du = fam.conf_du(0.0, x)
    gam = fam.christoffel(0.0, x)
    assert np.isclose(gam[0, 0, 0], 0.5 * du[0])
    assert np.isclose(gam[0, 1, 1], -0.5 * du[0])
    assert np.isclose(gam[0, 0, 1], 0.5 * du[1])
    assert np.isclose(gam[1, 1, 1], 0.5 * du[1])
    assert np.isclose(gam[1, 0, 0], -0.5 * du[1])


def test_cigar_christoffels_vanish_at_origin():
    fam = CigarFamily()
    gam = G.christoffel_closed(fam, 0.0, ORIGIN)
    assert np.allclose(gam, 0.0, atol=1e-14)
    fd = G.christoffel_fd(fam, 0.0, ORIGIN, h_fd=1e-4)
    assert np.allclose(fd, 0.0, atol=1e-8)


def test_christoffel_fd_matches_closed():
    fam = SphereFamily(dim=2, kappa=2.0)
    p = ChartPoint(0, np.array([0.3, 0.0]))
    fd = G.christoffel_fd(fam, 0.05, p, h_fd=1e-4)
    closed = G.christoffel_closed(fam, 0.05, p)
    assert np.max(np.abs(fd - closed)) <= 1e-6


def test_christoffel_fd_euclidean_zero():
    fam = EuclideanFamily(2)
    fd = G.christoffel_fd(fam, 0.0, ChartPoint(0, np.array([1.0, 2.0])))
    assert np.max(np.abs(fd)) <= 1e-10


def test_flat_snapshot_family_christoffels(tmp_path):
    from gtbm import flow_solver

    sol = flow_solver.solve_nrf(np.zeros((16, 16)), t_end=0.05, n_store=5)
    fam = TorusConformalFamily(sol, kappa=2.0)
    p = ChartPoint(0, np.array([1.0, 2.0]))
    assert np.max(np.abs(G.christoffel_fd(fam, 0.02, p))) <= 1e-8
    assert np.max(np.abs(G.christoffel_closed(fam, 0.02, p))) <= 1e-10


def test_round_sphere_curvature():
    fam = SphereFamily(dim=2, kappa=2.0)
    p = ChartPoint(0, np.array([0.2, -0.5]))
    data = G.curvature_at(fam, 0.0, p)
    assert np.isclose(data.scalar, 2.0)
    assert np.allclose(data.ricci, G.metric_at(fam, 0.0, p))
    assert np.allclose(data.eigenvalues, [1.0, 1.0])
    assert np.isclose(np.trace(data.ricci_sharp), data.scalar)


def test_cigar_scalar_curvature_at_origin():
    data = G.curvature_at(CigarFamily(), 0.0, ORIGIN)
    assert np.isclose(data.scalar, 4.0)


def test_euclidean_curvature_zero():
    data = G.curvature_at(EuclideanFamily(2), 0.3, ChartPoint(0, np.array([1.0, 1.0])))
    assert np.allclose(data.ricci, 0.0)
    assert data.scalar == 0.0


def test_ricci_fd_cross_check():
    fam = SphereFamily(dim=2, kappa=2.0)
    x = np.array([0.4, -0.2])
    assert np.max(np.abs(fam.ricci(0.05, x) - fam.ricci_fd(0.05, x))) <= 1e-6


def test_dt_metric_values(nrf_family_small):
    sph = SphereFamily(dim=3, kappa=2.0)
    p = ChartPoint(0, np.array([0.1, 0.2, 0.3]))
    g0 = G.metric_at(sph, 0.0, p)
    assert np.allclose(G.dt_metric_at(sph, 0.0, p), -2 * (3 - 1) * g0 / 1.0)

    # normalized surface flow: d/dt g = (r - R) g with r ~ 0
    fam = nrf_family_small
    pt = ChartPoint(0, np.array([2.0, 1.0]))
    t = 0.1
    dtg = G.dt_metric_at(fam, t, pt)
    expected = -fam.scalar(t, pt.coords) * fam.metric(t, pt.coords)
    assert np.max(np.abs(dtg - expected)) <= 1e-10


def test_chart_transition_examples():
    fam = SphereFamily(dim=2, kappa=2.0)
    q, _ = G.chart_transition(fam, ChartPoint(0, np.array([1.0, 0.0])), 1)
    assert np.allclose(q.coords, [1.0, 0.0])
    q2, _ = G.chart_transition(fam, ChartPoint(0, np.array([2.0, 0.0])), 1)
    assert np.allclose(q2.coords, [0.5, 0.0])
    back, _ = G.chart_transition(fam, q2, 0)
    assert np.max(np.abs(back.coords - [2.0, 0.0])) <= 1e-12


def test_chart_transition_metric_covariance():
    fam = SphereFamily(dim=2, kappa=2.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(0.5, 2.0, 2)
        p = ChartPoint(0, x)
        q, jac = G.chart_transition(fam, p, 1)
        g_from = fam.metric(0.07, x)
        g_to = fam.metric(0.07, q.coords)
        assert np.max(np.abs(jac.T @ g_to @ jac - g_from)) <= 1e-10


def test_transition_requires_overlap():
    fam = SphereFamily(dim=2, kappa=2.0)
    with pytest.raises(NoOverlapError):
        G.chart_transition(fam, ORIGIN, 1)
    with pytest.raises(NoOverlapError):
        EuclideanFamily(2).transition(np.array([1.0, 0.0]), 0)


def test_positive_definite_on_random_grid(nrf_family_small):
    rng = np.random.default_rng(11)
    for fam in all_families(nrf_family_small):
        for _ in range(15):
            t = sample_time(fam, rng)
            x = sample_point(fam, rng)
            w = np.linalg.eigvalsh(fam.metric(t, x))
            assert w.min() > 0.0, fam.name


def test_ricci_flow_consistency(nrf_family_small):
    rng = np.random.default_rng(12)
    for fam in [
        SphereFamily(dim=2, kappa=2.0),
        HyperbolicFamily(dim=2, kappa=2.0),
        CigarFamily(kappa=2.0),
    ]:
        for _ in range(15):
            t, x = sample_time(fam, rng), sample_point(fam, rng)
            defect = fam.dt_metric(t, x) + fam.flow_kappa * fam.ricci(t, x)
            assert np.max(np.abs(defect)) <= 1e-6, fam.name
    fam = nrf_family_small
    for _ in range(15):
        t, x = rng.uniform(0, 0.95 * fam.t_max), rng.uniform(0, 2 * np.pi, 2)
        defect = fam.dt_metric(t, x) + fam.flow_kappa * fam.ricci(t, x)
        assert np.max(np.abs(defect)) <= 5e-3


def test_christoffel_symmetry_exact(nrf_family_small):
    rng = np.random.default_rng(13)
    for fam in all_families(nrf_family_small):
        t, x = sample_time(fam, rng), sample_point(fam, rng)
        gam = fam.christoffel(t, x)
        assert np.array_equal(gam, np.swapaxes(gam, -1, -2)), fam.name


def test_metric_compatibility(nrf_family_small):
    # d_k g_ij - G^l_ki g_lj - G^l_kj g_il = 0 (finite differences)
    rng = np.random.default_rng(14)
    h = 1e-5
    for fam in all_families(nrf_family_small):
        t, x = sample_time(fam, rng), sample_point(fam, rng)
        n = fam.dim
        gam = fam.christoffel(t, x)
        g = fam.metric(t, x)
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dg = (fam.metric(t, x + e) - fam.metric(t, x - e)) / (2 * h)
            defect = dg - np.einsum("li,lj->ij", gam[:, k, :], g) - np.einsum(
                "lj,il->ij", gam[:, k, :], g
            )
            assert np.max(np.abs(defect)) <= 1e-5, fam.name


def test_lifetime_guard():
    fam = SphereFamily(dim=2, kappa=2.0)  # t_max = 1/(2(n-1)) = 0.5
    assert np.isclose(fam.t_max, 0.5)
    fam.check_time(0.4)
    with pytest.raises(TimeRangeError):
        fam.check_time(0.49)
    with pytest.raises(TimeRangeError):
        fam.check_time(-0.1)
    with pytest.raises(TimeRangeError):
        G.metric_at(fam, 0.49, ORIGIN)


def test_domain_guards():
    hyp = HyperbolicFamily(dim=2)
    with pytest.raises(DomainError):
        G.metric_at(hyp, 0.0, ChartPoint(0, np.array([0.8, 0.7])))
    with pytest.raises(DomainError):
        G.christoffel_fd(hyp, 0.0, ChartPoint(0, np.array([0.99999, 0.0])))
    with pytest.raises(DomainError):
        ChartPoint(0, np.array([np.nan, 0.0]))
    with pytest.raises(DomainError):
        G.metric_at(EuclideanFamily(2), 0.0, ChartPoint(3, np.zeros(2)))


def test_numeric_only_family_raises():
    class NumericOnly(EuclideanFamily):
        has_closed_christoffel = False

    fam = NumericOnly(2)
    with pytest.raises(UnsupportedOperationError):
        G.christoffel_closed(fam, 0.0, ORIGIN)
    # curvature falls back to finite differences of finite-difference symbols
    data = G.curvature_at(fam, 0.0, ORIGIN)
    assert np.max(np.abs(data.ricci)) <= 1e-6


def test_sym_sqrt():
    assert np.array_equal(sym_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    rng = np.random.default_rng(5)
    for _ in range(25):
        a = rng.normal(size=(3, 3))
        m = a @ a.T + 0.1 * np.eye(3)
        s = sym_sqrt(m)
        assert np.linalg.norm(s @ s - m) / np.linalg.norm(m) <= 1e-12
        assert np.allclose(s, s.T)
    with pytest.raises(NonSPDError):
        sym_sqrt(np.diag([1.0, -1.0]))


def test_family_from_config(tmp_path, nrf_solution_small):
    fam = G.family_from_config({"name": "sphere", "dim": "3", "kappa": "1.0"})
    assert isinstance(fam, SphereFamily) and fam.dim == 3 and fam.flow_kappa == 1.0
    from gtbm import flow_solver
    from gtbm.errors import ConfigError

    snap = tmp_path / "s.npz"
    flow_solver.save_snapshot(nrf_solution_small, snap)
    fam2 = G.family_from_config({"name": "torus_nrf", "snapshot": str(snap)})
    assert isinstance(fam2, TorusConformalFamily)
    with pytest.raises(ConfigError):
        G.family_from_config({"name": "torus_nrf"})
    with pytest.raises(ConfigError):
        G.family_from_config({"name": "nope"})
