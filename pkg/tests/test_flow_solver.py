import numpy as np
import pytest

from gtbm import flow_solver as FS
from gtbm.errors import ResolutionError, SnapshotFormatError, StabilityError
from gtbm.interp import TWO_PI, TimeGridInterpolator, grid_points


def test_flat_fixed_point():
    sol = FS.solve_nrf(np.zeros((16, 16)), t_end=0.2, n_store=5)
    assert np.max(np.abs(sol.u)) == 0.0
    assert np.max(np.abs(sol.R)) <= 1e-12


def test_linearized_single_mode_decay():
    amp = 0.05
    sol = FS.solve_nrf(FS.single_mode(32, amp), t_end=1.0, dt=1e-3, n_store=11)
    expected = FS.single_mode(32, amp * np.exp(-1.0))
    rel = np.max(np.abs(sol.u[-1] - expected)) / (amp * np.exp(-1.0))
    assert rel <= 0.05


def test_average_curvature_vanishes():
    sol = FS.solve_nrf(FS.single_mode(32, 0.3), t_end=0.3, dt=5e-4, n_store=11)
    assert np.max(np.abs(sol.r_avg)) <= 1e-8


def test_volume_preservation_and_decay():
    sol = FS.solve_nrf(FS.single_mode(32, 0.3, 2, 1), t_end=0.5, dt=5e-4, n_store=21)
    vols = np.array([sol.volume(i) for i in range(len(sol.times))])
    assert np.max(np.abs(vols / vols[0] - 1.0)) <= 1e-6
    maxu = np.max(np.abs(sol.u), axis=(1, 2))
    # non-increasing after a 5% transient allowance
    start = max(1, int(0.05 * len(maxu)))
    assert np.all(np.diff(maxu[start:]) <= 1e-12)


def test_scalar_curvature_gradient():
    flat = FS.solve_nrf(np.zeros((16, 16)), t_end=0.1, n_store=5)
    pts = np.array([[1.0, 2.0], [4.0, 0.5]])
    assert np.max(np.abs(FS.scalar_curvature_gradient(flat, 0.05, pts))) <= 1e-12

    sol = FS.solve_nrf(FS.single_mode(48, 0.2, 1, 0), t_end=0.2, dt=5e-4, n_store=21)
    # mode along x only: gradient aligned with the x axis
    grad = FS.scalar_curvature_gradient(sol, 0.1, np.array([[1.3, 0.7]]))[0]
    assert abs(grad[1]) <= 1e-10 * max(1.0, abs(grad[0]))

    # finite-difference cross-check of the raised gradient
    itp = FS.build_interpolator(sol)
    h = 1e-4
    p = np.array([[2.1, 0.4]])
    grad_p = FS.scalar_curvature_gradient(sol, 0.1, p)[0]
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        fd = (itp.sample("R", 0.1, p + e) - itp.sample("R", 0.1, p - e)) / (2 * h)
        raised = float((np.exp(-itp.sample("u", 0.1, p)) * fd)[0])
        assert abs(raised - grad_p[axis]) / max(abs(raised), 1e-12) <= 1e-4


def test_curvature_equation_residual():
    sol = FS.solve_nrf(FS.single_mode(64, 0.2), t_end=0.05, dt=1e-4, n_store=11)
    res = max(FS.scalar_curvature_residual(sol, i) for i in range(1, len(sol.times) - 1))
    assert res <= 1e-3


def test_spectral_accuracy_under_grid_doubling():
    # tiny amplitude keeps the nonlinear correction below the time error;
    # the default dt scales with dx^2 so refinement shrinks both together
    amp = 1e-5
    errs = []
    for n in (8, 16, 32):
        sol = FS.solve_nrf(FS.single_mode(n, amp), t_end=0.5, n_store=3)
        k1 = np.real(np.fft.fft2(sol.u[-1])[1, 0]) * 2.0 / n**2
        errs.append(abs(k1 - amp * np.exp(-0.5)))
    assert errs[0] / max(errs[1], 1e-16) >= 4.0
    assert errs[1] / max(errs[2], 1e-16) >= 4.0


def test_time_interpolation_reproduces_skipped_sample():
    sol = FS.solve_nrf(FS.single_mode(32, 0.2), t_end=0.2, dt=5e-4, n_store=21)
    skip = 10
    keep = [i for i in range(len(sol.times)) if i != skip]
    itp = TimeGridInterpolator(sol.times[keep], {"u": sol.u[keep]})
    g = grid_points(32)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1).reshape(-1, 2)
    rebuilt = itp.sample("u", sol.times[skip], pts).reshape(32, 32)
    assert np.max(np.abs(rebuilt - sol.u[skip])) <= 1e-6


def test_snapshot_roundtrip_and_errors(tmp_path):
    sol = FS.solve_nrf(FS.single_mode(16, 0.1), t_end=0.1, n_store=5)
    path = tmp_path / "snap.npz"
    FS.save_snapshot(sol, path)
    back = FS.load_snapshot(path)
    for field in ("times", "u", "R", "r_avg"):
        assert np.array_equal(getattr(sol, field), getattr(back, field))
    assert back.grid_n == sol.grid_n

    truncated = tmp_path / "broken.npz"
    truncated.write_bytes(path.read_bytes()[:100])
    with pytest.raises(SnapshotFormatError):
        FS.load_snapshot(truncated)
    with pytest.raises(SnapshotFormatError):
        FS.load_snapshot(tmp_path / "missing.npz")


def test_snapshot_family_metric_matches(tmp_path, nrf_solution_small):
    from gtbm.geometry import TorusConformalFamily

    path = tmp_path / "snap.npz"
    FS.save_snapshot(nrf_solution_small, path)
    fam = TorusConformalFamily(FS.load_snapshot(path), kappa=2.0)
    g = grid_points(nrf_solution_small.grid_n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    i = 7
    t = nrf_solution_small.times[i]
    metric = fam.metric(t, pts)
    expected = np.exp(nrf_solution_small.u[i])
    assert np.max(np.abs(metric[..., 0, 0] - expected)) <= 1e-6
    assert np.max(np.abs(metric[..., 0, 1])) == 0.0


def test_solver_guards():
    with pytest.raises(ResolutionError):
        FS.solve_nrf(np.zeros((4, 4)), t_end=0.1)
    with pytest.raises(StabilityError):
        FS.solve_nrf(np.zeros((16, 16)), t_end=0.1, dt=1.0)
    with pytest.raises(ResolutionError):
        FS.solve_nrf(np.zeros((16, 8)), t_end=0.1)
