import numpy as np
import pytest

from gtbm import estimators as est
from gtbm import pde_oracle
from gtbm.errors import PathExitError
from gtbm.geometry import ChartPoint, EuclideanFamily, HyperbolicFamily, SphereFamily
from gtbm.sde import (
    NoiseStream,
    SimConfig,
    em_step,
    metric_clock,
    path_to_csv,
    run_chunks,
    scaling_check,
    simulate_batch,
    simulate_path,
    sym_sqrt,
)

FLAT = EuclideanFamily(2)
ORIGIN = ChartPoint(0, np.zeros(2))


def flat_cfg(**kw):
    base = dict(family=FLAT, t_horizon=1.0, n_steps=50, master_seed=7)
    base.update(kw)
    return SimConfig(**base)


def test_metric_clock():
    fwd = flat_cfg(direction="forward")
    rev = flat_cfg(direction="reversed")
    assert metric_clock(fwd, 0.2) == 0.2
    assert metric_clock(rev, 0.2) == 0.8
    assert metric_clock(rev, 1.0) == 0.0
    with pytest.raises(ValueError):
        metric_clock(fwd, 1.5)


def test_config_validation():
    with pytest.raises(ValueError):
        flat_cfg(n_steps=5)
    with pytest.raises(ValueError):
        flat_cfg(speed=0.0)
    with pytest.raises(ValueError):
        flat_cfg(direction="sideways")
    from gtbm.errors import TimeRangeError

    with pytest.raises(TimeRangeError):
        SimConfig(SphereFamily(dim=2, kappa=2.0), t_horizon=0.49, n_steps=10)


def test_sym_sqrt_reexport():
    assert np.allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_noise_stream_determinism():
    a = NoiseStream(5, 17).gaussian_increments(10, 2, 0.1)
    b = NoiseStream(5, 17).gaussian_increments(10, 2, 0.1)
    c = NoiseStream(5, 18).gaussian_increments(10, 2, 0.1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_em_step_flat_is_translation():
    cfg = flat_cfg()
    dw = np.array([0.3, -0.1])
    p = em_step(cfg, 0.0, ChartPoint(0, np.array([1.0, 2.0])), dw)
    assert np.array_equal(p.coords, np.array([1.0, 2.0]) + dw)


def test_em_step_sphere_origin_diffusion_scale():
    fam = SphereFamily(dim=2, kappa=2.0)
    t = 0.1
    cfg = SimConfig(fam, t_horizon=0.2, n_steps=10, master_seed=0)
    dw = np.array([0.01, -0.02])
    p = em_step(cfg, t, ORIGIN, dw)
    # no drift at the chart origin; diffusion scaled by (1-2t)^{-1/2} / 2
    scale = 1.0 / (2.0 * np.sqrt(1.0 - 2.0 * t))
    assert np.allclose(p.coords, scale * dw, rtol=1e-13)


def test_em_step_zero_noise_fixed_point():
    fam = SphereFamily(dim=2, kappa=2.0)
    cfg = SimConfig(fam, t_horizon=0.2, n_steps=10, master_seed=0)
    p = em_step(cfg, 0.05, ORIGIN, np.zeros(2))
    assert np.array_equal(p.coords, np.zeros(2))


def test_flat_terminal_moment():
    cfg = flat_cfg(n_steps=50)
    batch = simulate_batch(cfg, ORIGIN, np.arange(10000))
    d2 = np.sum(batch.coords[:, -1, :] ** 2, axis=1)
    se = d2.std(ddof=1) / np.sqrt(len(d2))
    assert abs(d2.mean() - 2.0 * cfg.t_horizon) <= 3.0 * se
    # flat path is exactly the running sum of increments
    assert np.max(np.abs(batch.coords[:, -1, :] - batch.dW.sum(axis=1))) == 0.0


def test_martingale_property_flat():
    cfg = flat_cfg(n_steps=40, t_horizon=0.8)
    fns = [
        (
            lambda coords, chart: np.cos(coords[:, 0]),
            lambda m, coords, chart: -np.cos(coords[:, 0]),
        )
    ]
    rep = est.bm_definition_drift(cfg, ORIGIN, fns, n_paths=10000)
    assert rep.estimate <= 3.0


def test_bitwise_determinism_and_extraction():
    cfg = flat_cfg()
    b1 = simulate_batch(cfg, ORIGIN, np.arange(64))
    b2 = simulate_batch(cfg, ORIGIN, np.arange(64))
    assert np.array_equal(b1.coords, b2.coords)
    assert np.array_equal(b1.dW, b2.dW)
    single = simulate_path(cfg, ORIGIN, 7)
    assert np.array_equal(single.dW, b1.dW[7])
    assert np.array_equal(single.points[-1].coords, b1.coords[7, -1])
    # chunked runs agree with one-shot runs path by path
    parts = run_chunks(cfg, ORIGIN, 64, lambda b: b.coords[:, -1, :], chunk_size=17)
    assert np.array_equal(np.concatenate(parts), b1.coords[:, -1, :])
    parts_mt = run_chunks(
        cfg, ORIGIN, 64, lambda b: b.coords[:, -1, :], chunk_size=17, workers=4
    )
    assert np.array_equal(np.concatenate(parts_mt), b1.coords[:, -1, :])


def test_reversed_static_clock_matches_forward():
    cfg_f = flat_cfg(direction="forward")
    cfg_r = flat_cfg(direction="reversed")
    bf = simulate_batch(cfg_f, ORIGIN, np.arange(32))
    br = simulate_batch(cfg_r, ORIGIN, np.arange(32))
    assert np.array_equal(bf.coords, br.coords)


def test_chart_switching_and_independence():
    # same seeds, different switch thresholds: the law is unchanged
    x0 = ChartPoint(0, np.array([1.2, 0.0]))
    stats = []
    for radius in (1.5, 2.0):
        fam = SphereFamily(dim=2, kappa=2.0, switch_radius=radius)
        cfg = SimConfig(fam, t_horizon=0.2, n_steps=200, master_seed=99)
        b = simulate_batch(cfg, x0, np.arange(4000))
        if radius == 1.5:
            assert b.switched.sum() > 0  # the trigger actually fires
        d = fam.distance_from(x0, b.coords[:, -1, :], b.chart[:, -1])
        stats.append((d.mean(), d.std(ddof=1) / np.sqrt(len(d))))
    (m1, s1), (m2, s2) = stats
    assert abs(m1 - m2) <= 3.0 * np.hypot(s1, s2)


def test_path_sample_replay_and_events():
    fam = SphereFamily(dim=2, kappa=2.0)
    cfg = SimConfig(fam, t_horizon=0.2, n_steps=200, master_seed=41)
    x0 = ChartPoint(0, np.array([1.4, 0.2]))
    batch = simulate_batch(cfg, x0, np.arange(200))
    switched_path = int(np.argmax(batch.switched.any(axis=1)))
    assert batch.switched[switched_path].any()
    ps = batch.path(switched_path)
    assert ps.chart_events, "expected at least one chart event"
    step, old, new, jac = ps.chart_events[0]
    assert old != new and jac.shape == (2, 2)
    assert ps.points[step].chart_id == new


def test_hard_exit_aborts():
    fam = EuclideanFamily(2)  # non-periodic plane, hard radius 10
    cfg = SimConfig(fam, t_horizon=1.0, n_steps=10, master_seed=1)
    with pytest.raises(PathExitError):
        em_step(cfg, 0.0, ChartPoint(0, np.array([9.99, 0.0])), np.array([0.5, 0.0]))


def test_hyperbolic_stays_in_ball():
    fam = HyperbolicFamily(dim=2, kappa=2.0)
    cfg = SimConfig(fam, t_horizon=0.5, n_steps=100, master_seed=3)
    b = simulate_batch(cfg, ORIGIN, np.arange(2000))
    assert np.max(np.linalg.norm(b.coords, axis=-1)) < 1.0


def test_scaling_check_trivial_and_flat():
    cfg = flat_cfg(n_steps=50)
    rep = scaling_check(cfg, 1.0, ORIGIN, n_paths=1000, independent_seeds=False)
    assert rep["ks_statistic"] == 0.0 and rep["p_value"] == 1.0
    rep2 = scaling_check(cfg, 2.0, ORIGIN, n_paths=4000)
    assert rep2["p_value"] > 0.01


def test_path_csv_schema(tmp_path):
    cfg = flat_cfg(n_steps=12)
    ps = simulate_path(cfg, ORIGIN, 0)
    out = tmp_path / "path.csv"
    path_to_csv(ps, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "step,s,metric_t,chart,x1,x2,dW1,dW2"
    assert len(lines) == 14  # header + 13 rows


def test_weak_error_decreases_with_dt():
    # order-one weak error, measured where the bias clears Monte Carlo noise
    fam = SphereFamily(dim=2, kappa=2.0)
    oracle = pde_oracle.SphereHeatSolution(family=fam, coeffs={"xy": 1.0, "x2-y2": 0.5})
    x0 = ChartPoint(0, np.array([0.8, 0.4]))
    t_end = 0.22
    truth = float(oracle.value(t_end, x0.coords, 0))
    errs, ses = [], []
    for n_steps in (11, 22, 44):
        cfg = SimConfig(fam, t_horizon=t_end, n_steps=n_steps, master_seed=7)
        vals = np.concatenate(
            run_chunks(
                cfg,
                x0,
                200000,
                lambda b: oracle.value(0.0, b.coords[:, -1, :], b.chart[:, -1]),
                50000,
            )
        )
        errs.append(abs(vals.mean() - truth))
        ses.append(vals.std(ddof=1) / np.sqrt(len(vals)))
    assert errs[0] > 5.0 * ses[0]  # the coarse bias is resolved
    assert errs[0] / errs[2] >= 2.0  # decreases roughly linearly in dt
    assert errs[0] > errs[1] - 1.5 * ses[1]
