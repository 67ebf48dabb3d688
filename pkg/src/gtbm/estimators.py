"""Monte Carlo estimators and hypothesis tests against the PDE oracles.

Every estimator returns an EstimatorReport whose config_echo reproduces the
run bitwise; accumulation happens chunk by chunk in a fixed order.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from . import flow_solver, pde_oracle
from .errors import DegenerateSampleError
from .geometry import ChartPoint
from .interp import TWO_PI
from .sde import DEFAULT_CHUNK, SimConfig, run_chunks, simulate_batch
from .transport import evolve_damped, evolve_phi, iter_frames

SE_FLOOR = 1e-300


@dataclass
class EstimatorReport:
    """Estimate, standard error, and reproducibility provenance."""

    estimator: str
    estimate: object
    std_error: object
    n_paths: int
    diagnostics: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # name -> {column: 1d array}

    def to_dict(self):
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (bool, int, float, str)) or v is None:
                return v
            return repr(v)

        return {
            "estimator": self.estimator,
            "estimate": clean(self.estimate),
            "std_error": clean(self.std_error),
            "n_paths": self.n_paths,
            "diagnostics": clean(self.diagnostics),
            "config_echo": clean(self.config_echo),
        }


def family_echo(family):
    out = {"name": family.name, "dim": family.dim, "kappa": family.flow_kappa}
    for attr in ("size", "amplitude", "time_scale"):
        if hasattr(family, attr):
            out[attr] = float(getattr(family, attr))
    return out


def config_echo(cfg, **extra):
    out = {
        "family": family_echo(cfg.family),
        "t_horizon": cfg.t_horizon,
        "n_steps": cfg.n_steps,
        "speed": cfg.speed,
        "direction": cfg.direction,
        "master_seed": cfg.master_seed,
    }
    out.update(extra)
    return out


def mean_and_se(values, axis=0):
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    se = values.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


# ---------------------------------------------------------------------------
# Generic martingale drift test
# ---------------------------------------------------------------------------


def martingale_drift_test(checkpoint_values, checkpoint_times=None, flag_tol=1e-14):
    """Test E[M_t - M_0] = 0 at each checkpoint from per-path series.

    checkpoint_values: (n_paths, n_checkpoints) with the first column M_0.
    Residuals are normalized by the standard error; a ~zero-variance process
    is flagged degenerate instead of failing.
    """
    values = np.asarray(checkpoint_values, dtype=float)
    n_paths = values.shape[0]
    incr = values - values[:, :1]
    mean, se = mean_and_se(incr)
    spread = float(np.max(np.abs(incr)))
    degenerate = spread < flag_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(se > SE_FLOOR, mean / np.maximum(se, SE_FLOOR), 0.0)
    worst = float(np.max(np.abs(normalized[1:]))) if values.shape[1] > 1 else 0.0
    series = {
        "drift": {
            "checkpoint": np.arange(values.shape[1]),
            "mean_increment": mean,
            "std_error": se,
            "normalized": normalized,
        }
    }
    if checkpoint_times is not None:
        series["drift"]["t"] = np.asarray(checkpoint_times, dtype=float)
    return EstimatorReport(
        estimator="martingale_drift_test",
        estimate=worst,
        std_error=float(np.max(se)),
        n_paths=n_paths,
        diagnostics={
            "normalized_residuals": normalized.tolist(),
            "degenerate": bool(degenerate),
        },
        series=series,
    )


def bm_definition_drift(cfg, x0, test_functions, n_paths, n_checkpoints=5,
                        chunk_size=DEFAULT_CHUNK, workers=1):
    """Drift test of the defining local-martingale property of the process.

    test_functions: list of (f, lap_f) callables; f(coords, chart) -> (N,)
    and lap_f(metric_t, coords, chart) -> (N,) the metric Laplacian of f.
    """
    check_idx = np.unique(
        np.round(np.linspace(0, cfg.n_steps, n_checkpoints + 1)).astype(int)
    )
    dt = cfg.dt

    def chunk_stat(batch):
        out = []
        for f, lap_f in test_functions:
            running = np.zeros(batch.n_paths)
            mart = np.empty((batch.n_paths, len(check_idx)))
            pos = 0
            f0 = f(batch.coords[:, 0, :], batch.chart[:, 0])
            for k in range(cfg.n_steps + 1):
                if k == check_idx[pos]:
                    fk = f(batch.coords[:, k, :], batch.chart[:, k])
                    mart[:, pos] = fk - f0 - running
                    pos += 1
                    if pos == len(check_idx):
                        break
                m = cfg.metric_clock(batch.times[k])
                running = running + 0.5 * cfg.speed * dt * lap_f(
                    m, batch.coords[:, k, :], batch.chart[:, k]
                )
            out.append(mart)
        return out

    chunks = run_chunks(cfg, x0, n_paths, chunk_stat, chunk_size, workers)
    reports = []
    for i_fn in range(len(test_functions)):
        values = np.concatenate([c[i_fn] for c in chunks], axis=0)
        reports.append(martingale_drift_test(values, check_idx * dt))
    worst = max(r.estimate for r in reports)
    return EstimatorReport(
        estimator="bm_definition_drift",
        estimate=worst,
        std_error=max(r.std_error for r in reports),
        n_paths=n_paths,
        diagnostics={
            "per_function_max_residual": [r.estimate for r in reports],
            "checkpoints": (check_idx * dt).tolist(),
        },
        config_echo=config_echo(cfg, n_paths=n_paths),
        series={f"fn{i}": r.series["drift"] for i, r in enumerate(reports)},
    )


# ---------------------------------------------------------------------------
# Bismut gradient formula and the gradient bound
# ---------------------------------------------------------------------------


def bismut_gradient(family, f0, x0, v, T, n_paths, n_steps, master_seed=0,
                    k_weight=None, chunk_size=DEFAULT_CHUNK, workers=1):
    """Gradient of the heat solution at (T, x0) by the stochastic weight.

    f0(coords, chart) -> (N,) is the initial datum evaluated on terminal
    points of the reversed-clock process.  With v=None the full covector
    estimate is returned (one component per chart direction); with a chart
    vector v, the directional derivative df(T,.)_x v.  k_weight(s) -> (n,)
    overrides the constant weight U_0^{-1} v / T (its integral over [0, T]
    must be U_0^{-1} v for the identity to hold).
    """
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps, speed=1.0,
        direction="reversed", master_seed=master_seed,
    )
    if isinstance(x0, ChartPoint):
        start = x0
    else:
        start = ChartPoint(0, np.asarray(x0, dtype=float))
    u0 = family.inv_sqrt_metric(T, start.coords[None, :], start.chart_id)[0]
    u0_inv = np.linalg.inv(u0)
    dt = cfg.dt

    def frame_noise(batch):
        """Increments of the frame-bundle noise, dW = O^T dB per step.

        The coordinate SDE is driven by dB = O_t dW with the orthogonal
        rotation O_t = sqrt(g^{-1}) g U_t, so the stochastic weights of the
        gradient formula must un-rotate the simulated increments.
        """
        dw = np.empty_like(batch.dW)
        for k, u, _ in iter_frames(batch, gram_tol_mult=None, track_gram=False):
            if k == cfg.n_steps:
                break
            m = cfg.metric_clock(batch.times[k])
            rot = family.frame_noise_rotation(m, batch.coords[:, k, :], u)
            dw[:, k, :] = np.einsum("nji,nj->ni", rot, batch.dW[:, k, :])
        return dw

    if k_weight is not None:
        # general stochastic weight: scalar estimator E[f0 int <k, dW>]
        ks = np.stack([np.asarray(k_weight(k * dt)) for k in range(cfg.n_steps)])

        def chunk_stat(batch):
            fT = f0(batch.coords[:, -1, :], batch.chart[:, -1])
            return fT * np.einsum("kj,nkj->n", ks, frame_noise(batch))

        samples = np.concatenate(run_chunks(cfg, start, n_paths, chunk_stat,
                                            chunk_size, workers))
        m, s = mean_and_se(samples)
        return EstimatorReport(
            estimator="bismut_gradient",
            estimate=float(m),
            std_error=float(s),
            n_paths=n_paths,
            diagnostics={"weight": "custom", "frame_u0": u0.tolist()},
            config_echo=config_echo(cfg, n_paths=n_paths, T=T),
        )

    def chunk_stat(batch):
        fT = f0(batch.coords[:, -1, :], batch.chart[:, -1])
        w_term = frame_noise(batch).sum(axis=1)  # terminal frame noise W(T)
        weight = np.einsum("ij,nj->ni", u0_inv.T, w_term) / T
        return fT[:, None] * weight

    samples = np.concatenate(
        run_chunks(cfg, start, n_paths, chunk_stat, chunk_size, workers), axis=0
    )
    cov_mean, cov_se = mean_and_se(samples)

    if v is None:
        estimate, se = cov_mean.tolist(), cov_se.tolist()
    else:
        # dot the averaged covector (not per-path dots): linearity in v is
        # then exact in floating point under fixed seeds
        v = np.asarray(v, dtype=float)
        estimate = float(cov_mean @ v)
        _, s = mean_and_se(samples @ v)
        se = float(s)

    return EstimatorReport(
        estimator="bismut_gradient",
        estimate=estimate,
        std_error=se,
        n_paths=n_paths,
        diagnostics={
            "covector_estimate": cov_mean.tolist(),
            "covector_std_error": cov_se.tolist(),
            "frame_u0": u0.tolist(),
        },
        config_echo=config_echo(cfg, n_paths=n_paths, T=T),
    )


def gradient_norm_from_covector(family, T, point, cov, cov_se):
    """Metric norm of an estimated differential with a delta-method error."""
    ginv = family.metric_inv(T, point.coords[None, :], point.chart_id)[0]
    raised = ginv @ cov
    norm2 = float(cov @ raised)
    norm = math.sqrt(max(norm2, 0.0))
    if norm <= 0.0:
        return 0.0, float(np.max(cov_se))
    sens = raised / norm
    se = math.sqrt(float(np.sum((sens * cov_se) ** 2)))
    return norm, se


def gradient_bound_check(family, oracle, sample_points, T_values, n_paths, n_steps,
                         master_seed=0, chunk_size=DEFAULT_CHUNK, workers=1):
    """Check sup |grad f(T)| <= sup|f0| / sqrt(T), and its decrease in T.

    oracle is a SphereHeatSolution used for f0 values and sup|f0|; the
    gradient itself is estimated by the Bismut weight at each sample point.
    """
    sup_f0 = oracle.sup_abs()

    def f0(coords, chart):
        return oracle.value(0.0, coords, chart)

    per_t = []
    for it, T in enumerate(T_values):
        norms, ses, oracle_norms = [], [], []
        for ip, p in enumerate(sample_points):
            rep = bismut_gradient(
                family, f0, p, None, T, n_paths, n_steps,
                master_seed=master_seed + 1000 * it + ip,
                chunk_size=chunk_size, workers=workers,
            )
            cov = np.array(rep.diagnostics["covector_estimate"])
            cov_se = np.array(rep.diagnostics["covector_std_error"])
            norm, se = gradient_norm_from_covector(family, T, p, cov, cov_se)
            norms.append(norm)
            ses.append(se)
            oracle_norms.append(float(oracle.gradient_norm(T, p.coords, p.chart_id)))
        j = int(np.argmax(norms))
        per_t.append(
            {
                "T": float(T),
                "sup_estimate": norms[j],
                "sup_std_error": ses[j],
                "bound": sup_f0 / math.sqrt(T),
                "oracle_sup": max(oracle_norms),
                "norms": norms,
            }
        )

    bound_ok = all(d["sup_estimate"] <= d["bound"] + 3.0 * d["sup_std_error"] for d in per_t)
    ordered = all(
        per_t[i]["sup_estimate"] + 3.0 * (per_t[i]["sup_std_error"] + per_t[i + 1]["sup_std_error"])
        >= per_t[i + 1]["sup_estimate"]
        for i in range(len(per_t) - 1)
    )
    return EstimatorReport(
        estimator="gradient_bound_check",
        estimate=[d["sup_estimate"] for d in per_t],
        std_error=[d["sup_std_error"] for d in per_t],
        n_paths=n_paths,
        diagnostics={
            "per_time": per_t,
            "sup_f0": sup_f0,
            "bound_satisfied": bool(bound_ok),
            "monotone_decreasing": bool(ordered),
        },
        series={
            "bound": {
                "T": np.array([d["T"] for d in per_t]),
                "sup_estimate": np.array([d["sup_estimate"] for d in per_t]),
                "bound": np.array([d["bound"] for d in per_t]),
                "oracle_sup": np.array([d["oracle_sup"] for d in per_t]),
            }
        },
    )


# ---------------------------------------------------------------------------
# Time-change identities in law
# ---------------------------------------------------------------------------


@dataclass
class TimeChange:
    """Accumulated clock values tau along one family of paths."""

    tau: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau[0] != 0.0:
            raise ValueError("time change must start at 0")
        if np.any(np.diff(self.tau) <= 0.0):
            raise ValueError("time change must be strictly increasing")


def deterministic_tau(family, t):
    """Closed-form clock for constant-curvature flows, int_0^t ds / c(s)."""
    a = family.flow_kappa * (family.dim - 1)
    if family.name == "sphere":
        c0 = family.scale(0.0)  # c(s) = c0 - a s
        return math.log(c0 / (c0 - a * t)) / a if a != 0 else t / c0
    if family.name == "hyperbolic":
        # c(s) = 1 + a s
        return math.log(1.0 + a * t) / a if a != 0 else t
    raise ValueError(f"no deterministic clock for family {family.name!r}")


def _terminal_distance(family, x0):
    def fn(batch):
        return family.distance_from(x0, batch.coords[:, -1, :], batch.chart[:, -1])

    return fn


def _cigar_reference_sample(family, T, n_paths, n_steps, master_seed,
                            chunk_size, workers):
    """Distance sample of B_{tau(T)} for a fixed-metric BM B and the
    path-dependent clock dtau/ds = (q(s) + |B_tau|^2) / (1 + |B_tau|^2)."""
    two_kappa = 2.0 * family.flow_kappa
    tau_budget = (math.exp(two_kappa * T) - 1.0) / two_kappa
    base = family.static_at(0.0)
    dt = T / n_steps
    n_ref = int(math.ceil(tau_budget / dt)) + 2
    cfg_ref = SimConfig(
        family=base, t_horizon=n_ref * dt, n_steps=n_ref,
        speed=1.0, direction="forward", master_seed=master_seed,
    )
    x0 = ChartPoint(0, np.zeros(2))

    def chunk_stat(batch):
        coords = batch.coords  # (N, n_ref+1, 2)
        npaths = coords.shape[0]
        tau = np.zeros(npaths)

        def b_at(tau_now):
            pos = np.clip(tau_now / dt, 0.0, n_ref - 1e-9)
            j = np.floor(pos).astype(int)
            frac = pos - j
            flat = coords[np.arange(npaths)[:, None], np.stack([j, j + 1], axis=1), :]
            return flat[:, 0, :] * (1.0 - frac)[:, None] + flat[:, 1, :] * frac[:, None]

        def rate(s, b):
            q = math.exp(two_kappa * s)
            r2 = np.einsum("ni,ni->n", b, b)
            return (q + r2) / (1.0 + r2)

        for k in range(n_steps):
            s = k * dt
            r1 = rate(s, b_at(tau))
            tau_pred = tau + dt * r1
            r2_ = rate(s + dt, b_at(tau_pred))
            tau = tau + 0.5 * dt * (r1 + r2_)
        return base.distance_from(x0, b_at(tau))

    chunks = run_chunks(cfg_ref, x0, n_paths, chunk_stat, chunk_size, workers)
    return np.concatenate(chunks)


def time_change_law_test(family, T, n_paths, n_steps, master_seed=0,
                         chunk_size=DEFAULT_CHUNK, workers=1):
    """KS comparison of X_T under g(t) with the fixed-metric BM at tau(T).

    The compared statistic is the g(0)-geodesic distance from the start
    point (the chart origin).  Laws only; the two ensembles use independent
    noise streams.
    """
    x0 = ChartPoint(0, np.zeros(family.dim))
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=1.0, direction="forward", master_seed=master_seed,
    )
    sample_a = np.concatenate(
        run_chunks(cfg, x0, n_paths, _terminal_distance(family, x0), chunk_size, workers)
    )

    seed_b = master_seed + (1 << 21)
    if family.name == "cigar":
        tau_t = None
        sample_b = _cigar_reference_sample(
            family, T, n_paths, n_steps, seed_b, chunk_size, workers
        )
    else:
        clock = TimeChange(
            np.array([deterministic_tau(family, s)
                      for s in np.linspace(0.0, T, n_steps + 1)])
        )
        tau_t = float(clock.tau[-1])
        base = family.static_at(0.0)
        cfg_b = SimConfig(
            family=base, t_horizon=tau_t,
            n_steps=max(10, int(round(tau_t / cfg.dt))),
            speed=1.0, direction="forward", master_seed=seed_b,
        )
        sample_b = np.concatenate(
            run_chunks(cfg_b, x0, n_paths, _terminal_distance(base, x0), chunk_size, workers)
        )

    if np.ptp(sample_a) < 1e-15 or np.ptp(sample_b) < 1e-15:
        raise DegenerateSampleError("distance samples have no spread; KS undefined")
    ks = sstats.ks_2samp(sample_a, sample_b)
    return EstimatorReport(
        estimator="time_change_law_test",
        estimate=float(ks.statistic),
        std_error=float(np.std(sample_a, ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
        diagnostics={
            "p_value": float(ks.pvalue),
            "tau_T": tau_t,
            "mean_distance_flow": float(sample_a.mean()),
            "mean_distance_reference": float(sample_b.mean()),
        },
        config_echo=config_echo(cfg, n_paths=n_paths),
        series={
            "ks": {
                "flow_sorted": np.sort(sample_a),
                "reference_sorted": np.sort(sample_b),
            }
        },
    )


# ---------------------------------------------------------------------------
# Oracle cross-validation of the expectation semigroup
# ---------------------------------------------------------------------------


def heat_expectation_check(family, coeffs, x0, T, n_paths, n_steps, master_seed=0,
                           chunk_size=DEFAULT_CHUNK, workers=1):
    """E[f0(X_T)] from simulation versus the closed-form sphere oracle."""
    oracle = pde_oracle.SphereHeatSolution(family=family, coeffs=dict(coeffs))
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=1.0, direction="forward", master_seed=master_seed,
    )

    def chunk_stat(batch):
        return oracle.value(0.0, batch.coords[:, -1, :], batch.chart[:, -1])

    values = np.concatenate(run_chunks(cfg, x0, n_paths, chunk_stat, chunk_size, workers))
    mean, se = mean_and_se(values)
    expected = float(oracle.value(T, x0.coords, x0.chart_id))
    return EstimatorReport(
        estimator="heat_expectation_check",
        estimate=float(mean),
        std_error=float(se),
        n_paths=n_paths,
        diagnostics={
            "oracle_value": expected,
            "abs_error": abs(float(mean) - expected),
            "normalized_error": abs(float(mean) - expected) / max(float(se), SE_FLOOR),
        },
        config_echo=config_echo(cfg, n_paths=n_paths, coeffs=dict(coeffs)),
    )


# ---------------------------------------------------------------------------
# Intrinsic martingale and its quadratic variation
# ---------------------------------------------------------------------------


@dataclass
class IntrinsicMartingale:
    """Per-step trace of the traced-variation martingale for one path."""

    times: np.ndarray
    L: np.ndarray  # (K+1, n) in the start tangent space
    realized_qv: np.ndarray  # (K+1,)
    predicted_qv: np.ndarray  # (K+1,)


def _intrinsic_chunk(batch, g_start):
    cfg = batch.cfg
    family = cfg.family
    dt = cfg.dt
    n = family.dim
    kk = batch.n_steps
    L = np.zeros((batch.n_paths, n))
    rqv = np.zeros(batch.n_paths)
    pqv = np.zeros(batch.n_paths)
    l_trace = np.empty((batch.n_paths, kk + 1, n))
    rqv_trace = np.empty((batch.n_paths, kk + 1))
    pqv_trace = np.empty((batch.n_paths, kk + 1))
    u0 = None
    for k, u, _ in iter_frames(batch, gram_tol_mult=None, track_gram=False):
        if k == 0:
            u0 = u.copy()
        else:
            m = cfg.metric_clock(batch.times[k - 1])
            x = batch.coords[:, k - 1, :]
            sharp = family.ricci_sharp(m, x)
            mat = np.einsum(
                "nij,njk,nkl,nlm->nim", u0, np.linalg.inv(u_prev), sharp, u_prev
            )
            # frame noise dW = O^T dB with O the frame-to-coordinate rotation
            rot = family.frame_noise_rotation(m, x, u_prev)
            dw = np.einsum("nji,nj->ni", rot, batch.dW[:, k - 1, :])
            dl = np.einsum("nij,nj->ni", mat, dw)
            L = L + dl
            rqv = rqv + np.einsum("ni,ij,nj->n", dl, g_start, dl)
            pqv = pqv + dt * family.ricci_sq_trace(m, x)
        l_trace[:, k] = L
        rqv_trace[:, k] = rqv
        pqv_trace[:, k] = pqv
        u_prev = u
    return l_trace, rqv_trace, pqv_trace


def intrinsic_martingale(path_or_batch, g_start=None):
    """Per-step intrinsic martingale along one path (or a small batch)."""
    from .transport import as_batch

    batch = as_batch(path_or_batch)
    cfg = batch.cfg
    if g_start is None:
        m0 = cfg.metric_clock(0.0)
        g_start = cfg.family.metric(m0, batch.coords[0, 0, :][None, :])[0]
    l_trace, rqv, pqv = _intrinsic_chunk(batch, g_start)
    return IntrinsicMartingale(
        times=batch.times.copy(),
        L=l_trace[0],
        realized_qv=rqv[0],
        predicted_qv=pqv[0],
    )


def intrinsic_martingale_check(family, x0, T, n_paths, n_steps, master_seed=0,
                               chunk_size=DEFAULT_CHUNK, workers=1, n_record=41):
    """Batch comparison of realized vs predicted quadratic variation.

    Runs the reversed-clock process under a forward Ricci flow, accumulates
    L and its realized quadratic variation per path, and reports the mean
    realized [L, L]_T against the per-path quadrature of sum(lambda_i^2).
    """
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=1.0, direction="reversed", master_seed=master_seed,
    )
    start = x0 if isinstance(x0, ChartPoint) else ChartPoint(0, np.asarray(x0, float))
    g_start = family.metric(cfg.metric_clock(0.0), start.coords[None, :], start.chart_id)[0]
    rec = np.unique(np.round(np.linspace(0, n_steps, n_record)).astype(int))

    def chunk_stat(batch):
        l_trace, rqv, pqv = _intrinsic_chunk(batch, g_start)
        return l_trace[:, -1, :], rqv[:, rec], pqv[:, rec]

    chunks = run_chunks(cfg, start, n_paths, chunk_stat, chunk_size, workers)
    l_final = np.concatenate([c[0] for c in chunks], axis=0)
    rqv = np.concatenate([c[1] for c in chunks], axis=0)
    pqv = np.concatenate([c[2] for c in chunks], axis=0)

    l_mean, l_se = mean_and_se(l_final)
    qv_real_mean, qv_real_se = mean_and_se(rqv[:, -1])
    qv_pred_mean = float(pqv[:, -1].mean())
    rel_gap = abs(float(qv_real_mean) - qv_pred_mean) / qv_pred_mean if qv_pred_mean else 0.0
    norm_resid = float(
        np.max(np.abs(l_mean) / np.maximum(l_se, SE_FLOOR))
    ) if n_paths > 1 else 0.0
    return EstimatorReport(
        estimator="intrinsic_martingale_check",
        estimate=float(qv_real_mean),
        std_error=float(qv_real_se),
        n_paths=n_paths,
        diagnostics={
            "predicted_qv": qv_pred_mean,
            "relative_qv_gap": rel_gap,
            "mean_L": l_mean.tolist(),
            "se_L": l_se.tolist(),
            "max_normalized_L": norm_resid,
        },
        config_echo=config_echo(cfg, n_paths=n_paths),
        series={
            "qv": {
                "t": rec * cfg.dt,
                "realized_qv": rqv.mean(axis=0),
                "predicted_qv": pqv.mean(axis=0),
            }
        },
    )


# ---------------------------------------------------------------------------
# Conjugate heat equation versus the simulated law
# ---------------------------------------------------------------------------


def conjugate_heat_consistency(family, x0, T, n_paths, grid_n=32, n_steps=200,
                               master_seed=0, mollifier_width=None,
                               chunk_size=DEFAULT_CHUNK, workers=1, sigma=1.0):
    """L1 distance between the simulated law of X_T and the density solve.

    Paths start from the same wrapped-Gaussian mollifier the PDE uses, so
    the two laws agree up to discretization and Monte Carlo noise.
    """
    x0 = np.asarray(x0, dtype=float)
    pde = pde_oracle.conjugate_solve_torus(
        family, x0, T, mollifier_width=mollifier_width, grid_n=grid_n, sigma=sigma
    )
    width = pde.mollifier_width
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=sigma, direction="forward", master_seed=master_seed,
    )

    def init_sampler(gen):
        return x0 + width * gen.normal(size=2)

    h = TWO_PI / grid_n

    def chunk_counts(batch):
        xt = np.mod(batch.coords[:, -1, :], TWO_PI)
        idx = np.mod(np.round(xt / h).astype(int), grid_n)
        flat = idx[:, 0] * grid_n + idx[:, 1]
        return np.bincount(flat, minlength=grid_n * grid_n)

    counts = sum(
        run_chunks(cfg, ChartPoint(0, x0), n_paths, chunk_counts, chunk_size,
                   workers, init_sampler=init_sampler)
    )
    p_mc = counts.reshape(grid_n, grid_n) / n_paths
    p_pde = pde.values[-1] * pde.weights[-1]
    l1 = float(np.sum(np.abs(p_mc - p_pde)))
    mass_drift = float(np.max(np.abs(pde.masses - 1.0)))
    return EstimatorReport(
        estimator="conjugate_heat_consistency",
        estimate=l1,
        std_error=float(math.sqrt(max(np.sum(p_pde * (1 - p_pde)), 0.0) / n_paths)),
        n_paths=n_paths,
        diagnostics={
            "mass_drift": mass_drift,
            "initial_mass": float(pde.masses[0]),
            "min_density": pde.min_density,
            "clipped": pde.clipped,
            "mollifier_width": width,
            "underfilled": bool(n_paths < 10 * grid_n * grid_n),
        },
        config_echo=config_echo(cfg, n_paths=n_paths, grid_n=grid_n),
        series={
            "density": {
                "cell": np.arange(grid_n * grid_n),
                "mc_probability": p_mc.ravel(),
                "pde_probability": p_pde.ravel(),
            }
        },
    )


# ---------------------------------------------------------------------------
# Surface-flow estimators (reaction transports)
# ---------------------------------------------------------------------------


def phi_drift_test(family, x0, T, v, n_paths, n_steps, master_seed=0,
                   n_checkpoints=5, chunk_size=DEFAULT_CHUNK, workers=1):
    """Martingale test of dR(T-t, .)(phi_t v) on the surface flow (speed 2)."""
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=2.0, direction="reversed", master_seed=master_seed,
    )
    start = x0 if isinstance(x0, ChartPoint) else ChartPoint(0, np.asarray(x0, float))
    v = np.asarray(v, dtype=float)
    rec = np.unique(np.round(np.linspace(0, n_steps, n_checkpoints + 1)).astype(int))

    def chunk_stat(batch):
        phi = evolve_phi(batch, r_avg=0.0, record_at=rec, gram_tol_mult=None,
                         track_gram=False)
        mart = np.empty((batch.n_paths, len(rec)))
        for j, k in enumerate(rec):
            m = cfg.metric_clock(batch.times[k])
            dr = family.scalar_partials(m, batch.coords[:, k, :])
            phiv = np.einsum("nij,j->ni", phi.composed[:, j], v)
            mart[:, j] = np.einsum("ni,ni->n", dr, phiv)
        return mart

    values = np.concatenate(
        run_chunks(cfg, start, n_paths, chunk_stat, chunk_size, workers), axis=0
    )
    rep = martingale_drift_test(values, rec * cfg.dt)
    rep.estimator = "phi_drift_test"
    rep.config_echo = config_echo(cfg, n_paths=n_paths)
    return rep


def phi_norm_identity_check(family, x0, T, v, n_paths, n_steps, master_seed=0,
                            chunk_size=DEFAULT_CHUNK, workers=1):
    """Per-path identity |phi_T v|_0^2 = |v|_T^2 e^{-3rT} e^{int 4R ds} (r=0)."""
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=2.0, direction="reversed", master_seed=master_seed,
    )
    start = x0 if isinstance(x0, ChartPoint) else ChartPoint(0, np.asarray(x0, float))
    v = np.asarray(v, dtype=float)
    g_t = family.metric(T, start.coords[None, :])[0]
    v_t2 = float(v @ g_t @ v)

    def chunk_stat(batch):
        phi = evolve_phi(batch, r_avg=0.0, record_at=np.array([cfg.n_steps]),
                         gram_tol_mult=None, track_gram=False)
        phiv = np.einsum("nij,j->ni", phi.composed[:, 0], v)
        g0 = family.metric(0.0, batch.coords[:, -1, :])
        lhs = np.einsum("ni,nij,nj->n", phiv, g0, phiv)
        rhs = v_t2 * np.exp(4.0 * phi.int_scalar)
        return np.abs(lhs / rhs - 1.0)

    rel = np.concatenate(run_chunks(cfg, start, n_paths, chunk_stat, chunk_size, workers))
    return EstimatorReport(
        estimator="phi_norm_identity_check",
        estimate=float(np.max(rel)),
        std_error=float(np.std(rel, ddof=1) / math.sqrt(len(rel))) if len(rel) > 1 else 0.0,
        n_paths=n_paths,
        diagnostics={"mean_relative_defect": float(np.mean(rel))},
        config_echo=config_echo(cfg, n_paths=n_paths),
    )


def scalar_gradient_estimate_check(sol, x0, T, n_paths, n_steps, master_seed=0,
                                   chunk_size=DEFAULT_CHUNK, workers=1):
    """One-sided gradient estimate for the scalar curvature under the flow.

    |grad R(T, x)|_T <= sup |grad R(0, .)|_0 * E[exp(int_0^T 2 R(T-s, X_s) ds)]
    with the average curvature r = 0 on the torus.
    """
    from .geometry import TorusConformalFamily

    family = TorusConformalFamily(sol, kappa=2.0)
    x0 = np.asarray(x0, dtype=float)

    grad = flow_solver.scalar_curvature_gradient(sol, T, x0[None, :])[0]
    itp = flow_solver.build_interpolator(sol)
    eu = math.exp(float(itp.sample("u", T, x0[None, :])[0]))
    lhs = math.sqrt(eu * float(grad @ grad))

    from .interp import spectral_gradient

    rx0, ry0 = spectral_gradient(sol.R[0])
    sup0 = float(np.max(np.exp(-0.5 * sol.u[0]) * np.hypot(rx0, ry0)))

    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=2.0, direction="reversed", master_seed=master_seed,
    )
    dt = cfg.dt

    def chunk_stat(batch):
        acc = np.zeros(batch.n_paths)
        r_prev = family.scalar(cfg.metric_clock(0.0), batch.coords[:, 0, :])
        for k in range(1, cfg.n_steps + 1):
            r_here = family.scalar(cfg.metric_clock(batch.times[k]), batch.coords[:, k, :])
            acc = acc + 0.5 * dt * (r_prev + r_here)
            r_prev = r_here
        return np.exp(2.0 * acc)

    weights = np.concatenate(
        run_chunks(cfg, ChartPoint(0, x0), n_paths, chunk_stat, chunk_size, workers)
    )
    mean_w, se_w = mean_and_se(weights)
    rhs = sup0 * float(mean_w)
    return EstimatorReport(
        estimator="scalar_gradient_estimate_check",
        estimate=rhs - lhs,
        std_error=sup0 * float(se_w),
        n_paths=n_paths,
        diagnostics={
            "lhs_gradient_norm": lhs,
            "rhs_bound": rhs,
            "sup_initial_gradient": sup0,
            "mc_exponential_weight": float(mean_w),
            "slack_nonnegative": bool(rhs - lhs >= 0.0),
        },
        config_echo=config_echo(cfg, n_paths=n_paths),
    )


# ---------------------------------------------------------------------------
# Damped-transport drift test (heat solutions under any flow)
# ---------------------------------------------------------------------------


def damped_drift_test(family, oracle, x0, T, v, n_paths, n_steps, master_seed=0,
                      n_checkpoints=5, chunk_size=DEFAULT_CHUNK, workers=1):
    """Martingale test of df(T-t, .)(W_t v) for an oracle heat solution."""
    cfg = SimConfig(
        family=family, t_horizon=T, n_steps=n_steps,
        speed=1.0, direction="reversed", master_seed=master_seed,
    )
    start = x0 if isinstance(x0, ChartPoint) else ChartPoint(0, np.asarray(x0, float))
    v = np.asarray(v, dtype=float)
    rec = np.unique(np.round(np.linspace(0, n_steps, n_checkpoints + 1)).astype(int))

    def chunk_stat(batch):
        res = evolve_damped(batch, record_at=rec, gram_tol_mult=None, track_gram=False)
        mart = np.empty((batch.n_paths, len(rec)))
        for j, k in enumerate(rec):
            m = cfg.metric_clock(batch.times[k])
            dp = oracle.chart_partials(m, batch.coords[:, k, :], batch.chart[:, k])
            wv = np.einsum("nij,j->ni", res.composed[:, j], v)
            mart[:, j] = np.einsum("ni,ni->n", dp, wv)
        return mart

    values = np.concatenate(
        run_chunks(cfg, start, n_paths, chunk_stat, chunk_size, workers), axis=0
    )
    rep = martingale_drift_test(values, rec * cfg.dt)
    rep.estimator = "damped_drift_test"
    rep.config_echo = config_echo(cfg, n_paths=n_paths)
    return rep
