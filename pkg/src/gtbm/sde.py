"""Brownian motion for a time-dependent metric, in local coordinates.

The coordinate SDE for a process with generator (speed/2) * Lap_{g(m(s))} is

    dX^i = sqrt(speed) * sqrt(g^{-1})_{ij} dW^j - (speed/2) g^{kl} Gamma^i_{kl} ds,

all coefficients evaluated at metric time m(s): m(s) = s on the forward
clock, m(s) = T - s on the reversed clock used by the transport/gradient
machinery.  Paths are driven by counter-based Philox streams keyed by
(master_seed, path_index), so any path is reproducible in isolation and
batches are independent of scheduling.
"""

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import geometry
from .errors import DomainError, PathExitError
from .geometry import ChartPoint, ConformalFamily, sym_sqrt  # noqa: F401 (re-export)

DEFAULT_CHUNK = 20_000


@dataclass
class SimConfig:
    """Simulation parameters for one ensemble of paths."""

    family: geometry.MetricFamily
    t_horizon: float
    n_steps: int
    speed: float = 1.0
    direction: str = "forward"  # or "reversed"
    master_seed: int = 0

    def __post_init__(self):
        if self.direction not in ("forward", "reversed"):
            raise ValueError(f"unknown time direction {self.direction!r}")
        if self.n_steps < 10:
            raise ValueError("n_steps must be >= 10")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")
        # both clock directions sweep metric times in [0, t_horizon]
        self.family.check_time(0.0)
        self.family.check_time(self.t_horizon)

    @property
    def dt(self):
        return self.t_horizon / self.n_steps

    @property
    def clock_rate(self):
        return 1.0 if self.direction == "forward" else -1.0

    def metric_clock(self, s):
        return s if self.direction == "forward" else self.t_horizon - s


def metric_clock(cfg, s):
    """Metric time attached to simulation time s."""
    if s < -1e-12 or s > cfg.t_horizon + 1e-12:
        raise ValueError(f"simulation time {s} outside [0, {cfg.t_horizon}]")
    return cfg.metric_clock(s)


class NoiseStream:
    """Gaussian increments for one path, Philox-keyed by (seed, path index)."""

    def __init__(self, master_seed, path_index):
        mask = (1 << 64) - 1
        key = np.array([master_seed & mask, path_index & mask], dtype=np.uint64)
        self.master_seed = master_seed
        self.path_index = path_index
        self._key = key

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self._key))

    def gaussian_increments(self, n_steps, dim, dt):
        return self.generator().normal(0.0, np.sqrt(dt), size=(n_steps, dim))


@dataclass
class PathSample:
    """One discretized path with its driving noise and chart bookkeeping."""

    times: np.ndarray  # (K+1,)
    points: list  # K+1 ChartPoints
    dW: np.ndarray  # (K, n) raw Brownian increments
    chart_events: list  # (step, old_chart, new_chart, jacobian)
    config: SimConfig
    path_index: int


class BatchPaths:
    """Vectorized ensemble of paths sharing one clock grid."""

    def __init__(self, cfg, path_indices, times, coords, chart, dW, switched):
        self.cfg = cfg
        self.path_indices = path_indices
        self.times = times  # (K+1,)
        self.coords = coords  # (N, K+1, n)
        self.chart = chart  # (N, K+1) int8
        self.dW = dW  # (N, K, n)
        self.switched = switched  # (N, K+1) bool

    @property
    def n_paths(self):
        return self.coords.shape[0]

    @property
    def n_steps(self):
        return self.dW.shape[1]

    def metric_times(self):
        return np.array([self.cfg.metric_clock(s) for s in self.times])

    def pre_switch_coords(self, k):
        """Arrival coords at step k in the departure chart of step k-1.

        The stereographic transition is an involution, so un-switching is
        the transition applied again.
        """
        x = self.coords[:, k, :].copy()
        sw = self.switched[:, k]
        if np.any(sw):
            y, _, _ = self.cfg.family.transition(x[sw], 0)
            x[sw] = y
        return x

    def switch_jacobians(self, k):
        """Transition Jacobians for paths that switched at step k (else None)."""
        sw = self.switched[:, k]
        if not np.any(sw):
            return sw, None
        x_pre = self.pre_switch_coords(k)[sw]
        _, _, jac = self.cfg.family.transition(x_pre, 0)
        return sw, jac

    def path(self, i):
        """Extract one PathSample (replayable record) from the batch."""
        events = []
        n = self.cfg.family.dim
        points = []
        for k in range(self.n_steps + 1):
            points.append(ChartPoint(int(self.chart[i, k]), self.coords[i, k].copy()))
            if self.switched[i, k]:
                x_pre = self.pre_switch_coords(k)[i]
                _, _, jac = self.cfg.family.transition(x_pre[None, :], 0)
                events.append(
                    (k, int(self.chart[i, k - 1]), int(self.chart[i, k]), jac[0])
                )
        return PathSample(
            times=self.times.copy(),
            points=points,
            dW=self.dW[i].copy(),
            chart_events=events,
            config=self.cfg,
            path_index=int(self.path_indices[i]),
        )


def _step_coords(cfg, s, x, chart_vec, dw):
    """One Euler-Maruyama update for a block of paths; no chart handling."""
    family = cfg.family
    m = cfg.metric_clock(s)
    family.check_time(m)
    sqrt_inv = family.inv_sqrt_metric(m, x)
    drift = family.bm_drift(m, x)
    dt = cfg.dt
    return (
        x
        + np.sqrt(cfg.speed) * np.einsum("...ij,...j->...i", sqrt_inv, dw)
        + cfg.speed * drift * dt
    )


def simulate_batch(cfg, x0, path_indices, init_sampler=None):
    """Simulate paths for the given indices; deterministic per index.

    init_sampler(generator) -> (n,) coords, when given, draws a randomized
    start from the head of each path's own noise stream (so the start and
    the increments stay a single replayable record).
    """
    family = cfg.family
    if isinstance(x0, ChartPoint):
        family.check_point(x0)
        start_coords, start_chart = x0.coords, x0.chart_id
    else:
        start_coords, start_chart = np.asarray(x0, dtype=float), 0
    path_indices = np.asarray(path_indices, dtype=np.int64)
    n_paths = len(path_indices)
    n = family.dim
    kk = cfg.n_steps
    dt = cfg.dt

    coords = np.empty((n_paths, kk + 1, n))
    dW = np.empty((n_paths, kk, n))
    for j, idx in enumerate(path_indices):
        gen = NoiseStream(cfg.master_seed, int(idx)).generator()
        if init_sampler is not None:
            coords[j, 0, :] = init_sampler(gen)
        else:
            coords[j, 0, :] = start_coords
        dW[j] = gen.normal(0.0, np.sqrt(dt), size=(kk, n))

    chart = np.zeros((n_paths, kk + 1), dtype=np.int8)
    switched = np.zeros((n_paths, kk + 1), dtype=bool)
    chart[:, 0] = start_chart

    x = coords[:, 0, :].copy()
    ch = chart[:, 0].copy()
    for k in range(kk):
        s = k * dt
        x = _step_coords(cfg, s, x, ch, dW[:, k, :])
        ok = family.chart_valid_mask(x, 0)
        if not np.all(ok):
            bad = int(path_indices[np.argmin(ok)])
            raise PathExitError(
                f"path {bad} left the chart validity region at step {k + 1}",
                step=k + 1,
            )
        sw = family.switch_mask(x, ch)
        if np.any(sw):
            y, _, _ = family.transition(x[sw], 0)
            x = x.copy()
            x[sw] = y
            ch = ch.copy()
            ch[sw] = 1 - ch[sw]
        coords[:, k + 1, :] = x
        chart[:, k + 1] = ch
        switched[:, k + 1] = sw

    times = dt * np.arange(kk + 1)
    return BatchPaths(cfg, path_indices, times, coords, chart, dW, switched)


def simulate_path(cfg, x0, path_index=0):
    """Single replayable path; identical to the same index inside any batch."""
    return simulate_batch(cfg, x0, [path_index]).path(0)


def em_step(cfg, s, p, dw):
    """One stepper update of a single ChartPoint (chart switch included)."""
    cfg.family.check_point(p)
    x = _step_coords(cfg, s, p.coords[None, :], np.array([p.chart_id]), np.asarray(dw)[None, :])
    x = x[0]
    if not np.all(cfg.family.chart_valid_mask(x, p.chart_id)):
        raise PathExitError("step left the chart validity region", step=None)
    chart_id = p.chart_id
    if np.any(cfg.family.switch_mask(x[None, :], np.array([chart_id]))):
        y, _, _ = cfg.family.transition(x[None, :], chart_id)
        x = y[0]
        chart_id = 1 - chart_id
    return ChartPoint(chart_id, x)


def run_chunks(
    cfg,
    x0,
    n_paths,
    fn,
    chunk_size=DEFAULT_CHUNK,
    workers=1,
    start_index=0,
    init_sampler=None,
):
    """Map fn(BatchPaths) -> result over path chunks, in deterministic order.

    Paths are keyed by absolute index, so results do not depend on the
    chunking or on worker scheduling.
    """
    starts = list(range(0, n_paths, chunk_size))
    jobs = [
        np.arange(start_index + a, start_index + min(a + chunk_size, n_paths))
        for a in starts
    ]

    def work(idx):
        return fn(simulate_batch(cfg, x0, idx, init_sampler=init_sampler))

    if workers <= 1 or len(jobs) == 1:
        return [work(idx) for idx in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [f.result() for f in [pool.submit(work, idx) for idx in jobs]]


class BlowUpFamily(ConformalFamily):
    """The parabolic rescaling c * g(t/c) of a conformal base family."""

    def __init__(self, base, c):
        if c <= 0:
            raise ValueError("scaling factor must be positive")
        self.base = base
        self.c = float(c)
        self.dim = base.dim
        self.n_charts = base.n_charts
        self.flow_kappa = base.flow_kappa
        self.t_max = base.t_max * self.c
        self.degenerate_lifetime = base.degenerate_lifetime
        self.name = f"{base.name}-blowup"

    def conf_u(self, t, x, chart=0):
        return self.base.conf_u(t / self.c, x, chart) + np.log(self.c)

    def conf_du(self, t, x, chart=0):
        return self.base.conf_du(t / self.c, x, chart)

    def conf_d2u(self, t, x, chart=0):
        return self.base.conf_d2u(t / self.c, x, chart)

    def conf_lap_u(self, t, x, chart=0):
        return self.base.conf_lap_u(t / self.c, x, chart)

    def conf_dtu(self, t, x, chart=0):
        return self.base.conf_dtu(t / self.c, x, chart) / self.c

    def chart_valid_mask(self, x, chart=0):
        return self.base.chart_valid_mask(x, chart)

    def boundary_distance(self, x, chart=0):
        return self.base.boundary_distance(x, chart)

    def transition(self, x, chart_from):
        return self.base.transition(x, chart_from)

    def switch_mask(self, x, chart):
        return self.base.switch_mask(x, chart)

    def distance_from(self, p0, x, chart=None):
        # distance under c*g(0) is sqrt(c) times the base g(0) distance
        return np.sqrt(self.c) * self.base.distance_from(p0, x, chart)


def scaling_check(cfg, c, x0, n_paths, chunk_size=DEFAULT_CHUNK, independent_seeds=True):
    """Compare the law of X_T under g with X_{t/c} under c*g(t/c).

    Both ensembles are reduced to the g(0)-geodesic distance from the start
    and compared by a two-sample Kolmogorov-Smirnov test.  Returns a dict
    with the KS statistic, p-value, and the two sample summaries.
    """
    family = cfg.family
    stats_a = np.concatenate(
        run_chunks(
            cfg,
            x0,
            n_paths,
            lambda b: family.distance_from(x0, b.coords[:, -1, :], b.chart[:, -1]),
            chunk_size,
        )
    )

    scaled = BlowUpFamily(family, c)
    seed2 = cfg.master_seed + (1 << 20) if independent_seeds else cfg.master_seed
    cfg2 = replace(
        cfg,
        family=scaled,
        t_horizon=c * cfg.t_horizon,
        n_steps=max(10, int(round(c * cfg.n_steps))),
        master_seed=seed2,
    )
    stats_b = np.concatenate(
        run_chunks(
            cfg2,
            x0,
            n_paths,
            lambda b: scaled.distance_from(x0, b.coords[:, -1, :], b.chart[:, -1])
            / np.sqrt(c),
            chunk_size,
        )
    )

    ks = stats.ks_2samp(stats_a, stats_b)
    return {
        "c": c,
        "n_paths": n_paths,
        "ks_statistic": float(ks.statistic),
        "p_value": float(ks.pvalue),
        "mean_base": float(np.mean(stats_a)),
        "mean_scaled": float(np.mean(stats_b)),
        "sample_base": stats_a,
        "sample_scaled": stats_b,
    }


def path_to_csv(path_sample, file):
    """Dump one path in long format (step, s, metric_t, chart, x*, dW*)."""
    import os

    cfg = path_sample.config
    n = cfg.family.dim
    own = isinstance(file, (str, bytes, os.PathLike))
    fh = open(file, "w") if own else file
    try:
        cols = ["step", "s", "metric_t", "chart"]
        cols += [f"x{i + 1}" for i in range(n)] + [f"dW{i + 1}" for i in range(n)]
        fh.write(",".join(cols) + "\n")
        for k, (s, p) in enumerate(zip(path_sample.times, path_sample.points)):
            dw = path_sample.dW[k] if k < len(path_sample.dW) else np.zeros(n)
            row = [str(k), repr(float(s)), repr(float(cfg.metric_clock(s))), str(p.chart_id)]
            row += [repr(float(v)) for v in p.coords] + [repr(float(v)) for v in dw]
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()
