"""Transports along simulated paths.

Four objects evolve along a path X_s with metric clock m(s):

  * frame U: Levi-Civita increment -Gamma(dx, u) per column (Stratonovich,
    discretized by a Heun predictor-corrector) plus the vertical drift
    -1/2 (d/ds g(m(s)))^{#} u ds that keeps the columns g(m(s))-orthonormal;
  * damped transport W = par * Q with dQ = -1/2 par^{-1} C^{#} par Q ds,
    C = Ric - d/ds g(m(s));
  * variation transport TX = par * P with dP = 1/2 par^{-1} (d/ds g(m(s))
    - Ric)^{#} par P ds (the derivative of the stochastic flow);
  * reaction transports: phi with scalar rate (2R - 3r/2), and theta with
    matrix rate -(Ric^{#} - 1/2 (d/ds g(m(s)))^{#} - F'(f)).

Here `par` is the moving-metric parallel transport U_s U_0^{-1}, and all
matrices are chart-basis maps; chart switches conjugate by the transition
Jacobian logged on the path.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FrameGramError
from .sde import BatchPaths, PathSample, simulate_batch

DEFAULT_GRAM_TOL_MULT = 50.0  # tolerance = mult * dt


@dataclass
class FrameState:
    """Frame matrix at one step of one path (columns = tangent vectors)."""

    frame: np.ndarray


@dataclass
class DampedState:
    matrix: np.ndarray


@dataclass
class VariationState:
    matrix: np.ndarray


@dataclass
class ReactionTransportState:
    matrix: np.ndarray
    reaction: float


def as_batch(paths):
    """Accept a BatchPatches or a single PathSample (re-batched)."""
    if isinstance(paths, BatchPaths):
        return paths
    if isinstance(paths, PathSample):
        return simulate_batch(paths.config, paths.points[0], [paths.path_index])
    raise TypeError(f"expected BatchPaths or PathSample, got {type(paths)!r}")


def _dtg_sharp(family, m, x):
    """Raised time derivative of the metric, g^{-1} d_t g, batched."""
    return family.dtg_sharp(m, x)


def default_initial_frame(paths):
    """g(m(0))-orthonormal frame at the start point (symmetric square root)."""
    cfg = paths.cfg
    m0 = cfg.metric_clock(0.0)
    x0 = paths.coords[:, 0, :]
    return cfg.family.inv_sqrt_metric(m0, x0)


def iter_frames(paths, u0=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT, track_gram=True):
    """Yield (step k, U_k, gram_defect_k) along the batch, evolving the frame.

    Raises FrameGramError when the orthonormality defect exceeds
    gram_tol_mult * dt (pass None to disable the check; with track_gram
    False the defect is not even computed and zeros are yielded).
    """
    paths = as_batch(paths)
    cfg = paths.cfg
    family = cfg.family
    dt = cfg.dt
    rate = cfg.clock_rate
    kk = paths.n_steps
    tol = None if gram_tol_mult is None else gram_tol_mult * dt
    track = track_gram or tol is not None

    u = np.array(u0, dtype=float) if u0 is not None else default_initial_frame(paths)
    if u.ndim == 2:
        u = np.broadcast_to(u, (paths.n_paths,) + u.shape).copy()

    def coeff(m, x, dx):
        gam = family.christoffel(m, x)
        a = -np.einsum("...ikl,...k->...il", gam, dx)
        a -= 0.5 * rate * dt * _dtg_sharp(family, m, x)
        return a

    zeros = np.zeros(paths.n_paths)

    def gram_defect(k, u_k):
        if not track:
            return zeros
        m = cfg.metric_clock(paths.times[k])
        g = family.metric(m, paths.coords[:, k, :])
        gram = np.einsum("...ji,...jk,...kl->...il", u_k, g, u_k)
        gram[..., np.arange(family.dim), np.arange(family.dim)] -= 1.0
        return np.max(np.abs(gram), axis=(-1, -2))

    defect = gram_defect(0, u)
    yield 0, u, defect

    for k in range(kk):
        m_k = cfg.metric_clock(paths.times[k])
        m_k1 = cfg.metric_clock(paths.times[k + 1])
        x_k = paths.coords[:, k, :]
        x_k1_pre = paths.pre_switch_coords(k + 1)
        dx = x_k1_pre - x_k

        a1 = coeff(m_k, x_k, dx)
        u_pred = u + np.einsum("...ij,...jk->...ik", a1, u)
        a2 = coeff(m_k1, x_k1_pre, dx)
        u = u + 0.5 * (
            np.einsum("...ij,...jk->...ik", a1, u)
            + np.einsum("...ij,...jk->...ik", a2, u_pred)
        )

        sw, jac = paths.switch_jacobians(k + 1)
        if jac is not None:
            u[sw] = np.einsum("...ij,...jk->...ik", jac, u[sw])

        defect = gram_defect(k + 1, u)
        if tol is not None and np.max(defect) > tol:
            raise FrameGramError(
                f"frame Gram defect {np.max(defect):.3e} exceeds tolerance "
                f"{tol:.3e} at step {k + 1}"
            )
        yield k + 1, u, defect


@dataclass
class FrameResult:
    """Recorded frame evolution for a batch of paths."""

    record_idx: np.ndarray  # (R,)
    frames: np.ndarray  # (N, R, n, n)
    gram_max: np.ndarray  # (N,) worst defect over all steps
    gram_final: np.ndarray  # (N,)

    @property
    def u0(self):
        return self.frames[:, 0]

    def parallel(self, j):
        """Moving-metric parallel transport at recorded index j."""
        return np.einsum(
            "...ij,...jk->...ik", self.frames[:, j], np.linalg.inv(self.frames[:, 0])
        )


def _resolve_record(paths, record_at):
    if record_at is None:
        return np.arange(paths.n_steps + 1)
    return np.asarray(record_at, dtype=int)


def evolve_frame(paths, u0=None, record_at=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT):
    """Evolve the g(m(s))-orthonormal frame; record at the given step indices."""
    paths = as_batch(paths)
    rec = _resolve_record(paths, record_at)
    rec_set = {int(i): j for j, i in enumerate(rec)}
    n = paths.cfg.family.dim
    frames = np.empty((paths.n_paths, len(rec), n, n))
    gram_max = np.zeros(paths.n_paths)
    gram_final = None
    for k, u, defect in iter_frames(paths, u0=u0, gram_tol_mult=gram_tol_mult):
        gram_max = np.maximum(gram_max, defect)
        if k in rec_set:
            frames[:, rec_set[k]] = u
        gram_final = defect
    return FrameResult(rec, frames, gram_max, gram_final)


@dataclass
class ConjugatedResult:
    """A transport integrated as par^{-1} * (transport), then composed."""

    record_idx: np.ndarray
    conjugated: np.ndarray  # (N, R, n, n) the par^{-1} T factor
    composed: np.ndarray  # (N, R, n, n) the transport T itself
    frame: FrameResult


def _evolve_conjugated(paths, rate_matrix, u0, record_at, gram_tol_mult, track_gram=True):
    """Integrate dQ = rate_matrix(...) Q ds in the start tangent space.

    rate_matrix(m, x) returns the un-conjugated (N, n, n) coefficient; the
    conjugation by the running parallel transport happens here.
    """
    paths = as_batch(paths)
    cfg = paths.cfg
    dt = cfg.dt
    rec = _resolve_record(paths, record_at)
    rec_set = {int(i): j for j, i in enumerate(rec)}
    n = cfg.family.dim

    conj = np.empty((paths.n_paths, len(rec), n, n))
    comp = np.empty_like(conj)
    frames = np.empty_like(conj)
    gram_max = np.zeros(paths.n_paths)
    gram_final = None

    q = None
    u0_mat = None
    u0_inv = None
    for k, u, defect in iter_frames(paths, u0=u0, gram_tol_mult=gram_tol_mult,
                                    track_gram=track_gram):
        gram_max = np.maximum(gram_max, defect)
        gram_final = defect
        if k == 0:
            u0_mat = u.copy()
            u0_inv = np.linalg.inv(u0_mat)
            q = np.broadcast_to(np.eye(n), u.shape).copy()
        else:
            # coefficient at the departure point of step k-1 (Euler)
            m_prev = cfg.metric_clock(paths.times[k - 1])
            x_prev = paths.coords[:, k - 1, :]
            b = rate_matrix(m_prev, x_prev)
            par_prev = np.einsum("...ij,...jk->...ik", u_prev, u0_inv)
            par_prev_inv = np.einsum("...ij,...jk->...ik", u0_mat, np.linalg.inv(u_prev))
            b_conj = np.einsum(
                "...ij,...jk,...kl->...il",
                par_prev_inv,
                b,
                par_prev,
            )
            q = q + dt * np.einsum("...ij,...jk->...ik", b_conj, q)
        if k in rec_set:
            j = rec_set[k]
            conj[:, j] = q
            par = np.einsum("...ij,...jk->...ik", u, u0_inv)
            comp[:, j] = np.einsum("...ij,...jk->...ik", par, q)
            frames[:, j] = u
        u_prev = u

    frame = FrameResult(rec, frames, gram_max, gram_final)
    return ConjugatedResult(rec, conj, comp, frame)


def evolve_damped(paths, u0=None, record_at=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT,
                  track_gram=True):
    """Damped parallel transport W: dQ = -1/2 par^{-1}(Ric - dsg)^{#} par Q ds."""
    paths = as_batch(paths)
    family = paths.cfg.family
    rate = paths.cfg.clock_rate

    def coefficient(m, x):
        c = family.ricci_sharp(m, x) - rate * _dtg_sharp(family, m, x)
        return -0.5 * c

    return _evolve_conjugated(paths, coefficient, u0, record_at, gram_tol_mult, track_gram)


def evolve_variation(paths, u0=None, record_at=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT,
                     track_gram=True):
    """Variation transport TX: dP = 1/2 par^{-1}(dsg - Ric)^{#} par P ds."""
    paths = as_batch(paths)
    family = paths.cfg.family
    rate = paths.cfg.clock_rate

    def coefficient(m, x):
        d = rate * _dtg_sharp(family, m, x) - family.ricci_sharp(m, x)
        return 0.5 * d

    return _evolve_conjugated(paths, coefficient, u0, record_at, gram_tol_mult, track_gram)


def evolve_theta(paths, fprime, u0=None, record_at=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT,
                 track_gram=True):
    """Reaction transport for d/dt f = Lap f + F(f):
    dQ = -par^{-1}(Ric^{#} - 1/2 dsg^{#} - F'(f)) par Q ds.

    fprime(metric_time, coords) -> (N,) evaluates F' along the path.
    """
    paths = as_batch(paths)
    family = paths.cfg.family
    rate = paths.cfg.clock_rate
    n = family.dim
    eye = np.eye(n)

    def coefficient(m, x):
        e = family.ricci_sharp(m, x) - 0.5 * rate * _dtg_sharp(family, m, x)
        e = e - np.asarray(fprime(m, x))[..., None, None] * eye
        return -e

    return _evolve_conjugated(paths, coefficient, u0, record_at, gram_tol_mult, track_gram)


@dataclass
class PhiResult:
    """Scalar-rate reaction transport for the surface flow."""

    record_idx: np.ndarray
    log_scale: np.ndarray  # (N, R) log of the scalar factor
    composed: np.ndarray  # (N, R, n, n) phi = scale * par
    int_scalar: np.ndarray  # (N,) trapezoid of R(m(s), X_s) ds over the horizon
    frame: FrameResult


def evolve_phi(paths, r_avg=0.0, u0=None, record_at=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT,
               track_gram=True):
    """Surface reaction transport: d(par^{-1} phi) = (2R - 3r/2) par^{-1} phi ds.

    The scalar curvature R is read from the path's family at the metric
    clock; r_avg is the (topologically constant) average curvature.
    """
    paths = as_batch(paths)
    cfg = paths.cfg
    family = cfg.family
    dt = cfg.dt
    rec = _resolve_record(paths, record_at)
    rec_set = {int(i): j for j, i in enumerate(rec)}
    n = family.dim

    log_scale = np.empty((paths.n_paths, len(rec)))
    comp = np.empty((paths.n_paths, len(rec), n, n))
    frames = np.empty_like(comp)
    gram_max = np.zeros(paths.n_paths)
    gram_final = None

    logq = np.zeros(paths.n_paths)
    int_r = np.zeros(paths.n_paths)
    r_prev = None
    u0_inv = None
    for k, u, defect in iter_frames(paths, u0=u0, gram_tol_mult=gram_tol_mult,
                                    track_gram=track_gram):
        gram_max = np.maximum(gram_max, defect)
        gram_final = defect
        m_k = cfg.metric_clock(paths.times[k])
        r_here = np.asarray(family.scalar(m_k, paths.coords[:, k, :]))
        if k == 0:
            u0_inv = np.linalg.inv(u)
        else:
            # scalar ODE uses the left endpoint (plain Euler, matching the
            # matrix transports); the reported integral uses the trapezoid
            logq = logq + dt * (2.0 * r_prev - 1.5 * r_avg)
            int_r = int_r + 0.5 * dt * (r_prev + r_here)
        r_prev = r_here
        if k in rec_set:
            j = rec_set[k]
            log_scale[:, j] = logq
            par = np.einsum("...ij,...jk->...ik", u, u0_inv)
            comp[:, j] = np.exp(logq)[..., None, None] * par
            frames[:, j] = u

    frame = FrameResult(rec, frames, gram_max, gram_final)
    return PhiResult(rec, log_scale, comp, int_r, frame)


@dataclass
class EquivalenceReport:
    gap_w: np.ndarray  # (N,) |par^{-1} W - I|_inf at the final time
    gap_tx: np.ndarray  # (N,)
    isometry_defect: np.ndarray  # (N,) |W^T g(m(T)) W - g(m(0))-Gram|_inf


def equivalence_gap(paths, u0=None, gram_tol_mult=DEFAULT_GRAM_TOL_MULT):
    """Final-time gaps between the three transports (the flow dichotomy)."""
    paths = as_batch(paths)
    cfg = paths.cfg
    final = np.array([paths.n_steps])
    damped = evolve_damped(paths, u0=u0, record_at=final, gram_tol_mult=gram_tol_mult)
    variation = evolve_variation(paths, u0=u0, record_at=final, gram_tol_mult=gram_tol_mult)

    n = cfg.family.dim
    eye = np.eye(n)
    gap_w = np.max(np.abs(damped.conjugated[:, 0] - eye), axis=(-1, -2))
    gap_tx = np.max(np.abs(variation.conjugated[:, 0] - eye), axis=(-1, -2))

    # isometry defect of W: pullback of g(m(T)) through W versus the
    # start-point Gram matrix of g(m(0))
    w = damped.composed[:, 0]
    m_end = cfg.metric_clock(paths.times[-1])
    m_start = cfg.metric_clock(0.0)
    g_end = cfg.family.metric(m_end, paths.coords[:, -1, :])
    g_start = cfg.family.metric(m_start, paths.coords[:, 0, :])
    pulled = np.einsum("...ji,...jk,...kl->...il", w, g_end, w)
    defect = np.max(np.abs(pulled - g_start), axis=(-1, -2))
    return EquivalenceReport(gap_w=gap_w, gap_tx=gap_tx, isometry_defect=defect)


def export_transport_trace(path_sample, file, kind="frame"):
    """Dump one path's transport trace as CSV: step, matrix entries, defect.

    kind selects the exported matrix: 'frame' (U), 'damped' (W), or
    'variation' (TX); the Gram defect of the underlying frame is always the
    last column.
    """
    import os

    batch = as_batch(path_sample)
    n = batch.cfg.family.dim
    if kind == "frame":
        res = evolve_frame(batch, gram_tol_mult=None)
        mats, frame = res.frames, res
    elif kind == "damped":
        res = evolve_damped(batch, gram_tol_mult=None)
        mats, frame = res.composed, res.frame
    elif kind == "variation":
        res = evolve_variation(batch, gram_tol_mult=None)
        mats, frame = res.composed, res.frame
    else:
        raise ValueError(f"unknown transport kind {kind!r}")

    # per-step defect needs a second pass (results keep only the running max)
    defects = np.empty(batch.n_steps + 1)
    for k, _, d in iter_frames(batch, gram_tol_mult=None):
        defects[k] = d[0]

    own = isinstance(file, (str, bytes, os.PathLike))
    fh = open(file, "w") if own else file
    try:
        names = [f"m{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        fh.write(",".join(["step"] + names + ["gram_defect"]) + "\n")
        for k in range(batch.n_steps + 1):
            row = [str(k)] + [repr(float(v)) for v in mats[0, k].ravel()]
            row.append(repr(float(defects[k])))
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()


# -- single-path state lists (convenience wrappers) -----------------------------


def frame_states(path_sample, **kw):
    res = evolve_frame(as_batch(path_sample), **kw)
    return [FrameState(frame=res.frames[0, j]) for j in range(len(res.record_idx))]


def damped_states(path_sample, **kw):
    res = evolve_damped(as_batch(path_sample), **kw)
    return [DampedState(matrix=res.composed[0, j]) for j in range(len(res.record_idx))]


def variation_states(path_sample, **kw):
    res = evolve_variation(as_batch(path_sample), **kw)
    return [VariationState(matrix=res.composed[0, j]) for j in range(len(res.record_idx))]


def phi_states(path_sample, r_avg=0.0, **kw):
    """Surface reaction transport along one path; `reaction` echoes the
    scalar rate (3/2 r - 2R) at each recorded step."""
    batch = as_batch(path_sample)
    res = evolve_phi(batch, r_avg=r_avg, **kw)
    cfg = batch.cfg
    out = []
    for j, k in enumerate(res.record_idx):
        m = cfg.metric_clock(batch.times[k])
        r_here = float(cfg.family.scalar(m, batch.coords[:1, k, :])[0])
        out.append(ReactionTransportState(matrix=res.composed[0, j],
                                          reaction=1.5 * r_avg - 2.0 * r_here))
    return out


def theta_states(path_sample, fprime, **kw):
    """Reaction transport for d/dt f = Lap f + F(f) along one path;
    `reaction` echoes F'(f) at each recorded step."""
    batch = as_batch(path_sample)
    res = evolve_theta(batch, fprime, **kw)
    cfg = batch.cfg
    out = []
    for j, k in enumerate(res.record_idx):
        m = cfg.metric_clock(batch.times[k])
        val = float(np.asarray(fprime(m, batch.coords[:1, k, :]))[0])
        out.append(ReactionTransportState(matrix=res.composed[0, j], reaction=val))
    return out
