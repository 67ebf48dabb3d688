"""Normalized curvature flow for conformal metrics on the flat 2-torus.

Solves du/dt = r - R for the log conformal factor of g = e^u * delta, with
R = -e^{-u} lap(u) evaluated spectrally and r the volume-weighted average of
R (identically ~0 on the torus, recomputed every step as a drift check).
Space is Fourier-spectral with 2/3-rule dealiasing of the nonlinear term;
time is explicit RK4.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ResolutionError, SnapshotFormatError, StabilityError
from .interp import (
    TWO_PI,
    TimeGridInterpolator,
    dealias,
    grid_points,
    spectral_gradient,
    spectral_laplacian,
)

SNAPSHOT_VERSION = 1
DT_SAFETY = 0.2  # dt <= DT_SAFETY * dx^2 * min(e^u); stable for dealiased RK4


@dataclass
class TorusFlowSolution:
    """Sampled flow: conformal factor and scalar curvature on a periodic grid."""

    grid_n: int
    times: np.ndarray  # (m,)
    u: np.ndarray  # (m, n, n)
    R: np.ndarray  # (m, n, n)
    r_avg: np.ndarray  # (m,) volume-weighted average curvature per sample

    def volume(self, index):
        """Total volume integral e^u dA at stored sample `index`."""
        return float(np.mean(np.exp(self.u[index])) * TWO_PI**2)


def single_mode(grid_n, amplitude, kx=1, ky=0):
    """Initial factor u0 = amplitude * cos(kx x + ky y) on the grid."""
    g = grid_points(grid_n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return amplitude * np.cos(kx * xx + ky * yy)


def stability_dt(grid_n, u_min=0.0):
    """Default explicit step from the diffusive stability bound."""
    dx = TWO_PI / grid_n
    return DT_SAFETY * dx**2 * np.exp(u_min)


def _curvature(u):
    """Scalar curvature of e^u delta, dealiased, plus its average and weights."""
    lap = spectral_laplacian(u)
    r_field = dealias(-np.exp(-u) * lap)
    w = np.exp(u)
    r_avg = float(np.mean(r_field * w) / np.mean(w))
    return r_field, r_avg


def solve_nrf(u0, t_end, dt=None, grid_n=None, n_store=41):
    """Evolve u0 under the normalized flow up to t_end.

    Returns a TorusFlowSolution sampled at n_store evenly spread times
    (including 0 and t_end).  Raises StabilityError when dt violates the
    stability bound or the solution blows up, ResolutionError for tiny grids.
    """
    u = np.array(u0, dtype=float)
    if grid_n is None:
        grid_n = u.shape[0]
    if u.shape != (grid_n, grid_n):
        raise ResolutionError(f"u0 shape {u.shape} does not match grid_n={grid_n}")
    if grid_n < 8:
        raise ResolutionError(f"grid_n={grid_n} too coarse (need >= 8)")
    if not np.all(np.isfinite(u)):
        raise StabilityError("u0 contains non-finite values")

    bound = stability_dt(grid_n, float(np.min(u)))
    if dt is None:
        dt = bound
    if dt > bound * (1.0 + 1e-12):
        raise StabilityError(f"dt={dt:.3e} exceeds stability bound {bound:.3e}")

    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    store_idx = np.unique(np.round(np.linspace(0, n_steps, n_store)).astype(int))

    blow_up = 10.0 * max(float(np.max(np.abs(u))), 1e-6)

    def rhs(v):
        r_field, r_avg = _curvature(v)
        return r_avg - r_field

    times, us, rs, ravgs = [], [], [], []

    def store(step, v):
        r_field, r_avg = _curvature(v)
        times.append(step * dt)
        us.append(v.copy())
        rs.append(r_field)
        ravgs.append(r_avg)

    store(0, u)
    next_store = 1
    for step in range(1, n_steps + 1):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blow_up:
            raise StabilityError(f"flow blew up at step {step} (t={step * dt:.4g})")
        while next_store < len(store_idx) and store_idx[next_store] == step:
            store(step, u)
            next_store += 1

    return TorusFlowSolution(
        grid_n=grid_n,
        times=np.array(times),
        u=np.array(us),
        R=np.array(rs),
        r_avg=np.array(ravgs),
    )


def build_interpolator(sol):
    """Time/space interpolator over u, its derivatives, R, and grad R.

    The interpolator is built once per solution and cached on it.
    """
    cached = getattr(sol, "_interp", None)
    if cached is not None:
        return cached
    fields = {"u": sol.u, "R": sol.R}
    m = len(sol.times)
    for name in ("ux", "uy", "uxx", "uxy", "uyy", "lap_u", "Rx", "Ry"):
        fields[name] = np.empty_like(sol.u)
    for i in range(m):
        ux, uy = spectral_gradient(sol.u[i])
        uxx, uxy = spectral_gradient(ux)
        _, uyy = spectral_gradient(uy)
        rx, ry = spectral_gradient(sol.R[i])
        fields["ux"][i], fields["uy"][i] = ux, uy
        fields["uxx"][i], fields["uxy"][i], fields["uyy"][i] = uxx, uxy, uyy
        fields["lap_u"][i] = spectral_laplacian(sol.u[i])
        fields["Rx"][i], fields["Ry"][i] = rx, ry
    interp = TimeGridInterpolator(sol.times, fields)
    sol._interp = interp
    return interp


def scalar_curvature_gradient(sol, t, p):
    """g(t)-gradient of the scalar curvature at points p (shape (..., 2))."""
    itp = build_interpolator(sol)
    rx = itp.sample("Rx", t, p)
    ry = itp.sample("Ry", t, p)
    eu = np.exp(-itp.sample("u", t, p))
    return eu[..., None] * np.stack([rx, ry], axis=-1)


def scalar_curvature_residual(sol, index):
    """Max-norm defect of d/dt R = lap_t R + R (R - r) at stored sample `index`.

    The time derivative comes from a second-order three-point difference of
    the stored R samples (stored spacing may be non-uniform), independent of
    the u-equation the solver integrated.
    """
    if index <= 0 or index >= len(sol.times) - 1:
        raise IndexError("need an interior stored sample")
    dp = sol.times[index + 1] - sol.times[index]
    dm = sol.times[index] - sol.times[index - 1]
    dR = (
        dm**2 * sol.R[index + 1]
        + (dp**2 - dm**2) * sol.R[index]
        - dp**2 * sol.R[index - 1]
    ) / (dp * dm * (dp + dm))
    lap_r = np.exp(-sol.u[index]) * spectral_laplacian(sol.R[index])
    reaction = sol.R[index] * (sol.R[index] - sol.r_avg[index])
    return float(np.max(np.abs(dR - lap_r - reaction)))


def save_snapshot(sol, path):
    """Persist a solution losslessly to a self-describing .npz container."""
    np.savez(
        path,
        version=np.int64(SNAPSHOT_VERSION),
        grid_n=np.int64(sol.grid_n),
        times=sol.times,
        u=sol.u,
        R=sol.R,
        r_avg=sol.r_avg,
    )


def load_snapshot(path):
    """Load a snapshot written by save_snapshot; validates version and shapes."""
    try:
        with np.load(path) as data:
            payload = {k: data[k] for k in data.files}
    except Exception as exc:  # zipfile/ValueError on truncated or foreign files
        raise SnapshotFormatError(f"cannot read snapshot {path}: {exc}") from exc
    for key in ("version", "grid_n", "times", "u", "R", "r_avg"):
        if key not in payload:
            raise SnapshotFormatError(f"snapshot missing field {key!r}")
    if int(payload["version"]) != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {payload['version']}")
    n = int(payload["grid_n"])
    m = len(payload["times"])
    for key in ("u", "R"):
        if payload[key].shape != (m, n, n):
            raise SnapshotFormatError(
                f"snapshot field {key} has shape {payload[key].shape}, expected {(m, n, n)}"
            )
    return TorusFlowSolution(
        grid_n=n,
        times=payload["times"],
        u=payload["u"],
        R=payload["R"],
        r_avg=payload["r_avg"],
    )
