"""Deterministic ground truth for the Monte Carlo layer.

Torus: pseudospectral RK4 solvers for the heat equation
    d/dt f = (sigma/2) e^{-u} lap f
and the conjugate (density) equation
    d/dt h = (sigma/2) e^{-u} lap h - (d/dt u) h,
the latter describing the law of the metric Brownian motion against the
moving volume measure e^{u} dA.

Sphere: the heat flow under g(t) = c(t) g_round is the round heat semigroup
run at the re-parameterized clock tau(t) = int_0^t ds/c(s), so a finite
spherical-harmonic expansion solves it in closed form.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import StabilityError
from .geometry import SphereFamily
from .interp import (
    TWO_PI,
    TimeGridInterpolator,
    grid_points,
    spectral_gradient,
    spectral_laplacian,
    wavenumbers,
)

RK4_SPECTRAL_SAFETY = 0.5  # fraction of the real-axis RK4 stability limit


def _grid_coords(n):
    g = grid_points(n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.stack([xx, yy], axis=-1)


def _heat_dt(grid_n, u_min, sigma):
    """Stable RK4 step for the full-spectrum diffusion operator.

    The solvers keep all modes active (no dealiasing: freezing the top
    third would leave their coefficients undamped and floor the accuracy),
    so the bound uses k_max = n/2.
    """
    k_max2 = 2.0 * (grid_n / 2.0) ** 2
    lam = 0.5 * sigma * k_max2 * math.exp(-u_min)
    return RK4_SPECTRAL_SAFETY * 2.785 / lam


def periodic_heat_kernel(grid_n, x0, var):
    """Wrapped Gaussian on the torus with variance `var` (flat heat kernel).

    Built from its exact Fourier coefficients e^{-|k|^2 var / 2} / (2 pi)^2;
    integrates to 1 against dA up to spectral truncation.
    """
    kx, ky = wavenumbers(grid_n)
    coef = np.exp(-0.5 * (kx**2 + ky**2) * var)
    phase = np.exp(-1j * (kx * x0[0] + ky * x0[1]))
    field = np.fft.ifft2(coef * phase).real * grid_n**2 / TWO_PI**2
    return field


def _rk4(field, t0, t1, dt, rhs):
    n_steps = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n_steps
    f = field
    t = t0
    for _ in range(n_steps):
        k1 = rhs(t, f)
        k2 = rhs(t + 0.5 * h, f + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, f + 0.5 * h * k2)
        k4 = rhs(t + h, f + h * k3)
        f = f + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        if not np.all(np.isfinite(f)):
            raise StabilityError(f"spectral solve blew up at t={t:.4g}")
    return f


def _store_times(T, n_store):
    return np.linspace(0.0, T, max(2, n_store))


@dataclass
class HeatSolution:
    """Heat solve on the torus with spline-in-space, cubic-in-time evaluation."""

    times: np.ndarray
    grids: np.ndarray  # (m, n, n)
    sigma: float
    family: object

    def __post_init__(self):
        fields = {"f": self.grids}
        m, n = self.grids.shape[0], self.grids.shape[1]
        for name in ("fx", "fy", "lap"):
            fields[name] = np.empty_like(self.grids)
        for i in range(m):
            fx, fy = spectral_gradient(self.grids[i])
            fields["fx"][i], fields["fy"][i] = fx, fy
            fields["lap"][i] = spectral_laplacian(self.grids[i])
        self._interp = TimeGridInterpolator(self.times, fields)

    def value(self, t, pts):
        return self._interp.sample("f", t, pts)

    def chart_partials(self, t, pts):
        fx = self._interp.sample("fx", t, pts)
        fy = self._interp.sample("fy", t, pts)
        return np.stack([fx, fy], axis=-1)

    def gradient(self, t, pts):
        """Metric gradient: partials raised by g(t)^{-1} = e^{-u} I."""
        eu = np.exp(-self.family.conf_u(t, np.asarray(pts, dtype=float)))
        return eu[..., None] * self.chart_partials(t, pts)

    def metric_laplacian(self, t, pts):
        eu = np.exp(-self.family.conf_u(t, np.asarray(pts, dtype=float)))
        return eu * self._interp.sample("lap", t, pts)

    def residual(self, t, pts, fd_dt=1e-3):
        """Defect d/dt f - (sigma/2) lap_t f via centred time differences."""
        dfdt = (self.value(t + fd_dt, pts) - self.value(t - fd_dt, pts)) / (2.0 * fd_dt)
        return dfdt - 0.5 * self.sigma * self.metric_laplacian(t, pts)


def heat_solve_torus(family, f0, T, sigma=1.0, dt=None, n_store=41):
    """Solve d/dt f = (sigma/2) lap_t f on the family's torus from grid f0."""
    f0 = np.asarray(f0, dtype=float)
    n = f0.shape[0]
    coords = _grid_coords(n)
    u_min = float(np.min(family.conf_u(0.0, coords)))
    if dt is None:
        dt = _heat_dt(n, min(u_min, 0.0), sigma)

    def rhs(t, f):
        eu = np.exp(-family.conf_u(t, coords))
        return 0.5 * sigma * eu * spectral_laplacian(f)

    times = _store_times(T, n_store)
    grids = np.empty((len(times), n, n))
    grids[0] = f0
    f = f0
    for i in range(1, len(times)):
        f = _rk4(f, times[i - 1], times[i], dt, rhs)
        grids[i] = f
    return HeatSolution(times=times, grids=grids, sigma=sigma, family=family)


@dataclass
class DensityField:
    """Density of the metric BM against the moving volume measure."""

    grid_n: int
    times: np.ndarray
    values: np.ndarray  # (m, n, n) density h(t, y)
    weights: np.ndarray  # (m, n, n) cell measures e^{u(t)} dA
    masses: np.ndarray  # (m,) integral of h against the moving measure
    mollifier_width: float
    min_density: float
    clipped: bool

    def mass(self, index):
        return float(self.masses[index])


def conjugate_solve_torus(
    family, x0, T, mollifier_width=None, grid_n=64, sigma=1.0, dt=None, n_store=41
):
    """Density evolution d/dt h + h tr(g^{-1} d_t g)/2 = (sigma/2) lap_t h.

    The initial condition is a wrapped-Gaussian mollified point mass at x0:
    spatial density w(y), so h(0) = w e^{-u(0)} has unit moving-measure mass.
    Monte Carlo comparisons should draw initial points from the same
    wrapped Gaussian (width is echoed on the result).
    """
    coords = _grid_coords(grid_n)
    cell = (TWO_PI / grid_n) ** 2
    if mollifier_width is None:
        mollifier_width = max(2.0 * TWO_PI / grid_n, 0.05)

    x0 = np.asarray(x0, dtype=float)
    w0 = periodic_heat_kernel(grid_n, x0, mollifier_width**2)
    h = w0 * np.exp(-family.conf_u(0.0, coords))

    u_min = float(np.min(family.conf_u(0.0, coords)))
    if dt is None:
        dt = _heat_dt(grid_n, min(u_min, 0.0), sigma)

    def rhs(t, f):
        eu = np.exp(-family.conf_u(t, coords))
        diff = 0.5 * sigma * eu * spectral_laplacian(f)
        return diff - family.conf_dtu(t, coords) * f

    times = _store_times(T, n_store)
    values = np.empty((len(times), grid_n, grid_n))
    weights = np.empty_like(values)
    masses = np.empty(len(times))
    values[0] = h
    for i in range(1, len(times)):
        h = _rk4(h, times[i - 1], times[i], dt, rhs)
        values[i] = h
    for i, t in enumerate(times):
        weights[i] = np.exp(family.conf_u(t, coords)) * cell
        masses[i] = float(np.sum(values[i] * weights[i]))

    min_density = float(values.min())
    clipped = min_density < -1e-8
    if clipped:
        values = np.clip(values, 0.0, None)
    return DensityField(
        grid_n=grid_n,
        times=times,
        values=values,
        weights=weights,
        masses=masses,
        mollifier_width=float(mollifier_width),
        min_density=min_density,
        clipped=clipped,
    )


def save_density(field, path):
    """Persist a DensityField in the snapshot container format."""
    np.savez(
        path,
        version=np.int64(1),
        grid_n=np.int64(field.grid_n),
        times=field.times,
        values=field.values,
        weights=field.weights,
        masses=field.masses,
        mollifier_width=field.mollifier_width,
        min_density=field.min_density,
        clipped=np.int64(field.clipped),
    )


# ---------------------------------------------------------------------------
# Sphere oracle: finite harmonic expansions under the closed-form time change
# ---------------------------------------------------------------------------


def _harmonics_2d():
    """Real harmonic polynomials on S^2 keyed by name: (degree, value, grad)."""

    def lin(i):
        def val(e):
            return e[..., i]

        def grad(e):
            g = np.zeros_like(e)
            g[..., i] = 1.0
            return g

        return val, grad

    def const_val(e):
        return np.ones(e.shape[:-1])

    def const_grad(e):
        return np.zeros_like(e)

    table = {"1": (0, const_val, const_grad)}
    for i, name in enumerate(("x", "y", "z")):
        v, g = lin(i)
        table[name] = (1, v, g)

    def prod(i, j):
        def val(e):
            return e[..., i] * e[..., j]

        def grad(e):
            g = np.zeros_like(e)
            g[..., i] = e[..., j]
            g[..., j] += e[..., i]
            return g

        return val, grad

    for (i, j), name in (((0, 1), "xy"), ((0, 2), "xz"), ((1, 2), "yz")):
        v, g = prod(i, j)
        table[name] = (2, v, g)

    def x2y2_val(e):
        return e[..., 0] ** 2 - e[..., 1] ** 2

    def x2y2_grad(e):
        g = np.zeros_like(e)
        g[..., 0] = 2.0 * e[..., 0]
        g[..., 1] = -2.0 * e[..., 1]
        return g

    table["x2-y2"] = (2, x2y2_val, x2y2_grad)

    def z2_val(e):
        return 3.0 * e[..., 2] ** 2 - 1.0

    def z2_grad(e):
        g = np.zeros_like(e)
        g[..., 2] = 6.0 * e[..., 2]
        return g

    table["3z2-1"] = (2, z2_val, z2_grad)
    return table


_HARMONICS_2D = _harmonics_2d()


def embed_jacobian(x, chart, dim):
    """Jacobian of the unit-sphere embedding, shape (..., dim+1, dim)."""
    x = np.asarray(x, dtype=float)
    r2 = np.einsum("...i,...i->...", x, x)
    d = 1.0 + r2
    jac = np.zeros(x.shape[:-1] + (dim + 1, dim))
    eye = np.eye(dim)
    for a in range(dim):
        jac[..., a, :] = 2.0 * eye[a] / d[..., None] - 4.0 * x[..., a, None] * x / (
            d**2
        )[..., None]
    sign = np.where(np.asarray(chart) == 0, 1.0, -1.0)
    jac[..., dim, :] = -sign[..., None] * 4.0 * x / (d**2)[..., None]
    return jac


@dataclass
class SphereHeatSolution:
    """Closed-form heat flow on the evolving sphere for a harmonic expansion."""

    family: SphereFamily
    coeffs: dict  # harmonic name -> coefficient
    sigma: float = 1.0

    def __post_init__(self):
        if self.family.dim != 2:
            raise NotImplementedError("harmonic oracle implemented for dim 2")
        unknown = set(self.coeffs) - set(_HARMONICS_2D)
        if unknown:
            raise KeyError(f"unknown harmonic names {sorted(unknown)}")

    def tau(self, t):
        """Round-metric clock tau(t) = int_0^t ds / c(s)."""
        self.family.check_time(t)
        c0 = self.family.size
        rate = self.family.flow_kappa * (self.family.dim - 1)
        if rate == 0.0:
            return t / c0
        return math.log(c0 / (c0 - rate * t)) / rate

    def _decay(self, t, ell):
        lam = ell * (ell + self.family.dim - 1)
        return math.exp(-0.5 * self.sigma * lam * self.tau(t))

    def value(self, t, x, chart=0):
        e = self.family.embed(x, chart)
        out = 0.0
        for name, c in self.coeffs.items():
            ell, val, _ = _HARMONICS_2D[name]
            out = out + c * self._decay(t, ell) * val(e)
        return out

    def chart_partials(self, t, x, chart=0):
        e = self.family.embed(x, chart)
        jac = embed_jacobian(x, chart, self.family.dim)
        out = 0.0
        for name, c in self.coeffs.items():
            ell, _, grad = _HARMONICS_2D[name]
            amb = c * self._decay(t, ell) * grad(e)
            out = out + np.einsum("...a,...ai->...i", amb, jac)
        return out

    def gradient(self, t, x, chart=0):
        ginv = self.family.metric_inv(t, np.asarray(x, dtype=float), chart)
        return np.einsum("...ij,...j->...i", ginv, self.chart_partials(t, x, chart))

    def gradient_norm(self, t, x, chart=0):
        dp = self.chart_partials(t, x, chart)
        ginv = self.family.metric_inv(t, np.asarray(x, dtype=float), chart)
        return np.sqrt(np.einsum("...i,...ij,...j->...", dp, ginv, dp))

    def metric_laplacian(self, t, x, chart=0):
        e = self.family.embed(x, chart)
        c_t = self.family.scale(t)
        out = 0.0
        for name, c in self.coeffs.items():
            ell, val, _ = _HARMONICS_2D[name]
            lam = ell * (ell + self.family.dim - 1)
            out = out + c * self._decay(t, ell) * (-lam) * val(e) / c_t
        return out

    def sup_abs(self):
        """Max of |f0| on a dense sphere sample (for gradient-bound checks)."""
        rng = np.random.default_rng(0)
        v = rng.normal(size=(20000, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        out = 0.0
        for name, c in self.coeffs.items():
            _, val, _ = _HARMONICS_2D[name]
            out = out + c * val(v)
        return float(np.max(np.abs(out)))


def heat_solve_sphere(dim, kappa, coeffs, sigma=1.0, size=1.0):
    """Oracle solution of d/dt f = (sigma/2) lap_t f on the evolving sphere."""
    family = SphereFamily(dim=dim, kappa=kappa, size=size)
    return SphereHeatSolution(family=family, coeffs=dict(coeffs), sigma=sigma)
