"""Spectral helpers and interpolation on the periodic [0, 2pi)^2 grid.

Grid convention throughout the package: a field F has shape (n, n) with
F[i, j] = f(x_i, y_j), x_i = 2*pi*i/n, axis 0 = x, axis 1 = y.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def wavenumbers(n):
    """Integer wavenumber meshgrids (kx, ky), each of shape (n, n)."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.meshgrid(k, k, indexing="ij")


def spectral_laplacian(field):
    """Flat Laplacian of a periodic field, computed in Fourier space."""
    n = field.shape[-1]
    kx, ky = wavenumbers(n)
    fh = np.fft.fft2(field)
    return np.fft.ifft2(-(kx**2 + ky**2) * fh).real


def spectral_gradient(field):
    """Flat gradient (d/dx, d/dy) of a periodic field."""
    n = field.shape[-1]
    kx, ky = wavenumbers(n)
    fh = np.fft.fft2(field)
    fx = np.fft.ifft2(1j * kx * fh).real
    fy = np.fft.ifft2(1j * ky * fh).real
    return fx, fy


def dealias(field):
    """Zero all modes above the 2/3 rule cutoff (nonlinear-product hygiene)."""
    n = field.shape[-1]
    kx, ky = wavenumbers(n)
    cut = n / 3.0
    mask = (np.abs(kx) <= cut) & (np.abs(ky) <= cut)
    return np.fft.ifft2(np.fft.fft2(field) * mask).real


def grid_points(n):
    """1D grid coordinates x_i = 2*pi*i/n."""
    return TWO_PI * np.arange(n) / n


class PeriodicSpline2D:
    """Periodic cubic B-spline interpolation of one (n, n) field.

    The spline coefficients are prefiltered once with an exact FFT solve of
    the periodic interpolation system, so evaluation reproduces the samples
    at the nodes and carries O(h^4) accuracy for smooth data.
    """

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("expected a square (n, n) field")
        n = values.shape[0]
        m = np.arange(n)
        # symbol of the [1/6, 4/6, 1/6] cardinal B-spline kernel
        sym = (4.0 + 2.0 * np.cos(TWO_PI * m / n)) / 6.0
        fh = np.fft.fft2(values)
        self.coef = np.fft.ifft2(fh / np.outer(sym, sym)).real
        self.n = n
        self.h = TWO_PI / n

    @staticmethod
    def _basis(u):
        w0 = (1.0 - u) ** 3 / 6.0
        w1 = (3.0 * u**3 - 6.0 * u**2 + 4.0) / 6.0
        w2 = (-3.0 * u**3 + 3.0 * u**2 + 3.0 * u + 1.0) / 6.0
        w3 = u**3 / 6.0
        return np.stack([w0, w1, w2, w3], axis=-1)

    def __call__(self, pts):
        """Evaluate at pts of shape (..., 2); coordinates wrap mod 2*pi."""
        return _spline_eval(self.coef, self.n, self.h, pts)


def _spline_eval(coef, n, h, pts):
    """Evaluate B-spline coefficients at pts (..., 2), wrapping mod 2*pi."""
    pts = np.asarray(pts, dtype=float)
    tx = np.mod(pts[..., 0], TWO_PI) / h
    ty = np.mod(pts[..., 1], TWO_PI) / h
    ix = np.floor(tx).astype(int)
    iy = np.floor(ty).astype(int)
    wx = PeriodicSpline2D._basis(tx - ix)
    wy = PeriodicSpline2D._basis(ty - iy)
    out = np.zeros(pts.shape[:-1])
    for a in range(4):
        ja = (ix - 1 + a) % n
        row = np.zeros_like(out)
        for b in range(4):
            jb = (iy - 1 + b) % n
            row += wy[..., b] * coef[ja, jb]
        out += wx[..., a] * row
    return out


class TimeGridInterpolator:
    """Cubic (4-point Lagrange) interpolation over stored time slices.

    Fields are spline-prefiltered per slice; evaluation Lagrange-combines
    the coefficient grids (cheap) and runs a single spline pass, since the
    spline is linear in its coefficients.
    """

    def __init__(self, times, field_stacks):
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 1:
            raise ValueError("need at least one stored time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("stored times must be strictly increasing")
        # field_stacks: dict name -> array (n_times, n, n)
        self.n = next(iter(field_stacks.values())).shape[-1]
        self.h = TWO_PI / self.n
        self.coefs = {}
        for name, stack in field_stacks.items():
            cs = np.empty((len(self.times), self.n, self.n))
            for i in range(len(self.times)):
                cs[i] = PeriodicSpline2D(stack[i]).coef
            self.coefs[name] = cs

    def _window(self, t):
        m = len(self.times)
        if m == 1:
            return np.array([0]), np.array([1.0])
        k = min(4, m)
        j = int(np.searchsorted(self.times, t)) - 1
        j0 = min(max(j - 1, 0), m - k)
        idx = np.arange(j0, j0 + k)
        ts = self.times[idx]
        w = np.ones(k)
        for a in range(k):
            for b in range(k):
                if a != b:
                    w[a] *= (t - ts[b]) / (ts[a] - ts[b])
        return idx, w

    def sample(self, name, t, pts):
        """Interpolated field `name` at scalar time t and points (..., 2)."""
        lo, hi = self.times[0], self.times[-1]
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError(f"time {t} outside stored range [{lo}, {hi}]")
        idx, w = self._window(float(np.clip(t, lo, hi)))
        cs = self.coefs[name]
        coef = np.einsum("a,aij->ij", w, cs[idx])
        return _spline_eval(coef, self.n, self.h, pts)
