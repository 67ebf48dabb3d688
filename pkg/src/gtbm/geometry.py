"""Time-dependent metric families in explicit charts.

Every built-in family is conformally flat in its chart, g(t,x) = e^{u(t,x)} I,
so metric, Christoffel, and curvature evaluation reduce to closed-form
derivatives of the log conformal factor u.  Evaluators are vectorized over
points: x has shape (..., n) and results gain trailing tensor axes.

Conventions:
  * Ricci-flow families satisfy d/dt g = -kappa * Ric with kappa stored on
    the family (kappa=2 geometric convention, kappa=1 probabilistic).
  * The sphere uses two stereographic charts (0: origin at one pole,
    1: origin at the antipode) with transition y = x/|x|^2 on the overlap.
  * Finite-lifetime families refuse evaluation for t > 0.95 * t_max, where
    the metric is close to degenerate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    NoOverlapError,
    NonSPDError,
    TimeRangeError,
    UnsupportedOperationError,
)

HARD_CHART_RADIUS = 10.0  # paths beyond this abort (no transition available)
SPHERE_SWITCH_RADIUS = 1.5  # default stereographic chart-switch trigger


@dataclass
class ChartPoint:
    """A manifold point as (chart label, chart coordinates)."""

    chart_id: int
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if not np.all(np.isfinite(self.coords)):
            raise DomainError("chart coordinates must be finite")


@dataclass
class CurvatureData:
    """Ricci data at one point: tensor, raised tensor, scalar, eigenvalues."""

    ricci: np.ndarray
    ricci_sharp: np.ndarray
    scalar: float
    eigenvalues: np.ndarray


def sym_sqrt(mat):
    """Unique symmetric positive definite square root of an SPD matrix.

    Accepts batched input (..., n, n).  Raises NonSPDError when any
    eigenvalue is <= 0.
    """
    mat = np.asarray(mat, dtype=float)
    w, v = np.linalg.eigh(mat)
    if np.any(w <= 0.0):
        raise NonSPDError(f"matrix not positive definite (min eig {w.min():.3e})")
    return np.einsum("...ik,...k,...jk->...ij", v, np.sqrt(w), v)


def _eye_like(x, n):
    shape = x.shape[:-1] + (n, n)
    out = np.zeros(shape)
    idx = np.arange(n)
    out[..., idx, idx] = 1.0
    return out


class MetricFamily:
    """Base contract for a time-dependent metric family in charts.

    Subclasses provide vectorized tensor evaluators.  All state is frozen at
    construction; evaluators are pure and thread-safe.
    """

    name = "abstract"
    dim = 0
    t_max = math.inf
    flow_kappa = 0.0
    n_charts = 1
    degenerate_lifetime = False  # if True, refuse t > 0.95 * t_max
    has_closed_christoffel = True

    # -- time / domain guards -------------------------------------------------

    def check_time(self, t):
        if t < 0.0:
            raise TimeRangeError(f"negative metric time {t}")
        limit = 0.95 * self.t_max if self.degenerate_lifetime else self.t_max
        if t > limit:
            raise TimeRangeError(
                f"metric time {t} beyond usable lifetime {limit:.6g} "
                f"(t_max={self.t_max:.6g})"
            )

    def chart_valid_mask(self, x, chart=0):
        """Boolean mask of points inside the hard validity region."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) <= HARD_CHART_RADIUS

    def boundary_distance(self, x, chart=0):
        """Distance to the chart boundary (+inf when boundaryless)."""
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], np.inf)

    def check_point(self, p):
        if not (0 <= p.chart_id < self.n_charts):
            raise DomainError(
                f"chart id {p.chart_id} invalid for family with {self.n_charts} chart(s)"
            )
        if not np.all(self.chart_valid_mask(p.coords, p.chart_id)):
            raise DomainError(f"point {p.coords} outside chart validity region")

    # -- tensors ---------------------------------------------------------------

    def metric(self, t, x, chart=0):
        raise NotImplementedError

    def metric_inv(self, t, x, chart=0):
        return np.linalg.inv(self.metric(t, x, chart))

    def dt_metric(self, t, x, chart=0):
        raise NotImplementedError

    def christoffel(self, t, x, chart=0):
        raise UnsupportedOperationError(f"{self.name}: no closed-form Christoffels")

    def ricci(self, t, x, chart=0):
        raise UnsupportedOperationError(f"{self.name}: no closed-form Ricci")

    def scalar(self, t, x, chart=0):
        ric = self.ricci(t, x, chart)
        ginv = self.metric_inv(t, x, chart)
        return np.einsum("...ij,...ij->...", ginv, ric)

    def ricci_sharp(self, t, x, chart=0):
        return np.einsum(
            "...ik,...kj->...ij", self.metric_inv(t, x, chart), self.ricci(t, x, chart)
        )

    def ricci_sq_trace(self, t, x, chart=0):
        """Sum of squared Ricci-operator eigenvalues, tr((g^-1 Ric)^2)."""
        sharp = self.ricci_sharp(t, x, chart)
        return np.einsum("...ij,...ji->...", sharp, sharp)

    def dtg_sharp(self, t, x, chart=0):
        """Raised time derivative of the metric, g^{-1} d_t g."""
        return np.einsum(
            "...ik,...kj->...ij", self.metric_inv(t, x, chart), self.dt_metric(t, x, chart)
        )

    def frame_noise_rotation(self, t, x, frames, chart=0):
        """Orthogonal map O_t = sqrt(g^{-1}) g U_t from frame noise to the
        coordinate-SDE noise (dB = O dW); needed by stochastic weights."""
        sg = np.einsum(
            "...ik,...kj->...ij",
            self.inv_sqrt_metric(t, x, chart),
            self.metric(t, x, chart),
        )
        return np.einsum("...ik,...kj->...ij", sg, frames)

    # -- SDE coefficients --------------------------------------------------------

    def inv_sqrt_metric(self, t, x, chart=0):
        return sym_sqrt(self.metric_inv(t, x, chart))

    def bm_drift(self, t, x, chart=0):
        """Coordinate drift of the metric Brownian motion, -1/2 g^{kl} Gamma^i_{kl}."""
        gamma = self.christoffel(t, x, chart)
        ginv = self.metric_inv(t, x, chart)
        return -0.5 * np.einsum("...kl,...ikl->...i", ginv, gamma)

    # -- finite-difference fallbacks ----------------------------------------------

    def christoffel_fd(self, t, x, chart=0, h_fd=None):
        """Central-difference Christoffels from metric evaluations."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        h = h_fd if h_fd is not None else 1e-4 * max(1.0, float(np.max(np.abs(x))))
        if np.any(self.boundary_distance(x, chart) <= 2.0 * h):
            raise DomainError("point too close to chart boundary for finite differences")
        dg = np.zeros(x.shape[:-1] + (n, n, n))  # dg[..., k, i, j] = d_k g_ij
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dg[..., k, :, :] = (
                self.metric(t, x + e, chart) - self.metric(t, x - e, chart)
            ) / (2.0 * h)
        ginv = self.metric_inv(t, x, chart)
        # Gamma^i_{kl} = 1/2 g^{im} (d_k g_{ml} + d_l g_{mk} - d_m g_{kl})
        term = (
            np.einsum("...kml->...mkl", dg)
            + np.einsum("...lmk->...mkl", dg)
            - np.einsum("...mkl->...mkl", dg)
        )
        return 0.5 * np.einsum("...im,...mkl->...ikl", ginv, term)

    def ricci_fd(self, t, x, chart=0, h_fd=None):
        """Ricci tensor by central differences of the Christoffel field."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        h = h_fd if h_fd is not None else 1e-4 * max(1.0, float(np.max(np.abs(x))))

        def gamma_at(y):
            if self.has_closed_christoffel:
                return self.christoffel(t, y, chart)
            return self.christoffel_fd(t, y, chart, h_fd=h)

        gam = gamma_at(x)
        dgam = np.zeros(x.shape[:-1] + (n, n, n, n))  # dgam[..., a, i, j, k] = d_a G^i_jk
        for a in range(n):
            e = np.zeros(n)
            e[a] = h
            dgam[..., a, :, :, :] = (gamma_at(x + e) - gamma_at(x - e)) / (2.0 * h)
        ric = (
            np.einsum("...aaij->...ij", dgam)
            - np.einsum("...iaaj->...ij", dgam)
            + np.einsum("...aab,...bij->...ij", gam, gam)
            - np.einsum("...aib,...baj->...ij", gam, gam)
        )
        return 0.5 * (ric + np.swapaxes(ric, -1, -2))

    # -- charts ---------------------------------------------------------------------

    def transition(self, x, chart_from):
        """Map coords to the other chart; returns (y, chart_to, jacobian)."""
        raise NoOverlapError(f"{self.name}: single-chart family has no transitions")

    def switch_mask(self, x, chart):
        """Paths for which the chart-switch trigger fires (default: never)."""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1], dtype=bool)

    # -- derived families -------------------------------------------------------------

    def static_at(self, t0):
        """Family frozen at metric time t0 (time derivative zero)."""
        raise NotImplementedError

    def distance_from(self, p0, x, chart=None):
        """g(0)-geodesic distance from ChartPoint p0 to points x (vectorized)."""
        raise UnsupportedOperationError(f"{self.name}: no closed-form distance")


class ConformalFamily(MetricFamily):
    """Family with g(t,x) = e^{u(t,x)} * identity in every chart.

    Subclasses implement the scalar field u and its derivatives:
      conf_u    -> (...,)      log conformal factor
      conf_du   -> (..., n)    flat spatial gradient
      conf_d2u  -> (..., n, n) flat Hessian
      conf_dtu  -> (...,)      time derivative
    """

    def conf_u(self, t, x, chart=0):
        raise NotImplementedError

    def conf_du(self, t, x, chart=0):
        raise NotImplementedError

    def conf_d2u(self, t, x, chart=0):
        raise NotImplementedError

    def conf_dtu(self, t, x, chart=0):
        raise NotImplementedError

    def conf_lap_u(self, t, x, chart=0):
        return np.einsum("...ii->...", self.conf_d2u(t, x, chart))

    # -- generic conformal tensors ----------------------------------------------------

    def metric(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        eu = np.exp(self.conf_u(t, x, chart))
        return eu[..., None, None] * _eye_like(x, self.dim)

    def metric_inv(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        eu = np.exp(-self.conf_u(t, x, chart))
        return eu[..., None, None] * _eye_like(x, self.dim)

    def dt_metric(self, t, x, chart=0):
        return self.conf_dtu(t, x, chart)[..., None, None] * self.metric(t, x, chart)

    def christoffel(self, t, x, chart=0):
        # Gamma^i_{jk} = (d_k u delta_ij + d_j u delta_ik - d_i u delta_jk)/2
        x = np.asarray(x, dtype=float)
        n = self.dim
        du = self.conf_du(t, x, chart)
        eye = np.eye(n)
        gam = (
            np.einsum("...k,ij->...ijk", du, eye)
            + np.einsum("...j,ik->...ijk", du, eye)
            - np.einsum("...i,jk->...ijk", du, eye)
        )
        return 0.5 * gam

    def ricci(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        n = self.dim
        if n == 2:  # surface case collapses to -(lap u / 2) delta
            lap = self.conf_lap_u(t, x, chart)
            return -0.5 * lap[..., None, None] * _eye_like(x, 2)
        du = self.conf_du(t, x, chart)
        d2u = self.conf_d2u(t, x, chart)
        lap = self.conf_lap_u(t, x, chart)
        grad2 = np.einsum("...i,...i->...", du, du)
        eye = _eye_like(x, n)
        ric = -0.5 * (n - 2) * (d2u - 0.5 * np.einsum("...i,...j->...ij", du, du))
        ric = ric - 0.5 * (lap + 0.5 * (n - 2) * grad2)[..., None, None] * eye
        return ric

    def scalar(self, t, x, chart=0):
        if self.dim == 2:
            eu = np.exp(-self.conf_u(t, x, chart))
            return -eu * self.conf_lap_u(t, x, chart)
        ric = self.ricci(t, x, chart)
        eu = np.exp(-self.conf_u(t, x, chart))
        return eu * np.einsum("...ii->...", ric)

    def ricci_sharp(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        if self.dim == 2:  # R/2 times the identity, one scalar evaluation
            s = self.scalar(t, x, chart)
            return 0.5 * s[..., None, None] * _eye_like(x, 2)
        eu = np.exp(-self.conf_u(t, x, chart))
        return eu[..., None, None] * self.ricci(t, x, chart)

    def dtg_sharp(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return self.conf_dtu(t, x, chart)[..., None, None] * _eye_like(x, self.dim)

    def frame_noise_rotation(self, t, x, frames, chart=0):
        # sqrt(g^{-1}) g = e^{u/2} I for a conformal metric
        s = np.exp(0.5 * self.conf_u(t, np.asarray(x, dtype=float), chart))
        return s[..., None, None] * frames

    def inv_sqrt_metric(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        s = np.exp(-0.5 * self.conf_u(t, x, chart))
        return s[..., None, None] * _eye_like(x, self.dim)

    def bm_drift(self, t, x, chart=0):
        # g^{kl} Gamma^i_{kl} = e^{-u} (1 - n/2) d_i u; identically zero in 2D
        x = np.asarray(x, dtype=float)
        if self.dim == 2:
            return np.zeros(x.shape)
        eu = np.exp(-self.conf_u(t, x, chart))
        du = self.conf_du(t, x, chart)
        return -0.5 * (1.0 - 0.5 * self.dim) * eu[..., None] * du

    def static_at(self, t0):
        self.check_time(t0)
        return FrozenFamily(self, t0)


class FrozenFamily(ConformalFamily):
    """A conformal family with the clock stopped at t0."""

    def __init__(self, base, t0):
        self.base = base
        self.t0 = float(t0)
        self.name = f"{base.name}-frozen"
        self.dim = base.dim
        self.n_charts = base.n_charts
        self.t_max = math.inf
        self.flow_kappa = 0.0
        self.degenerate_lifetime = False

    def conf_u(self, t, x, chart=0):
        return self.base.conf_u(self.t0, x, chart)

    def conf_du(self, t, x, chart=0):
        return self.base.conf_du(self.t0, x, chart)

    def conf_d2u(self, t, x, chart=0):
        return self.base.conf_d2u(self.t0, x, chart)

    def conf_lap_u(self, t, x, chart=0):
        return self.base.conf_lap_u(self.t0, x, chart)

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def chart_valid_mask(self, x, chart=0):
        return self.base.chart_valid_mask(x, chart)

    def boundary_distance(self, x, chart=0):
        return self.base.boundary_distance(x, chart)

    def transition(self, x, chart_from):
        return self.base.transition(x, chart_from)

    def switch_mask(self, x, chart):
        return self.base.switch_mask(x, chart)

    def distance_from(self, p0, x, chart=None):
        return self.base.distance_from(p0, x, chart)


class EuclideanFamily(ConformalFamily):
    """Static flat R^n (or the flat [0,2pi)^n torus; same chart formulas)."""

    def __init__(self, dim=2, periodic=False):
        self.dim = int(dim)
        self.periodic = bool(periodic)
        self.name = "euclidean"

    def conf_u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def conf_du(self, t, x, chart=0):
        return np.zeros(np.asarray(x, dtype=float).shape)

    def conf_d2u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim, self.dim))

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def chart_valid_mask(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.ones(x.shape[:-1], dtype=bool)
        return super().chart_valid_mask(x, chart)

    def distance_from(self, p0, x, chart=None):
        x = np.asarray(x, dtype=float)
        d = x - p0.coords
        if self.periodic:
            d = np.mod(d + np.pi, 2.0 * np.pi) - np.pi
        return np.linalg.norm(d, axis=-1)


class SphereFamily(ConformalFamily):
    """Round sphere under d/dt g = -kappa Ric, in two stereographic charts.

    g(t) = c(t) * g_round with c(t) = size - kappa (n-1) t, g_round the unit
    round metric 4/(1+|x|^2)^2 * I.  `size` is the initial squared radius;
    kappa <= 0 gives an immortal (static or expanding) family.
    """

    n_charts = 2

    def __init__(self, dim=2, kappa=2.0, size=1.0, switch_radius=SPHERE_SWITCH_RADIUS):
        if dim < 2:
            raise ValueError("sphere dimension must be >= 2")
        self.dim = int(dim)
        self.flow_kappa = float(kappa)
        self.size = float(size)
        self.switch_radius = float(switch_radius)
        rate = self.flow_kappa * (self.dim - 1)
        self.t_max = self.size / rate if rate > 0 else math.inf
        self.degenerate_lifetime = rate > 0
        self.name = "sphere"

    def scale(self, t):
        return self.size - self.flow_kappa * (self.dim - 1) * t

    def conf_u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return math.log(4.0 * self.scale(t)) - 2.0 * np.log1p(r2)

    def conf_du(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return -4.0 * x / (1.0 + r2)[..., None]

    def conf_d2u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        d = 1.0 + r2
        eye = _eye_like(x, self.dim)
        xxt = np.einsum("...i,...j->...ij", x, x)
        return -4.0 * eye / d[..., None, None] + 8.0 * xxt / (d**2)[..., None, None]

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        rate = -self.flow_kappa * (self.dim - 1) / self.scale(t)
        return np.full(x.shape[:-1], rate)

    def transition(self, x, chart_from):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        if np.any(r2 <= 0.0):
            raise NoOverlapError("stereographic transition undefined at the chart origin")
        y = x / r2[..., None]
        eye = _eye_like(x, self.dim)
        xxt = np.einsum("...i,...j->...ij", x, x)
        jac = (eye * r2[..., None, None] - 2.0 * xxt) / (r2**2)[..., None, None]
        return y, 1 - chart_from, jac

    def switch_mask(self, x, chart):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) > self.switch_radius

    def embed(self, x, chart):
        """Unit-sphere embedding in R^{n+1}; chart 1 flips the last axis."""
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        d = 1.0 + r2
        out = np.empty(x.shape[:-1] + (self.dim + 1,))
        out[..., : self.dim] = 2.0 * x / d[..., None]
        sign = np.where(np.asarray(chart) == 0, 1.0, -1.0)
        out[..., self.dim] = sign * (1.0 - r2) / d
        return out

    def distance_from(self, p0, x, chart=None):
        chart = p0.chart_id if chart is None else chart
        e0 = self.embed(p0.coords, p0.chart_id)
        e = self.embed(x, chart)
        dot = np.clip(np.einsum("...i,i->...", e, e0), -1.0, 1.0)
        return math.sqrt(self.size) * np.arccos(dot)


class HyperbolicFamily(ConformalFamily):
    """Hyperbolic space (curvature -1 initially) in the Poincare ball,
    evolving by g(t) = (1 + kappa (n-1) t) g(0)."""

    def __init__(self, dim=2, kappa=2.0):
        if dim < 2:
            raise ValueError("hyperbolic dimension must be >= 2")
        self.dim = int(dim)
        self.flow_kappa = float(kappa)
        self.name = "hyperbolic"

    def scale(self, t):
        return 1.0 + self.flow_kappa * (self.dim - 1) * t

    def conf_u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return math.log(4.0 * self.scale(t)) - 2.0 * np.log(1.0 - r2)

    def conf_du(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return 4.0 * x / (1.0 - r2)[..., None]

    def conf_d2u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        d = 1.0 - r2
        eye = _eye_like(x, self.dim)
        xxt = np.einsum("...i,...j->...ij", x, x)
        return 4.0 * eye / d[..., None, None] + 8.0 * xxt / (d**2)[..., None, None]

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        rate = self.flow_kappa * (self.dim - 1) / self.scale(t)
        return np.full(x.shape[:-1], rate)

    def chart_valid_mask(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) < 1.0

    def boundary_distance(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        return 1.0 - np.linalg.norm(x, axis=-1)

    def distance_from(self, p0, x, chart=None):
        x = np.asarray(x, dtype=float)
        p = p0.coords
        diff2 = np.einsum("...i,...i->...", x - p, x - p)
        den = (1.0 - np.dot(p, p)) * (1.0 - np.einsum("...i,...i->...", x, x))
        return np.arccosh(1.0 + 2.0 * diff2 / den)


class CigarFamily(ConformalFamily):
    """Rotationally symmetric steady soliton on R^2.

    g(t,x) = I / (q(t) + |x|^2) with q(t) = e^{2 kappa t} solves
    d/dt g = -kappa Ric; kappa=2 is the classical presentation.
    """

    def __init__(self, kappa=2.0):
        self.dim = 2
        self.flow_kappa = float(kappa)
        self.name = "cigar"

    def _q(self, t):
        return math.exp(2.0 * self.flow_kappa * t)

    def conf_u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return -np.log(self._q(t) + r2)

    def conf_du(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        return -2.0 * x / (self._q(t) + r2)[..., None]

    def conf_d2u(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        r2 = np.einsum("...i,...i->...", x, x)
        d = self._q(t) + r2
        eye = _eye_like(x, self.dim)
        xxt = np.einsum("...i,...j->...ij", x, x)
        return -2.0 * eye / d[..., None, None] + 4.0 * xxt / (d**2)[..., None, None]

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        q = self._q(t)
        r2 = np.einsum("...i,...i->...", x, x)
        return -2.0 * self.flow_kappa * q / (q + r2)

    def distance_from(self, p0, x, chart=None):
        if np.any(p0.coords != 0.0):
            raise UnsupportedOperationError(
                "cigar distance is closed-form only from the origin"
            )
        x = np.asarray(x, dtype=float)
        return np.arcsinh(np.linalg.norm(x, axis=-1))


class StaticModeFamily(ConformalFamily):
    """Static conformal torus metric e^{A cos(k.x)} delta on [0, 2pi)^2."""

    def __init__(self, amplitude=0.2, mode_kx=1, mode_ky=0):
        self.dim = 2
        self.amplitude = float(amplitude)
        self.k = np.array([float(mode_kx), float(mode_ky)])
        self.name = "static_custom"

    def _phase(self, x):
        return np.einsum("...i,i->...", np.asarray(x, dtype=float), self.k)

    def conf_u(self, t, x, chart=0):
        return self.amplitude * np.cos(self._phase(x))

    def conf_du(self, t, x, chart=0):
        s = -self.amplitude * np.sin(self._phase(x))
        return s[..., None] * self.k

    def conf_d2u(self, t, x, chart=0):
        c = -self.amplitude * np.cos(self._phase(x))
        return c[..., None, None] * np.einsum("i,j->ij", self.k, self.k)

    def conf_dtu(self, t, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def chart_valid_mask(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)


class TorusConformalFamily(ConformalFamily):
    """Numeric conformal torus family backed by a solved curvature flow.

    The stored solution evolves by the normalized flow du/dt = r - R; with
    time_scale = kappa/2 the family g(t) = e^{u(kappa t / 2)} delta satisfies
    d/dt g = -kappa Ric + r g (and r = 0 on the torus).
    """

    has_closed_christoffel = True

    def __init__(self, solution, kappa=2.0):
        from .flow_solver import build_interpolator  # local import, no cycle

        self.dim = 2
        self.flow_kappa = float(kappa)
        self.time_scale = float(kappa) / 2.0
        self.solution = solution
        self.interp = build_interpolator(solution)
        self.t_max = solution.times[-1] / self.time_scale
        self.degenerate_lifetime = False
        self.name = "torus_nrf"

    def _ts(self, t):
        return self.time_scale * t

    def conf_u(self, t, x, chart=0):
        return self.interp.sample("u", self._ts(t), x)

    def conf_du(self, t, x, chart=0):
        ts = self._ts(t)
        ux = self.interp.sample("ux", ts, x)
        uy = self.interp.sample("uy", ts, x)
        return np.stack([ux, uy], axis=-1)

    def conf_d2u(self, t, x, chart=0):
        ts = self._ts(t)
        uxx = self.interp.sample("uxx", ts, x)
        uxy = self.interp.sample("uxy", ts, x)
        uyy = self.interp.sample("uyy", ts, x)
        row0 = np.stack([uxx, uxy], axis=-1)
        row1 = np.stack([uxy, uyy], axis=-1)
        return np.stack([row0, row1], axis=-2)

    def conf_lap_u(self, t, x, chart=0):
        return self.interp.sample("lap_u", self._ts(t), x)

    def conf_dtu(self, t, x, chart=0):
        # du/dt = r - R along the stored flow, rescaled to metric time
        return -self.time_scale * self.interp.sample("R", self._ts(t), x)

    def scalar(self, t, x, chart=0):
        return self.interp.sample("R", self._ts(t), x)

    def scalar_partials(self, t, x, chart=0):
        """Chart partial derivatives of the scalar curvature (a covector)."""
        ts = self._ts(t)
        rx = self.interp.sample("Rx", ts, x)
        ry = self.interp.sample("Ry", ts, x)
        return np.stack([rx, ry], axis=-1)

    def scalar_gradient(self, t, x, chart=0):
        """g(t)-gradient of the scalar curvature (spectral partials, raised)."""
        eu = np.exp(-self.conf_u(t, x, chart))
        return eu[..., None] * self.scalar_partials(t, x, chart)

    def chart_valid_mask(self, x, chart=0):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def distance_from(self, p0, x, chart=None):
        raise UnsupportedOperationError("no closed-form distance on the curved torus")


# ---------------------------------------------------------------------------
# Single-point operations on ChartPoints
# ---------------------------------------------------------------------------


def metric_at(family, t, p):
    """Metric tensor g(t, p) as an (n, n) SPD matrix."""
    family.check_time(t)
    family.check_point(p)
    return family.metric(t, p.coords, p.chart_id)


def dt_metric_at(family, t, p):
    family.check_time(t)
    family.check_point(p)
    return family.dt_metric(t, p.coords, p.chart_id)


def christoffel_closed(family, t, p):
    family.check_time(t)
    family.check_point(p)
    if not family.has_closed_christoffel:
        raise UnsupportedOperationError(f"{family.name} is numeric-only")
    return family.christoffel(t, p.coords, p.chart_id)


def christoffel_fd(family, t, p, h_fd=None):
    family.check_time(t)
    family.check_point(p)
    return family.christoffel_fd(t, p.coords, p.chart_id, h_fd=h_fd)


def curvature_at(family, t, p):
    """Ricci tensor, raised operator, scalar, and sorted real eigenvalues."""
    family.check_time(t)
    family.check_point(p)
    try:
        ric = family.ricci(t, p.coords, p.chart_id)
    except UnsupportedOperationError:
        ric = family.ricci_fd(t, p.coords, p.chart_id)
    g = family.metric(t, p.coords, p.chart_id)
    ginv = np.linalg.inv(g)
    sharp = ginv @ ric
    scal = float(np.trace(sharp))
    # eigenvalues of the g-self-adjoint operator via the symmetric conjugate
    g_isqrt = sym_sqrt(ginv)
    sym = g_isqrt @ ric @ g_isqrt
    eig = np.sort(np.linalg.eigvalsh(0.5 * (sym + sym.T)))
    return CurvatureData(ricci=ric, ricci_sharp=sharp, scalar=scal, eigenvalues=eig)


def chart_transition(family, p, target_chart):
    """Express p in target_chart; returns (ChartPoint, transition Jacobian)."""
    family.check_point(p)
    if target_chart == p.chart_id:
        return ChartPoint(p.chart_id, p.coords.copy()), np.eye(family.dim)
    y, chart_to, jac = family.transition(p.coords, p.chart_id)
    if chart_to != target_chart:
        raise NoOverlapError(f"no transition from chart {p.chart_id} to {target_chart}")
    return ChartPoint(chart_to, y), jac


def family_from_config(section):
    """Build a family from a config-section mapping (string values allowed)."""
    from .errors import ConfigError

    get = lambda key, default=None: section.get(key, default)
    name = get("name")
    if name is None:
        raise ConfigError("family.name is required")
    name = str(name).strip().lower()
    dim = int(get("dim", 2))
    kappa = float(get("kappa", 2.0))
    if name == "euclidean":
        return EuclideanFamily(dim=dim, periodic=str(get("periodic", "false")).lower() == "true")
    if name == "sphere":
        return SphereFamily(dim=dim, kappa=kappa, size=float(get("size", 1.0)))
    if name == "hyperbolic":
        return HyperbolicFamily(dim=dim, kappa=kappa)
    if name == "cigar":
        return CigarFamily(kappa=kappa)
    if name == "static_custom":
        return StaticModeFamily(
            amplitude=float(get("amplitude", 0.2)),
            mode_kx=int(get("mode_kx", 1)),
            mode_ky=int(get("mode_ky", 0)),
        )
    if name == "torus_nrf":
        from .flow_solver import load_snapshot

        path = get("snapshot")
        if not path:
            raise ConfigError("family.snapshot is required for torus_nrf")
        return TorusConformalFamily(load_snapshot(path), kappa=kappa)
    raise ConfigError(f"unknown family name {name!r}")
