"""Closed-form concentration Green's function of a cylinder with Robin walls.

The response to a unit impulsive release at ``(rho_tx, z_tx, phi_tx)`` and
time ``t0`` factorizes into a 1-D axial advection-diffusion-decay kernel and
a 2-D radial-azimuthal Bessel series:

    C = C_z(z, t) * sum_{n,m} H_nm J_n(lam_nm rho) cos(n (phi - phi_tx))
                              * exp(-D lam_nm^2 (t - t0))

with ``H_nm = L_n J_n(lam_nm rho_tx) / N_nm``. All quantities are SI.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .eigenmodes import (
    ABSORBING,
    EigenMode,
    RadialEigenproblem,
    angular_weight,
    bessel_j_orders,
    find_eigenvalues,
    find_modes,
    normalization,
)
from .quadrature import QuadratureError, gauss_legendre_nd

__all__ = [
    "CgfSeries",
    "CylPoint",
    "CylinderEnvironment",
    "FreeSpaceSeries",
    "ModeBasis",
    "PointSource",
    "QuadratureError",
    "SMALL_TAU",
    "SmallTimeWarning",
    "VolumetricSource",
    "axial_green",
    "cgf",
    "cgf_axisymmetric",
    "evaluate_grid",
    "green_function",
    "radial_azimuthal_green",
    "superpose",
    "unbounded_cgf",
]

#: Below this elapsed time (s) the truncated series is not trusted.
SMALL_TAU = 1e-6


class SmallTimeWarning(RuntimeWarning):
    """Series evaluated at an elapsed time too short for its truncation."""


@dataclass(frozen=True)
class CylinderEnvironment:
    """Cylinder geometry, medium and wall chemistry, all in SI units.

    ``boundary_rate`` is k_f (m/s): 0 is reflecting, :data:`ABSORBING` is
    perfectly absorbing.
    """

    radius: float
    diffusion: float
    degradation: float = 0.0
    velocity: float = 0.0
    boundary_rate: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.diffusion > 0:
            raise ValueError("diffusion coefficient must be positive")
        if not self.degradation >= 0:
            raise ValueError("degradation rate must be >= 0")
        if not self.boundary_rate >= 0:
            raise ValueError("boundary rate must be >= 0 or ABSORBING")

    @property
    def absorbing(self) -> bool:
        return math.isinf(self.boundary_rate)

    def replace(self, **changes) -> "CylinderEnvironment":
        values = {
            "radius": self.radius,
            "diffusion": self.diffusion,
            "degradation": self.degradation,
            "velocity": self.velocity,
            "boundary_rate": self.boundary_rate,
        }
        values.update(changes)
        return CylinderEnvironment(**values)


@dataclass(frozen=True)
class CylPoint:
    """Point in cylindrical coordinates (rho, z, phi)."""

    rho: float
    z: float
    phi: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    @classmethod
    def from_cartesian(cls, x: float, y: float, z: float) -> "CylPoint":
        return cls(math.hypot(x, y), z, math.atan2(y, x) % (2 * math.pi))

    def cartesian(self) -> tuple[float, float, float]:
        return (self.rho * math.cos(self.phi), self.rho * math.sin(self.phi), self.z)


# ---------------------------------------------------------------------------
# Axial and free-space kernels
# ---------------------------------------------------------------------------


def axial_green(z, t, z_tx: float, t0: float, env: CylinderEnvironment):
    """1-D drift-diffusion-decay kernel (1/m); zero for ``t <= t0``."""
    z, t = np.broadcast_arrays(np.asarray(z, float), np.asarray(t, float))
    tau = t - t0
    out = np.zeros(tau.shape)
    live = tau > 0
    if np.any(live):
        tl = tau[live]
        D = env.diffusion
        shift = z[live] - z_tx - env.velocity * tl
        out[live] = np.exp(-(shift**2) / (4 * D * tl) - env.degradation * tl) / np.sqrt(
            4 * math.pi * D * tl
        )
    return out[()] if out.ndim == 0 else out


def unbounded_cgf(
    observation: CylPoint,
    t,
    source: CylPoint,
    D: float,
    k_d: float = 0.0,
    v: float = 0.0,
    t0: float = 0.0,
):
    """Free-space Green's function with axial drift and first-order decay (1/m^3)."""
    t = np.asarray(t, float)
    tau = t - t0
    ox, oy, oz = observation.cartesian()
    sx, sy, sz = source.cartesian()
    out = np.zeros(tau.shape)
    live = tau > 0
    if np.any(live):
        tl = tau[live]
        r2 = (ox - sx) ** 2 + (oy - sy) ** 2 + (oz - sz - v * tl) ** 2
        out[live] = np.exp(-r2 / (4 * D * tl) - k_d * tl) / (4 * math.pi * D * tl) ** 1.5
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Mode basis and series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeBasis:
    """Radial-azimuthal eigenmodes of one environment, flattened to arrays."""

    env: CylinderEnvironment
    modes: tuple[EigenMode, ...]
    orders: np.ndarray = field(repr=False, compare=False)
    wavenumbers: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)  # L_n / N_nm

    @classmethod
    def from_modes(cls, env: CylinderEnvironment, modes: Iterable[EigenMode]) -> "ModeBasis":
        modes = tuple(modes)
        return cls(
            env,
            modes,
            np.array([m.order for m in modes], dtype=int),
            np.array([m.wavenumber for m in modes]),
            np.array([m.angular_weight / m.normalization for m in modes]),
        )

    @classmethod
    def build(cls, env: CylinderEnvironment, n_max: int = 3, m_max: int = 5) -> "ModeBasis":
        modes = find_modes(env.diffusion, env.boundary_rate, env.radius, n_max, m_max)
        return cls.from_modes(env, modes)

    @property
    def n_max(self) -> int:
        return int(self.orders.max())

    def radial_values(self, rho) -> np.ndarray:
        """``J_{n_k}(lam_k * rho)`` with shape ``(K,) + rho.shape``."""
        rho = np.asarray(rho, float)
        arg = self.wavenumbers.reshape((-1,) + (1,) * rho.ndim) * rho
        table = bessel_j_orders(self.n_max, arg)
        k = np.arange(len(self.modes))
        return table[self.orders, k]

    def temporal(self, tau) -> np.ndarray:
        """``exp(-D lam_k^2 tau)`` with shape ``(K,) + tau.shape`` (zero for tau <= 0)."""
        tau = np.asarray(tau, float)
        lam2 = (self.wavenumbers**2).reshape((-1,) + (1,) * tau.ndim)
        return np.where(tau > 0, np.exp(-self.env.diffusion * lam2 * np.maximum(tau, 0)), 0.0)


def green_function(basis: ModeBasis, rho, z, phi, src_rho, src_z, src_phi, tau):
    """Full cylinder Green's function, broadcasting over every argument.

    ``tau`` is the elapsed time ``t - t0``; the result is zero where
    ``tau <= 0``.
    """
    rho, z, phi, src_rho, src_z, src_phi, tau = np.broadcast_arrays(
        *(np.asarray(a, float) for a in (rho, z, phi, src_rho, src_z, src_phi, tau))
    )
    _warn_small_tau(tau)
    ang = np.cos(basis.orders.reshape((-1,) + (1,) * rho.ndim) * (phi - src_phi))
    w = basis.weights.reshape((-1,) + (1,) * rho.ndim)
    radial = np.sum(
        w * basis.radial_values(src_rho) * basis.radial_values(rho) * ang * basis.temporal(tau),
        axis=0,
    )
    return axial_green(z - src_z, tau, 0.0, 0.0, basis.env) * radial


def _warn_small_tau(tau):
    tau = np.asarray(tau)
    if np.any((tau > 0) & (tau < SMALL_TAU)):
        warnings.warn(
            f"series evaluated at elapsed time below {SMALL_TAU:g} s; "
            "truncation error is not controlled there",
            SmallTimeWarning,
            stacklevel=3,
        )


class CgfSeries:
    """Truncated Green's function for one source point and release time.

    Parameters
    ----------
    env : CylinderEnvironment
    source : CylPoint
        Release location.
    t0 : float
        Release time (s).
    n_max, m_max : int
        Keep azimuthal orders ``0..n_max`` and ``m_max`` radial roots each.
    tail_tolerance : float
        Dimensionless tolerance used by :meth:`adaptive` and
        :meth:`tail_bound`, relative to the uniform density ``1/(pi rho_c^2)``.
    """

    def __init__(
        self,
        env: CylinderEnvironment,
        source: CylPoint,
        t0: float = 0.0,
        n_max: int = 3,
        m_max: int = 5,
        tail_tolerance: float = 1e-3,
        basis: ModeBasis | None = None,
    ):
        if source.rho > env.radius:
            raise ValueError("source lies outside the cylinder")
        self.env = env
        self.source = source
        self.t0 = float(t0)
        self.tail_tolerance = tail_tolerance
        self.basis = basis if basis is not None else ModeBasis.build(env, n_max, m_max)
        self.n_max = self.basis.n_max
        self.m_max = max(m.index for m in self.basis.modes)
        self.coefficients = self.basis.weights * self.basis.radial_values(source.rho)

    @property
    def modes(self) -> tuple[EigenMode, ...]:
        return self.basis.modes

    @classmethod
    def adaptive(
        cls,
        env: CylinderEnvironment,
        source: CylPoint,
        tau_min: float,
        t0: float = 0.0,
        tail_tolerance: float = 1e-6,
        max_order: int = 200,
        max_index: int = 400,
    ) -> "CgfSeries":
        """Grow the mode set until every omitted term is below tolerance at ``tau_min``.

        A term is bounded by ``(L_n / N_nm) exp(-D lam^2 tau_min)`` (|J_n| <= 1
        at both ends), measured against ``1/(pi rho_c^2)``.
        """
        if tau_min <= 0:
            raise ValueError("tau_min must be positive")
        ref = 1.0 / (math.pi * env.radius**2)
        D = env.diffusion
        modes: list[EigenMode] = []
        for n in range(max_order + 1):
            problem = RadialEigenproblem(D, env.boundary_rate, env.radius, n)
            count = 8
            while True:
                lams = find_eigenvalues(problem, count)
                bounds = np.atleast_1d(
                    angular_weight(n) / normalization(lams, n, env.radius)
                    * np.exp(-D * lams**2 * tau_min)
                    / ref
                )
                if n > 0 and bounds[0] < tail_tolerance:
                    break
                below = np.nonzero(bounds[1:] < tail_tolerance)[0]
                if below.size:
                    keep = int(below[0]) + 1
                    break
                if count >= max_index:
                    raise RuntimeError("adaptive truncation exceeded the radial mode cap")
                count *= 2
            if n > 0 and bounds[0] < tail_tolerance:
                break
            for m, lam in enumerate(lams[:keep], start=1):
                modes.append(
                    EigenMode(n, m, float(lam), float(normalization(lam, n, env.radius)), angular_weight(n))
                )
        else:
            raise RuntimeError("adaptive truncation exceeded the azimuthal order cap")
        series = cls(env, source, t0, tail_tolerance=tail_tolerance, basis=ModeBasis.from_modes(env, modes))
        return series

    def tail_bound(self, t) -> np.ndarray:
        """Bound on the first omitted shell of terms at time ``t`` (1/m^2).

        Sums ``(L_n / N_nm) exp(-D lam^2 tau)`` over the modes with
        ``n = n_max + 1`` (m <= m_max + 1) and ``m = m_max + 1`` (n <= n_max).
        """
        env = self.env
        tau = np.asarray(t, float) - self.t0
        extra = []
        for n in range(self.n_max + 2):
            problem = RadialEigenproblem(env.diffusion, env.boundary_rate, env.radius, n)
            lams = find_eigenvalues(problem, self.m_max + 1)
            picks = lams if n == self.n_max + 1 else lams[-1:]
            for lam in picks:
                extra.append((angular_weight(n) / normalization(lam, n, env.radius), lam))
        total = np.zeros(tau.shape)
        for w, lam in extra:
            total = total + w * np.exp(-env.diffusion * lam**2 * np.maximum(tau, 0))
        return np.where(tau > 0, total, 0.0)

    # evaluation -----------------------------------------------------------

    def _spatial(self, rho, phi) -> np.ndarray:
        rho = np.asarray(rho, float)
        phi = np.asarray(phi, float)
        shape = (-1,) + (1,) * np.broadcast(rho, phi).ndim
        ang = np.cos(self.basis.orders.reshape(shape) * (phi - self.source.phi))
        return self.coefficients.reshape(shape) * self.basis.radial_values(rho) * ang

    def radial_azimuthal(self, rho, phi, t):
        rho, phi, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (rho, phi, t)))
        tau = t - self.t0
        _warn_small_tau(tau)
        out = np.sum(self._spatial(rho, phi) * self.basis.temporal(tau), axis=0)
        return out[()] if out.ndim == 0 else out

    def concentration(self, rho, z, phi, t):
        """C(rho, z, phi, t) broadcasting over all four arguments (1/m^3)."""
        rho, z, phi, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (rho, z, phi, t)))
        radial = self.radial_azimuthal(rho, phi, t)
        return axial_green(z, t, self.source.z, self.t0, self.env) * radial

    def grid(self, rho, z, phi, times) -> np.ndarray:
        """Outer evaluation: points (P,) x times (T,) -> array (P, T)."""
        rho, z, phi = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float)) for a in (rho, z, phi)))
        times = np.atleast_1d(np.asarray(times, float))
        tau = times - self.t0
        _warn_small_tau(tau)
        spatial = self._spatial(rho, phi)  # (K, P)
        radial = spatial.T @ self.basis.temporal(tau)  # (P, T)
        axial = axial_green(z[:, None], times[None, :], self.source.z, self.t0, self.env)
        return axial * radial


def radial_azimuthal_green(rho, phi, t, series: CgfSeries):
    """Radial-azimuthal part of the Green's function (1/m^2)."""
    return series.radial_azimuthal(rho, phi, t)


def cgf(observation: CylPoint, t, series: CgfSeries):
    """Concentration at ``observation`` per unit released amount (1/m^3)."""
    return series.concentration(observation.rho, observation.z, observation.phi, t)


def cgf_axisymmetric(rho, z, t, series: CgfSeries):
    """Fast path for a source on the axis: only ``n = 0`` modes contribute."""
    if series.source.rho != 0:
        raise ValueError("axisymmetric evaluation needs a source on the axis (rho_tx = 0)")
    basis = series.basis
    keep = basis.orders == 0
    lam = basis.wavenumbers[keep]
    w = basis.weights[keep]
    rho, z, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (rho, z, t)))
    tau = t - series.t0
    _warn_small_tau(tau)
    shape = (-1,) + (1,) * rho.ndim
    lam = lam.reshape(shape)
    j0 = bessel_j_orders(0, lam * rho)[0]
    decay = np.where(tau > 0, np.exp(-series.env.diffusion * lam**2 * np.maximum(tau, 0)), 0.0)
    radial = np.sum(w.reshape(shape) * j0 * decay, axis=0)
    out = axial_green(z, t, series.source.z, series.t0, series.env) * radial
    return out[()] if out.ndim == 0 else out


class FreeSpaceSeries:
    """Unbounded-medium counterpart of :class:`CgfSeries` (no wall).

    Offers the same ``concentration`` / ``grid`` interface so channel code
    can treat the unbounded reference like any cylinder. ``env.radius`` is
    ignored.
    """

    def __init__(self, env: CylinderEnvironment, source: CylPoint, t0: float = 0.0):
        self.env = env.replace(radius=math.inf, boundary_rate=0.0)
        self.source = source
        self.t0 = float(t0)

    def concentration(self, rho, z, phi, t):
        rho, z, phi, t = np.broadcast_arrays(*(np.asarray(a, float) for a in (rho, z, phi, t)))
        env, src = self.env, self.source
        tau = t - self.t0
        out = np.zeros(tau.shape)
        live = tau > 0
        if np.any(live):
            tl = tau[live]
            d2 = rho[live] ** 2 + src.rho**2 - 2 * rho[live] * src.rho * np.cos(phi[live] - src.phi)
            dz = z[live] - src.z - env.velocity * tl
            out[live] = np.exp(-(d2 + dz**2) / (4 * env.diffusion * tl) - env.degradation * tl) / (
                4 * math.pi * env.diffusion * tl
            ) ** 1.5
        return out[()] if out.ndim == 0 else out

    def grid(self, rho, z, phi, times) -> np.ndarray:
        rho, z, phi = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float)) for a in (rho, z, phi)))
        times = np.atleast_1d(np.asarray(times, float))
        return self.concentration(rho[:, None], z[:, None], phi[:, None], times[None, :])


# ---------------------------------------------------------------------------
# Source superposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointSource:
    """Point transmitter with impulsive releases and/or a release rate.

    ``impulses`` holds ``(time, amount)`` pairs; ``rate`` (amount/s) is
    active on ``[t_start, t_end]``.
    """

    location: CylPoint
    rate: Callable[[float], float] | None = None
    t_start: float = 0.0
    t_end: float = 0.0
    impulses: tuple[tuple[float, float], ...] = ()

    @classmethod
    def impulsive(cls, location: CylPoint, t0: float = 0.0, amount: float = 1.0) -> "PointSource":
        return cls(location, impulses=((t0, amount),))


@dataclass(frozen=True)
class VolumetricSource:
    """Distributed source over a cylindrical-coordinate box.

    With ``time_range=None`` the ``density(rho, z, phi)`` (amount/m^3) is
    released impulsively at ``release_time``; otherwise ``density(rho, z,
    phi, t)`` is a rate density (amount/m^3/s) active over ``time_range``.
    """

    density: Callable
    rho_range: tuple[float, float]
    z_range: tuple[float, float]
    phi_range: tuple[float, float] = (0.0, 2 * math.pi)
    release_time: float = 0.0
    time_range: tuple[float, float] | None = None


def superpose(
    source: PointSource | VolumetricSource,
    observation: CylPoint,
    t: float,
    env: CylinderEnvironment,
    n_max: int = 3,
    m_max: int = 5,
    rtol: float = 1e-8,
    basis: ModeBasis | None = None,
) -> float:
    """Concentration at ``observation`` and time ``t`` produced by ``source``.

    Continuous release rates are convolved with the Green's function by
    adaptive Gauss-Kronrod quadrature; volumetric sources use nested
    Gauss-Legendre rules refined until successive estimates agree to
    ``rtol``.

    Raises
    ------
    QuadratureError
        If the requested tolerance is not met.
    """
    basis = basis if basis is not None else ModeBasis.build(env, n_max, m_max)
    obs = observation
    if isinstance(source, PointSource):
        loc = source.location
        if loc.rho > env.radius:
            raise ValueError("source lies outside the cylinder")

        def kernel(tau):
            return green_function(basis, obs.rho, obs.z, obs.phi, loc.rho, loc.z, loc.phi, tau)

        total = 0.0
        for t_imp, amount in source.impulses:
            total += amount * float(kernel(t - t_imp))
        if source.rate is not None:
            hi = min(source.t_end, t)
            if hi > source.t_start:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SmallTimeWarning)
                    value, err, info = _quad(
                        lambda s: source.rate(s) * float(kernel(t - s)), source.t_start, hi, rtol
                    )
                total += value
        return total

    if isinstance(source, VolumetricSource):
        if source.rho_range[1] > env.radius or source.rho_range[0] < 0:
            raise ValueError("source support leaves the cylinder")
        bounds = [source.rho_range, source.z_range, source.phi_range]
        if source.time_range is None:
            tau = t - source.release_time

            def integrand(r, zz, ph):
                g = green_function(basis, obs.rho, obs.z, obs.phi, r, zz, ph, tau)
                return g * source.density(r, zz, ph) * r

        else:
            lo, hi = source.time_range
            hi = min(hi, t)
            if hi <= lo:
                return 0.0
            bounds.append((lo, hi))

            def integrand(r, zz, ph, s):
                g = green_function(basis, obs.rho, obs.z, obs.phi, r, zz, ph, t - s)
                return g * source.density(r, zz, ph, s) * r

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallTimeWarning)
            return gauss_legendre_nd(integrand, bounds, rtol=rtol)

    raise TypeError(f"unsupported source type {type(source).__name__}")


def _quad(func, a, b, rtol):
    # with full_output quad reports failure through a fourth element, not a warning
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            result = integrate.quad(
                func, a, b, epsrel=rtol, epsabs=0.0, limit=400, full_output=True
            )
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    if len(result) > 3:
        raise QuadratureError(result[3].splitlines()[0] if result[3] else "quadrature failed")
    value, err, info = result[:3]
    return value, err, info


# ---------------------------------------------------------------------------
# Grid evaluation
# ---------------------------------------------------------------------------


def evaluate_grid(
    series: CgfSeries,
    points: Sequence[CylPoint],
    times: Sequence[float],
    include_unbounded: bool = False,
) -> list[tuple[float, ...]]:
    """Rows ``(t, rho, z, phi, C[, C_unbounded])`` for every point and time."""
    times = np.asarray(times, float)
    rho = np.array([p.rho for p in points])
    z = np.array([p.z for p in points])
    phi = np.array([p.phi for p in points])
    values = series.grid(rho, z, phi, times)
    env = series.env
    rows = []
    for j, t in enumerate(times):
        for i, p in enumerate(points):
            row = (float(t), p.rho, p.z, p.phi, float(values[i, j]))
            if include_unbounded:
                free = unbounded_cgf(
                    p, t, series.source, env.diffusion, env.degradation, env.velocity, series.t0
                )
                row = row + (float(free),)
            rows.append(row)
    return rows
