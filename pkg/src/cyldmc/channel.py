"""Channel quantities derived from the Green's function.

A transparent spherical receiver sees a released molecule with probability
density ``p_obs(t)``: the Green's function integrated over the receiver ball
(or, for small receivers, its volume times the centre concentration).
Received counts are Poisson with mean ``s * p_obs`` and earlier slots add
independent Poisson interference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from .analytic_cgf import CgfSeries, CylPoint
from .quadrature import QuadratureError

__all__ = [
    "Impulse",
    "IsiProfile",
    "MemoryCapError",
    "ObservationPdf",
    "ReceiverModel",
    "ball_points",
    "choose_memory",
    "isi_means",
    "mean_received",
    "p_obs",
]


class MemoryCapError(RuntimeError):
    """The channel tail is still above the cutoff at the maximum memory."""


@dataclass(frozen=True)
class ReceiverModel:
    """Transparent sphere of radius ``radius`` (m) centred at ``center``.

    ``mode`` is ``"exact"`` (ball quadrature) or ``"point"`` (volume times
    centre concentration).
    """

    center: CylPoint
    radius: float
    mode: str = "point"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("receiver radius must be positive")
        if self.mode not in ("exact", "point"):
            raise ValueError("mode must be 'exact' or 'point'")

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3

    def check_inside(self, rho_c: float) -> None:
        if self.center.rho + self.radius > rho_c:
            raise ValueError("receiver sphere is not inside the cylinder")


@dataclass(frozen=True)
class Impulse:
    """Impulsive release of ``amount`` molecules at the start of a slot."""

    amount: float


def ball_points(center: CylPoint, radius: float, order: int):
    """Product Gauss rule over a ball in spherical coordinates about ``center``.

    Returns cylindrical coordinates ``(rho, z, phi)`` of the nodes and the
    weights (which sum to the ball volume).
    """
    xr, wr = np.polynomial.legendre.leggauss(order)
    r = 0.5 * radius * (xr + 1)
    wr = 0.5 * radius * wr * r**2
    mu, wmu = np.polynomial.legendre.leggauss(order)
    psi = (np.arange(2 * order) + 0.5) * (math.pi / order)
    wpsi = np.full(psi.size, math.pi / order)
    R, MU, PSI = np.meshgrid(r, mu, psi, indexing="ij")
    W = wr[:, None, None] * wmu[None, :, None] * wpsi[None, None, :]
    sin_t = np.sqrt(1 - MU**2)
    cx, cy, cz = center.cartesian()
    x = cx + R * sin_t * np.cos(PSI)
    y = cy + R * sin_t * np.sin(PSI)
    z = cz + R * MU
    rho = np.hypot(x, y)
    phi = np.arctan2(y, x) % (2 * math.pi)
    return rho.ravel(), z.ravel(), phi.ravel(), W.ravel()


def ball_average(series: CgfSeries, center: CylPoint, radius: float, t, rtol=1e-6, start=6, max_order=48):
    """Integral of the Green's function over a ball, refined until converged."""
    t = np.atleast_1d(np.asarray(t, float))
    order = start
    previous = None
    while order <= max_order:
        rho, z, phi, w = ball_points(center, radius, order)
        value = w @ series.grid(rho, z, phi, t)
        if previous is not None:
            scale = max(float(np.max(np.abs(value))), 1e-300)
            if np.max(np.abs(value - previous)) <= rtol * scale:
                return value
        previous = value
        order *= 2
    raise QuadratureError(f"ball quadrature did not reach rtol={rtol:g}")


def p_obs(t, receiver: ReceiverModel, series: CgfSeries, rtol: float = 1e-6):
    """Probability that one molecule released at ``series.t0`` is inside the receiver at ``t``."""
    receiver.check_inside(series.env.radius)
    t_arr = np.asarray(t, float)
    flat = np.atleast_1d(t_arr)
    if receiver.mode == "point":
        c = receiver.center
        values = receiver.volume * series.concentration(c.rho, c.z, c.phi, flat)
    else:
        values = ball_average(series, receiver.center, receiver.radius, flat, rtol=rtol)
    values = np.asarray(values).reshape(t_arr.shape)
    return float(values) if values.ndim == 0 else values


class ObservationPdf:
    """``p_obs`` tabulated on a time grid, with its maximizer ``t_s``.

    Calling the object evaluates ``p_obs`` directly rather than
    interpolating the table. Values are clamped at zero: the truncated series
    rings slightly negative at very small elapsed times, and a probability
    cannot.
    """

    def __init__(self, receiver: ReceiverModel, series: CgfSeries, horizon: float, n_grid: int = 2000):
        self.receiver = receiver
        self.series = series
        self.times = series.t0 + np.linspace(horizon / n_grid, horizon, n_grid)
        self.values = np.maximum(p_obs(self.times, receiver, series), 0.0)
        self.resolution = horizon / n_grid
        self.t_s = self._peak()

    def __call__(self, t):
        t = np.asarray(t, float)
        out = np.zeros(t.shape)
        live = t > self.series.t0
        if np.any(live):
            out[live] = np.maximum(p_obs(t[live], self.receiver, self.series), 0.0)
        return out[()] if out.ndim == 0 else out

    def _peak(self, tol: float = 1e-5) -> float:
        """Golden-section refinement around the coarse-grid argmax."""
        i = int(np.argmax(self.values))
        lo = self.times[i - 1] if i > 0 else self.series.t0 + 1e-3 * self.resolution
        hi = self.times[min(i + 1, len(self.times) - 1)]
        ratio = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c = b - ratio * (b - a)
        d = a + ratio * (b - a)
        fc, fd = float(self(c)), float(self(d))
        while b - a > tol:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - ratio * (b - a)
                fc = float(self(c))
            else:
                a, c, fc = c, d, fd
                d = a + ratio * (b - a)
                fd = float(self(d))
        best = 0.5 * (a + b)
        return best if float(self(best)) >= self.values[i] else float(self.times[i])

    @property
    def peak_value(self) -> float:
        return float(self(self.t_s))

    def rows(self):
        for t, p in zip(self.times, self.values):
            yield (float(t), float(p))


def _convolve(signal, t: float, pdf, duration: float | None, offset: float, step: float | None):
    """``int_0^T s(tau) p(offset + t - tau) d tau`` by the midpoint rule."""
    if isinstance(signal, Impulse):
        return signal.amount * float(pdf(offset + t))
    if signal is None:
        return 0.0
    if duration is None:
        raise ValueError("a release-rate function needs a slot duration")
    upper = min(duration, offset + t)
    if upper <= 0:
        return 0.0
    if step is None:
        step = upper / 4000
    n = max(int(math.ceil(upper / step)), 1)
    h = upper / n
    tau = (np.arange(n) + 0.5) * h
    rate = np.asarray(signal(tau), float) * np.ones_like(tau)
    if np.any(rate < 0):
        raise ValueError("release rate must be non-negative")
    return float(h * np.sum(rate * pdf(offset + t - tau)))


def mean_received(
    s,
    t: float,
    pdf: Callable,
    duration: float | None = None,
    step: float | None = None,
) -> float:
    """Expected molecule count at time ``t`` of the current slot.

    ``s`` is an :class:`Impulse` or a release-rate function on
    ``[0, duration]``; ``pdf`` is an :class:`ObservationPdf` or any callable
    ``p_obs``. Rates are convolved by the midpoint rule with ``step``.
    """
    return _convolve(s, t, pdf, duration, 0.0, step)


def isi_means(signals: Sequence, t: float, pdf: Callable, slot: float, step: float | None = None) -> np.ndarray:
    """Mean interference ``I_i(t)`` from slots ``i = 1..M`` (``signals[i-1]``)."""
    return np.array(
        [_convolve(s, t, pdf, slot, i * slot, step) for i, s in enumerate(signals, start=1)]
    )


def choose_memory(N: float, T: float, t_s: float, cutoff: float, pdf: Callable, max_memory: int = 2000) -> int:
    """Smallest ``M >= 1`` with ``N p_obs(M T + t_s) < cutoff``.

    Raises
    ------
    MemoryCapError
        When no ``M <= max_memory`` satisfies the rule.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    # evaluate in chunks; the tail is usually short
    start = 1
    chunk = 64
    while start <= max_memory:
        m = np.arange(start, min(start + chunk, max_memory + 1))
        tail = N * np.asarray(pdf(m * T + t_s))
        hit = np.nonzero(tail < cutoff)[0]
        if hit.size:
            return int(m[hit[0]])
        start += chunk
        chunk *= 2
    raise MemoryCapError(
        f"N*p_obs(M*T + t_s) is still >= {cutoff:g} at M = {max_memory}; the channel tail exceeds the cap"
    )


@dataclass(frozen=True)
class IsiProfile:
    """Per-slot observation probabilities ``p_i = p_obs(i T + t_s)``, ``i = 0..M``."""

    slot: float
    t_s: float
    coefficients: np.ndarray

    @property
    def memory(self) -> int:
        return len(self.coefficients) - 1

    @classmethod
    def build(
        cls,
        pdf: ObservationPdf,
        slot: float,
        N: float,
        cutoff: float = 0.01,
        max_memory: int = 2000,
        memory: int | None = None,
    ) -> "IsiProfile":
        """Sample the pdf at ``t_s + i T``; ``memory`` overrides the cutoff rule."""
        t_s = pdf.t_s - pdf.series.t0
        if memory is None:
            memory = choose_memory(N, slot, t_s, cutoff, lambda t: pdf(pdf.series.t0 + t), max_memory)
        i = np.arange(memory + 1)
        coeffs = np.asarray(pdf(pdf.series.t0 + i * slot + t_s), float)
        return cls(slot, t_s, coeffs)

    def rows(self):
        for i, p in enumerate(self.coefficients):
            yield (i, float(i * self.slot + self.t_s), float(p))
