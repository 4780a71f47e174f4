"""Bessel functions and the Robin-wall radial eigenproblem of a cylinder.

Radial modes of diffusion inside a cylinder of radius ``rho_c`` are
``J_n(lam * rho)``, with ``lam`` fixed by the wall condition

    D * lam * J_n'(lam * rho_c) = -k_f * J_n(lam * rho_c).

Everything here works in the dimensionless variable ``x = lam * rho_c`` and
``biot = k_f * rho_c / D``; the boundary function becomes
``x J_n'(x) + biot J_n(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ABSORBING",
    "EigenMode",
    "EigenvalueSearchError",
    "RadialEigenproblem",
    "bessel_j",
    "bessel_j_orders",
    "bessel_j_prime",
    "boundary_residual",
    "find_eigenvalues",
    "find_modes",
    "normalization",
]

#: Sentinel for a perfectly absorbing wall (k_f -> infinity).
ABSORBING = math.inf

# Below this argument the ascending series is used; above it, Miller's
# downward recurrence. The series loses about three digits by x = 12.
_SERIES_LIMIT = 5.0
_SCAN_OVERSAMPLE = 8
_BISECT_XTOL = 1e-13


class EigenvalueSearchError(RuntimeError):
    """Root bracketing did not isolate the requested number of eigenvalues."""


# ---------------------------------------------------------------------------
# Bessel functions of the first kind
# ---------------------------------------------------------------------------


def _series(n: int, x: np.ndarray) -> np.ndarray:
    half = 0.5 * x
    term = half**n / math.factorial(n)
    total = term.copy()
    q = -half * half
    for k in range(1, 200):
        term = term * q / (k * (k + n))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _miller(nmax: int, x: np.ndarray) -> np.ndarray:
    """J_0..J_nmax at x > 0 by normalized downward recurrence."""
    xmax = float(np.max(x))
    top = max(nmax, int(xmax)) + 20 + int(6.0 * math.sqrt(max(nmax, xmax)))
    top += top % 2
    out = np.zeros((nmax + 1,) + x.shape)
    j_next = np.zeros_like(x)
    j = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    for k in range(top, 0, -1):
        j_next, j = j, 2.0 * k / x * j - j_next
        order = k - 1
        if order <= nmax:
            out[order] = j
        if order % 2 == 0:
            norm += j if order == 0 else 2.0 * j
        big = np.abs(j) > 1e200
        if np.any(big):
            scale = np.where(big, 1e-200, 1.0)
            j *= scale
            j_next *= scale
            norm *= scale
            out *= scale
    # J_0 + 2 * sum_k J_2k = 1
    return out / norm


def bessel_j_orders(nmax: int, x) -> np.ndarray:
    """Return ``J_0(x), ..., J_nmax(x)`` stacked along a new leading axis.

    ``x`` must be non-negative; any array shape is accepted.
    """
    if nmax < 0:
        raise ValueError("nmax must be non-negative")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("bessel_j requires x >= 0")
    flat = x.ravel()
    out = np.empty((nmax + 1, flat.size))
    small = flat < _SERIES_LIMIT
    if np.any(small):
        xs = flat[small]
        for n in range(nmax + 1):
            out[n, small] = _series(n, xs)
    if np.any(~small):
        out[:, ~small] = _miller(nmax, flat[~small])
    return out.reshape((nmax + 1,) + x.shape)


def bessel_j(n: int, x):
    """Bessel function of the first kind ``J_n(x)`` for integer ``n >= 0``.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    if n < 0:
        raise ValueError("order must be non-negative")
    values = bessel_j_orders(n, x)[n]
    return float(values) if values.ndim == 0 else values


def bessel_j_prime(n: int, x):
    """Derivative ``J_n'(x)``, from ``(J_{n-1} - J_{n+1}) / 2`` and ``J_0' = -J_1``."""
    if n < 0:
        raise ValueError("order must be non-negative")
    orders = bessel_j_orders(n + 1, x)
    if n == 0:
        values = -orders[1]
    else:
        values = 0.5 * (orders[n - 1] - orders[n + 1])
    return float(values) if values.ndim == 0 else values


# ---------------------------------------------------------------------------
# Eigenproblem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialEigenproblem:
    """Wall condition for one azimuthal order.

    ``boundary_rate`` is k_f in m/s; pass :data:`ABSORBING` for k_f = inf.
    """

    diffusion_coefficient: float
    boundary_rate: float
    cylinder_radius: float
    order: int

    def __post_init__(self):
        if not self.diffusion_coefficient > 0:
            raise ValueError("diffusion coefficient must be positive")
        if not self.cylinder_radius > 0:
            raise ValueError("cylinder radius must be positive")
        if not self.boundary_rate >= 0:
            raise ValueError("boundary rate must be >= 0 or ABSORBING")
        if self.order < 0:
            raise ValueError("order must be non-negative")

    @property
    def absorbing(self) -> bool:
        return math.isinf(self.boundary_rate)

    @property
    def biot(self) -> float:
        """Dimensionless wall rate k_f * rho_c / D (inf when absorbing)."""
        return self.boundary_rate * self.cylinder_radius / self.diffusion_coefficient

    def boundary_function(self, x):
        """Dimensionless wall function of ``x = lam * rho_c``."""
        n = self.order
        orders = bessel_j_orders(n + 1, x)
        jn = orders[n]
        if self.absorbing:
            return jn
        djn = -orders[1] if n == 0 else 0.5 * (orders[n - 1] - orders[n + 1])
        return x * djn + self.biot * jn


@dataclass(frozen=True)
class EigenMode:
    """One radial-azimuthal mode (n, m) of the cylinder cross-section."""

    order: int
    index: int
    wavenumber: float  # lambda_nm, 1/m
    normalization: float  # N_nm, m^2
    angular_weight: float  # L_n

    @property
    def decay_rate_factor(self) -> float:
        """``lambda**2``; multiply by D to get the temporal decay rate."""
        return self.wavenumber**2


def boundary_residual(problem: RadialEigenproblem, lam: float) -> float:
    """Scaled wall residual of a candidate eigenvalue.

    For finite k_f this is ``|x J_n'(x) + Bi J_n(x)| / max(1, Bi)``, which is
    the dimensional residual ``|D lam J_n' + k_f J_n|`` divided by
    ``(D / rho_c) * max(1, Bi)``. For an absorbing wall it is ``|J_n(x)|``.
    """
    x = lam * problem.cylinder_radius
    value = abs(float(problem.boundary_function(np.asarray(x))))
    if problem.absorbing:
        return value
    return value / max(1.0, problem.biot)


def _bisect(problem: RadialEigenproblem, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized bisection on all brackets at once."""
    g_lo = problem.boundary_function(lo)
    while np.max(hi - lo) > _BISECT_XTOL:
        mid = 0.5 * (lo + hi)
        g_mid = problem.boundary_function(mid)
        left = np.sign(g_mid) == np.sign(g_lo)
        lo = np.where(left, mid, lo)
        g_lo = np.where(left, g_mid, g_lo)
        hi = np.where(left, hi, mid)
        # the gap stops shrinking once it reaches float spacing
        if np.all((hi - lo) <= 4 * np.spacing(hi)):
            break
    return 0.5 * (lo + hi)


def find_eigenvalues(
    problem: RadialEigenproblem, count: int, max_x: float | None = None
) -> np.ndarray:
    """Return the ``count`` smallest admissible eigenvalues ``lam`` (1/m).

    Roots are isolated by scanning the boundary function on a grid of step
    ``pi / 8`` in ``x = lam * rho_c`` and bisecting each sign change. For
    ``n = 0`` with a reflecting wall, ``lam = 0`` is returned as the first
    root; ``lam = 0`` is never returned for ``n > 0``.

    Raises
    ------
    EigenvalueSearchError
        If fewer than ``count`` roots lie below ``max_x``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = problem.order
    roots: list[float] = []
    zero_mode = n == 0 and not problem.absorbing and problem.boundary_rate == 0
    if zero_mode:
        roots.append(0.0)
    needed = count - len(roots)
    if needed == 0:
        return np.asarray(roots) / problem.cylinder_radius

    if max_x is None:
        # consecutive roots are ~pi apart; the first lies below n + pi * ...
        max_x = n + math.pi * (needed + 2) + 10.0
    step = math.pi / _SCAN_OVERSAMPLE
    start = 0.0 if (n == 0 and not zero_mode and not problem.absorbing) else step
    grid = np.arange(start, max_x + step, step)
    g = problem.boundary_function(grid)
    sign = np.sign(g)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if idx.size < needed:
        raise EigenvalueSearchError(
            f"found {idx.size} of {needed} roots for order {n} below x={max_x:g}; "
            "raise the search bound"
        )
    idx = idx[:needed]
    x_roots = _bisect(problem, grid[idx], grid[idx + 1])
    roots.extend(x_roots.tolist())
    return np.asarray(roots) / problem.cylinder_radius


def normalization(lam, n: int, rho_c: float):
    """Radial norm ``N = int_0^rho_c rho J_n(lam rho)^2 d rho`` in closed form.

    ``(rho_c^2 / 2) * (J_n^2 - J_{n-1} J_{n+1})`` at ``lam * rho_c``, with
    ``J_{-1} = -J_1``. Gives ``rho_c^2 / 2`` for ``lam = 0, n = 0``.
    """
    x = np.asarray(lam, dtype=float) * rho_c
    orders = bessel_j_orders(n + 1, x)
    below = -orders[1] if n == 0 else orders[n - 1]
    value = 0.5 * rho_c**2 * (orders[n] ** 2 - below * orders[n + 1])
    return float(value) if value.ndim == 0 else value


def angular_weight(n: int) -> float:
    return 1.0 / (2.0 * math.pi) if n == 0 else 1.0 / math.pi


def find_modes(
    diffusion_coefficient: float,
    boundary_rate: float,
    cylinder_radius: float,
    orders: Sequence[int] | int,
    count: int,
) -> list[EigenMode]:
    """Eigenmodes for every order in ``orders`` (or ``range(orders + 1)``)."""
    if isinstance(orders, int):
        orders = range(orders + 1)
    modes = []
    for n in orders:
        problem = RadialEigenproblem(diffusion_coefficient, boundary_rate, cylinder_radius, n)
        lams = find_eigenvalues(problem, count)
        norms = np.atleast_1d(normalization(lams, n, cylinder_radius))
        for m, (lam, nrm) in enumerate(zip(lams, norms), start=1):
            modes.append(EigenMode(n, m, float(lam), float(nrm), angular_weight(n)))
    return modes
