"""Independent reference implementations used only by the tests.

The Green's function here is rebuilt from scipy's Bessel routines and root
finders, sharing no code with the package.
"""

import math

import numpy as np
from scipy import optimize, special


def robin_roots(n, biot, count):
    """Roots of x J_n'(x) + biot J_n(x) = 0 (biot=inf: J_n = 0), scipy only."""
    if math.isinf(biot):
        return special.jn_zeros(n, count)
    if biot == 0:
        roots = list(special.jnp_zeros(n, count)) if n else [0.0] + list(special.jnp_zeros(0, count - 1))
        return np.array(roots[:count])

    def g(x):
        return x * special.jvp(n, x) + biot * special.jv(n, x)

    grid = np.linspace(1e-12, n + 4 * count + 10, 40000)
    vals = g(grid)
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0][:count]
    return np.array([optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-15) for i in idx])


def cylinder_cgf(obs, src, tau, radius, D, k_f=0.0, k_d=0.0, v=0.0, n_max=3, m_max=5):
    """Truncated series at elapsed time ``tau`` (scalar), scipy Bessel functions."""
    if tau <= 0:
        return 0.0
    biot = math.inf if math.isinf(k_f) else k_f * radius / D
    radial = 0.0
    for n in range(n_max + 1):
        L = 1 / (2 * math.pi) if n == 0 else 1 / math.pi
        for x in robin_roots(n, biot, m_max):
            lam = x / radius
            norm = 0.5 * radius**2 * (special.jv(n, x) ** 2 - special.jv(n - 1, x) * special.jv(n + 1, x))
            radial += (
                L / norm
                * special.jv(n, lam * src[0])
                * special.jv(n, lam * obs[0])
                * math.cos(n * (obs[2] - src[2]))
                * math.exp(-D * lam**2 * tau)
            )
    dz = obs[1] - src[1] - v * tau
    axial = math.exp(-dz * dz / (4 * D * tau) - k_d * tau) / math.sqrt(4 * math.pi * D * tau)
    return axial * radial


def free_space(obs, src, tau, D, k_d=0.0, v=0.0):
    ox, oy = obs[0] * math.cos(obs[2]), obs[0] * math.sin(obs[2])
    sx, sy = src[0] * math.cos(src[2]), src[0] * math.sin(src[2])
    r2 = (ox - sx) ** 2 + (oy - sy) ** 2 + (obs[1] - src[1] - v * tau) ** 2
    return math.exp(-r2 / (4 * D * tau) - k_d * tau) / (4 * math.pi * D * tau) ** 1.5


def log_poisson_pmf(y, mu):
    if mu == 0:
        return 0.0 if y == 0 else -math.inf
    return y * math.log(mu) - mu - math.lgamma(y + 1)
