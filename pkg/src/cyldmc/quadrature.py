"""Tensor-product Gauss-Legendre integration with refinement."""

from __future__ import annotations

import numpy as np

__all__ = ["QuadratureError", "gauss_legendre_nd"]


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""


def _rule(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def gauss_legendre_nd(func, bounds, rtol=1e-8, atol=0.0, start=8, max_points=2_000_000):
    """Integrate ``func`` over a box, doubling the rule order until converged.

    ``func`` receives one broadcastable array per dimension (open mesh) and
    must return values of the broadcast shape.

    Raises
    ------
    QuadratureError
        When the estimate has not settled before the point budget runs out.
    """
    dim = len(bounds)
    order = start
    previous = None
    while order**dim <= max_points:
        axes, weights = zip(*(_rule(order, lo, hi) for lo, hi in bounds))
        mesh = np.ix_(*axes)
        wmesh = np.ix_(*weights)
        w = wmesh[0]
        for extra in wmesh[1:]:
            w = w * extra
        value = float(np.sum(func(*mesh) * w))
        if previous is not None and abs(value - previous) <= max(atol, rtol * abs(value)):
            return value
        previous = value
        order *= 2
    raise QuadratureError(
        f"tensor Gauss-Legendre did not converge to rtol={rtol:g} within {max_points} points"
    )
