import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from cyldmc.eigenmodes import (
    ABSORBING,
    EigenvalueSearchError,
    RadialEigenproblem,
    angular_weight,
    bessel_j,
    bessel_j_orders,
    bessel_j_prime,
    boundary_residual,
    find_eigenvalues,
    find_modes,
    normalization,
)

from conftest import D, K_F_PARTIAL, RHO_C

# first zeros from mpmath.besseljzero (30 digits), rounded to double
J0_ZERO_1 = 2.404825557695773
J0_ZERO_2 = 5.520078110286311
J1_ZERO_1 = 3.831705970207512
J1_PRIME_ZERO_1 = 1.841183781340659
# x J_n'(x) + 0.5 J_n(x) = 0 (k_f = 100 um/s, rho_c = 5 um, D = 1e-9), mpmath.findroot
ROBIN_N0 = (0.9407705639497374, 3.959371185012574)
ROBIN_N1_FIRST = 2.165871271488751


def mp_j(n, x):
    return float(mpmath.besselj(n, x))


# --- Bessel functions --------------------------------------------------------


def test_bessel_trivial_values():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert abs(bessel_j(0, 2.404826)) < 1e-5


@pytest.mark.parametrize("n", [0, 1, 2, 3, 5, 8, 15, 30])
def test_bessel_matches_mpmath_on_grid(n):
    xs = np.concatenate([np.linspace(0, 20, 161), np.linspace(20, 100, 81)])
    ours = bessel_j(n, xs)
    ref = np.array([mp_j(n, x) for x in xs])
    assert np.max(np.abs(ours - ref)) <= 1e-12


@given(st.integers(0, 12), st.floats(0, 100))
def test_bessel_matches_mpmath_random(n, x):
    assert abs(bessel_j(n, x) - mp_j(n, x)) <= 1e-12


@given(st.integers(0, 12), st.floats(0, 100))
def test_bessel_prime_matches_mpmath(n, x):
    ref = float(mpmath.besselj(n, x, derivative=1))
    assert abs(bessel_j_prime(n, x) - ref) <= 1e-12


def test_bessel_prime_examples():
    assert bessel_j_prime(0, 0.0) == 0.0
    assert abs(bessel_j_prime(0, 3.831706)) < 1e-6
    h = 1e-5
    fd = (bessel_j(1, 1 + h) - bessel_j(1, 1 - h)) / (2 * h)
    assert abs(bessel_j_prime(1, 1.0) - fd) < 1e-8


def test_bessel_orders_shape_and_domain():
    x = np.linspace(0, 30, 12).reshape(3, 4)
    out = bessel_j_orders(4, x)
    assert out.shape == (5, 3, 4)
    np.testing.assert_allclose(out[2], special.jv(2, x), atol=1e-13)
    with pytest.raises(ValueError):
        bessel_j(0, -1.0)
    with pytest.raises(ValueError):
        bessel_j(-1, 1.0)


# --- eigenvalues ------------------------------------------------------------


def test_reflective_order0_includes_zero_mode():
    lams = find_eigenvalues(RadialEigenproblem(D, 0.0, RHO_C, 0), 2)
    assert lams[0] == 0.0
    assert lams[1] * RHO_C == pytest.approx(J1_ZERO_1, abs=1e-12)


def test_absorbing_order0():
    lams = find_eigenvalues(RadialEigenproblem(D, ABSORBING, RHO_C, 0), 2)
    np.testing.assert_allclose(lams * RHO_C, [J0_ZERO_1, J0_ZERO_2], atol=1e-12)


def test_reflective_order1_first_root():
    lam = find_eigenvalues(RadialEigenproblem(D, 0.0, RHO_C, 1), 1)
    assert lam[0] * RHO_C == pytest.approx(J1_PRIME_ZERO_1, abs=1e-12)
    assert lam[0] > 0


def test_partial_roots_match_mpmath():
    lams = find_eigenvalues(RadialEigenproblem(D, K_F_PARTIAL, RHO_C, 0), 2)
    np.testing.assert_allclose(lams * RHO_C, ROBIN_N0, atol=1e-12)
    lam1 = find_eigenvalues(RadialEigenproblem(D, K_F_PARTIAL, RHO_C, 1), 1)
    assert lam1[0] * RHO_C == pytest.approx(ROBIN_N1_FIRST, abs=1e-12)


@pytest.mark.parametrize("k_f", [0.0, K_F_PARTIAL, ABSORBING])
@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_residual_and_monotone_spectrum(n, k_f):
    problem = RadialEigenproblem(D, k_f, RHO_C, n)
    lams = find_eigenvalues(problem, 5)
    assert np.all(np.diff(lams) > 0)
    if n > 0:
        assert lams[0] > 0
    for lam in lams:
        assert boundary_residual(problem, lam) < 1e-10


@pytest.mark.parametrize("n", [0, 2])
def test_roots_match_scipy_zeros(n):
    # independent route: scipy's zeros of J_n and J_n'
    absorbing = find_eigenvalues(RadialEigenproblem(D, ABSORBING, RHO_C, n), 6) * RHO_C
    np.testing.assert_allclose(absorbing, special.jn_zeros(n, 6), atol=1e-11)
    reflective = find_eigenvalues(RadialEigenproblem(D, 0.0, RHO_C, n), 6) * RHO_C
    ref = special.jnp_zeros(n, 6 if n else 5)
    if n == 0:
        ref = np.concatenate([[0.0], ref])
    np.testing.assert_allclose(reflective, ref, atol=1e-11)


def test_no_root_skipped_on_fine_scan():
    for n in range(4):
        for k_f in (0.0, K_F_PARTIAL, 1e-2, ABSORBING):
            problem = RadialEigenproblem(D, k_f, RHO_C, n)
            x = find_eigenvalues(problem, 5) * RHO_C
            grid = np.linspace(1e-9, x[-1] - 1e-9, 20001)
            g = problem.boundary_function(grid)
            changes = np.count_nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)
            expected = np.count_nonzero(x > 1e-9) - 1
            assert changes == expected


def test_eigenvalues_increase_with_boundary_rate():
    rates = [0.0, 1e-6, 1e-5, K_F_PARTIAL, 1e-3, 1e-2, ABSORBING]
    for n in range(3):
        table = np.array([find_eigenvalues(RadialEigenproblem(D, k, RHO_C, n), 4) for k in rates])
        assert np.all(np.diff(table, axis=0) > 0)


def test_search_bound_error():
    with pytest.raises(EigenvalueSearchError):
        find_eigenvalues(RadialEigenproblem(D, 0.0, RHO_C, 0), 5, max_x=6.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        RadialEigenproblem(0.0, 0.0, RHO_C, 0)
    with pytest.raises(ValueError):
        RadialEigenproblem(D, -1.0, RHO_C, 0)
    with pytest.raises(ValueError):
        RadialEigenproblem(D, 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        RadialEigenproblem(D, 0.0, RHO_C, -1)
    with pytest.raises(ValueError):
        find_eigenvalues(RadialEigenproblem(D, 0.0, RHO_C, 0), 0)


# --- normalization and orthogonality ------------------------------------------


def _quad_norm(lam, n, rho_c):
    value, _ = integrate.quad(lambda r: r * special.jv(n, lam * r) ** 2, 0, rho_c, epsabs=0, epsrel=1e-13, limit=200)
    return value


def test_zero_mode_normalization():
    assert normalization(0.0, 0, RHO_C) == pytest.approx(RHO_C**2 / 2, rel=1e-15)


def test_absorbing_normalization_closed_form():
    lam = J0_ZERO_1 / RHO_C
    expected = RHO_C**2 / 2 * mp_j(1, J0_ZERO_1) ** 2
    assert normalization(lam, 0, RHO_C) == pytest.approx(expected, rel=1e-12)
    assert normalization(lam, 0, RHO_C) == pytest.approx(_quad_norm(lam, 0, RHO_C), rel=1e-9)


@given(st.integers(0, 6), st.floats(0.0, 40.0))
def test_normalization_matches_quadrature(n, x):
    lam = x / RHO_C
    assert normalization(lam, n, RHO_C) == pytest.approx(_quad_norm(lam, n, RHO_C), rel=1e-9, abs=1e-30)


@pytest.mark.parametrize("k_f", [0.0, K_F_PARTIAL, ABSORBING])
def test_modes_orthogonal(k_f):
    modes = find_modes(D, k_f, RHO_C, 3, 5)
    for n in range(4):
        group = [m for m in modes if m.order == n]
        for a in group:
            assert a.normalization > 0
            assert a.angular_weight == angular_weight(n)
            for b in group:
                if b.index <= a.index:
                    continue
                overlap, _ = integrate.quad(
                    lambda r: r * special.jv(n, a.wavenumber * r) * special.jv(n, b.wavenumber * r),
                    0, RHO_C, epsabs=1e-12 * RHO_C**2, epsrel=1e-10, limit=200,
                )
                assert abs(overlap) <= 1e-8 * math.sqrt(a.normalization * b.normalization)


def test_angular_weights():
    assert angular_weight(0) == pytest.approx(1 / (2 * math.pi))
    assert angular_weight(3) == pytest.approx(1 / math.pi)
