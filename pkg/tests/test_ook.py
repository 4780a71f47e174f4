import math
from itertools import product

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from cyldmc import ook
from cyldmc.ook import (
    BerResult,
    OokLink,
    PoissonTailError,
    analytic_ber,
    conditional_error,
    decide,
    map_threshold,
    monte_carlo_ber,
    pattern_table,
    poisson_cdf_sf,
)

import oracles


def link_from_means(means, detector="genie"):
    means = np.asarray(means, float)
    return OokLink(1.0, 0.02, 0.01, means, detector)


# a link with moderate ISI, roughly the shape of the k_d = 20 channels
MODERATE = [12.0, 5.0, 2.5, 1.2, 0.6, 0.3]


# --- thresholds ---------------------------------------------------------------------------------


def test_zero_interference_threshold():
    link = link_from_means([7.0])
    assert map_threshold([], link) == 0.0
    assert decide(0, [], link) == 0
    assert np.all(decide(np.arange(1, 20), [], link) == 1)
    link = link_from_means([7.0, 3.0])
    assert map_threshold([0], link) == 0.0


def test_threshold_formula_example():
    link = link_from_means([10.0, 4.0, 1.0])
    assert map_threshold([1, 1], link) == pytest.approx(10 / math.log(1 + 10 / 5), rel=1e-15)
    assert map_threshold([0, 1], link) == pytest.approx(10 / math.log(11), rel=1e-15)
    with pytest.raises(ValueError):
        map_threshold([1], link)


def test_tie_decides_zero():
    # Thr = s / ln(1 + s/I) equals 2 when s = 2 ln 2 ... pick s, I so Thr is an integer
    s = 2.0
    isi = s / math.expm1(s / 3.0)
    link = link_from_means([s, isi])
    thr = map_threshold([1], link)
    assert thr == pytest.approx(3.0, rel=1e-14)
    y = round(thr)
    assert decide(y, [1], link) == int(y > thr)


def _likelihood_decision(y, signal, isi):
    one = oracles.log_poisson_pmf(y, signal + isi)
    zero = oracles.log_poisson_pmf(y, isi)
    return one - zero


@settings(max_examples=80)
@given(
    st.lists(st.floats(0.01, 50.0), min_size=1, max_size=5),
    st.floats(0.05, 50.0),
)
def test_threshold_equals_likelihood_comparison(isi_means, signal):
    link = link_from_means([signal] + isi_means)
    M = len(isi_means)
    for history in product((0, 1), repeat=M):
        isi = float(np.dot(history, isi_means))
        top = int(max(10 * signal, special.pdtrik(1e-12, signal + isi) if signal + isi > 0 else 0)) + 2
        ys = np.arange(top + 1)
        ours = decide(ys, history, link)
        for y, d in zip(ys, ours):
            llr = _likelihood_decision(int(y), signal, isi)
            if abs(llr) < 1e-9:
                continue  # a genuine tie between the hypotheses
            assert d == int(llr > 0)


@given(
    st.floats(0.1, 1e3),
    st.lists(st.one_of(st.just(0.0), st.floats(1e-8, 1e-2)), min_size=3, max_size=3),
    st.floats(1e-4, 1e-2),
)
def test_threshold_scales_with_release_size(N, tail, p0):
    coeffs = [p0] + tail
    base = OokLink(N, 0.02, 0.01, coeffs)
    for c in (0.5, 3.0, 40.0):
        scaled = OokLink(c * N, 0.02, 0.01, coeffs)
        for h in product((0, 1), repeat=3):
            expected = c * N * p0 / math.log1p(N * p0 / (N * np.dot(h, tail))) if np.dot(h, tail) > 0 else 0.0
            assert map_threshold(h, scaled) == pytest.approx(expected, rel=1e-12)
            assert map_threshold(h, scaled) == pytest.approx(c * map_threshold(h, base), rel=1e-12)


def test_threshold_tends_to_isi_mean_for_tiny_signal():
    link = link_from_means([1e-12, 4.0])
    assert map_threshold([1], link) == pytest.approx(4.0, rel=1e-9)


# --- Poisson tails ------------------------------------------------------------------------------


@pytest.mark.parametrize("mu", [0.3, 5.0, 47.5, 600.0, 1.2e4])
def test_poisson_tails_match_scipy(mu):
    k = np.unique(np.round(np.linspace(0, 3 * mu + 30, 200)))
    cdf, sf = poisson_cdf_sf(k, mu)
    ref_cdf, ref_sf = special.pdtr(k, mu), special.pdtrc(k, mu)
    np.testing.assert_allclose(cdf, ref_cdf, rtol=1e-9, atol=1e-13)
    np.testing.assert_allclose(sf, ref_sf, rtol=1e-9, atol=1e-13)
    assert np.all((cdf >= 0) & (cdf <= 1) & (sf >= 0) & (sf <= 1))


@pytest.mark.parametrize("k,mu", [(0, 40.0), (3, 60.0), (200, 50.0), (9000, 1e4), (11000, 1e4)])
def test_poisson_small_tails_match_mpmath(k, mu):
    cdf, sf = poisson_cdf_sf(k, mu)
    with mpmath.workdps(40):
        term = lambda j: mpmath.exp(j * mpmath.log(mu) - mu - mpmath.loggamma(j + 1))
        if k < mu:
            ours, small = cdf, mpmath.nsum(term, [0, k])
        else:
            ours, small = sf, mpmath.nsum(term, [k + 1, mpmath.inf])
    assert ours == pytest.approx(float(small), rel=1e-9)


def test_poisson_tail_edge_cases(monkeypatch):
    assert poisson_cdf_sf(-1, 3.0) == (0.0, 1.0)
    cdf, sf = poisson_cdf_sf(4, 0.0)
    assert (cdf, sf) == (1.0, 0.0)
    assert poisson_cdf_sf(0, 10.0)[0] == pytest.approx(math.exp(-10), rel=1e-14)
    with pytest.raises(ValueError):
        poisson_cdf_sf(2, -1.0)
    monkeypatch.setattr(ook, "_TAIL_BOUND", -1.0)
    with pytest.raises(PoissonTailError):
        poisson_cdf_sf(3, 5.0)


# --- analytic error probability --------------------------------------------------------------------


def test_zero_memory_closed_form():
    link = link_from_means([10.0])
    assert analytic_ber(link) == pytest.approx(0.5 * math.exp(-10), rel=1e-13)


def test_vanishing_release_gives_one_half():
    for N in (1e-6, 1e-9, 1e-12):
        link = OokLink(N, 0.02, 0.01, [0.01, 0.004, 0.001])
        assert analytic_ber(link) == pytest.approx(0.5, abs=10 * N)


def test_conditional_errors_bounded_and_zero_history():
    link = link_from_means(MODERATE)
    table = pattern_table(link)
    assert len(table) == 2 ** (link.memory + 1)
    values = np.array(list(table.values()))
    assert np.all((values >= 0) & (values <= 1))
    assert table[(0,) * (link.memory + 1)] == 0.0
    assert analytic_ber(link) == pytest.approx(values.mean(), rel=1e-14)
    assert conditional_error(0, 0.0, link) == 0.0


def test_pattern_average_against_brute_force():
    # independent route: sum the Poisson pmf explicitly over the error region
    link = link_from_means([6.0, 2.0, 0.7])
    total = 0.0
    for b in product((0, 1), repeat=3):
        isi = 2.0 * b[1] + 0.7 * b[2]
        thr = 6.0 / math.log1p(6.0 / isi) if isi > 0 else 0.0
        mean = 6.0 * b[0] + isi
        ys = range(0, 200)
        wrong = [y for y in ys if (y > thr) != bool(b[0])]
        total += sum(math.exp(oracles.log_poisson_pmf(y, mean)) for y in wrong) / 8
    assert analytic_ber(link) == pytest.approx(total, rel=1e-12)


@pytest.mark.parametrize("memory", [8, 12, 16])
def test_lattice_matches_enumeration(memory):
    means = 30.0 * np.exp(-0.45 * np.arange(memory + 1))
    link = link_from_means(means)
    exact = analytic_ber(link)
    lattice = analytic_ber(link, enumeration_limit=0)
    assert lattice == pytest.approx(exact, rel=1e-3)


def test_pattern_table_limit():
    with pytest.raises(ValueError):
        pattern_table(link_from_means(np.full(18, 0.5)))


# --- Monte Carlo ---------------------------------------------------------------------------------


def test_separated_hypotheses_give_no_errors():
    link = link_from_means([400.0, 0.5, 0.1])
    result = monte_carlo_ber(link, n_bits=100_000, seed=1)
    assert result.errors == 0
    assert result.analytic < 1e-6
    assert result.agrees()


def test_genie_matches_analytic():
    link = link_from_means(MODERATE)
    result = monte_carlo_ber(link, n_bits=1_000_000, seed=2)
    assert abs(result.estimate - result.analytic) <= 3 * result.sigma
    low, high = result.interval()
    assert low <= result.estimate <= high


def test_decision_feedback_not_better_than_genie():
    link = link_from_means(MODERATE)
    genie = monte_carlo_ber(link, n_bits=200_000, seed=5, with_analytic=False)
    feedback = monte_carlo_ber(link, n_bits=200_000, seed=5, detector="decision-feedback", with_analytic=False)
    assert feedback.errors >= genie.errors
    assert math.isnan(genie.analytic)


def test_feedback_with_perfect_decisions_equals_genie():
    # no errors are made, so feedback sees the true history
    link = link_from_means([400.0, 3.0, 1.0], detector="decision-feedback")
    a = monte_carlo_ber(link, n_bits=20_000, seed=9)
    b = monte_carlo_ber(link, n_bits=20_000, seed=9, detector="genie")
    assert a.errors == b.errors == 0


def test_seed_reproducibility_and_validation():
    link = link_from_means(MODERATE)
    a = monte_carlo_ber(link, n_bits=20_000, seed=4, with_analytic=False)
    b = monte_carlo_ber(link, n_bits=20_000, seed=4, with_analytic=False)
    c = monte_carlo_ber(link, n_bits=20_000, seed=5, with_analytic=False)
    assert a.errors == b.errors
    assert a.errors != c.errors
    with pytest.raises(ValueError):
        monte_carlo_ber(link, n_bits=9_999)
    with pytest.raises(ValueError):
        monte_carlo_ber(link, n_bits=10_000, detector="oracle")


def test_wilson_interval():
    r = BerResult(analytic=0.01, errors=100, n_bits=10_000, detector="genie")
    low, high = r.interval()
    # statsmodels proportion_confint(100, 10000, method="wilson")
    assert low == pytest.approx(0.008229, abs=2e-6)
    assert high == pytest.approx(0.012147, abs=2e-6)
    zero = BerResult(analytic=0.0, errors=0, n_bits=10_000, detector="genie")
    assert zero.interval()[0] == 0.0 and 0 < zero.interval()[1] < 1e-3
    assert zero.agrees()


def test_link_validation():
    with pytest.raises(ValueError):
        OokLink(0.0, 0.02, 0.01, [0.1])
    with pytest.raises(ValueError):
        OokLink(1.0, 0.02, 0.01, [0.0, 0.1])
    with pytest.raises(ValueError):
        OokLink(1.0, 0.02, 0.01, [0.1, -0.1])
    with pytest.raises(ValueError):
        OokLink(1.0, 0.02, 0.01, [0.1], detector="ml")
    link = OokLink(2.0, 0.02, 0.01, [0.1, 0.05])
    assert link.memory == 1
    np.testing.assert_allclose(link.means, [0.2, 0.1])


def test_error_mask_is_optional_and_consistent():
    link = link_from_means(MODERATE)
    assert monte_carlo_ber(link, n_bits=20_000, seed=4, with_analytic=False).error_mask is None
    r = monte_carlo_ber(link, n_bits=20_000, seed=4, with_analytic=False, keep_errors=True)
    assert r.error_mask.shape == (20_000,)
    assert int(r.error_mask.sum()) == r.errors
