"""On-off keying over the Poisson molecular channel.

Bit 1 releases ``N`` molecules (on average) at the start of a slot, bit 0
releases none. The count sampled at ``t_s`` is Poisson with mean
``sum_i b_i N p_i`` over the current slot (``i = 0``) and ``M`` earlier ones.
Given the earlier bits, the MAP rule is a threshold test ``y > Thr`` with

    Thr = N p_0 / ln(1 + N p_0 / I),    I = sum_{i>=1} b_i N p_i.

With no interference (``I = 0``) the threshold is taken as 0, so a single
molecule decides '1'. Ties ``y == Thr`` decide '0'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numba as nb
import numpy as np
from .channel import IsiProfile

__all__ = [
    "BerResult",
    "OokLink",
    "analytic_ber",
    "conditional_error",
    "decide",
    "map_threshold",
    "monte_carlo_ber",
    "pattern_table",
    "poisson_cdf_sf",
    "PoissonTailError",
]

#: Above this memory the pattern sum is evaluated on an ISI lattice.
ENUMERATION_LIMIT = 16


@dataclass(frozen=True)
class OokLink:
    """OOK link: ``coefficients[i]`` is ``p_obs(i T + t_s)`` for ``i = 0..M``."""

    N: float
    slot: float
    t_s: float
    coefficients: np.ndarray
    detector: str = "genie"

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, float)
        object.__setattr__(self, "coefficients", coeffs)
        if not self.N > 0:
            raise ValueError("N must be positive")
        if coeffs.ndim != 1 or coeffs.size < 1 or not coeffs[0] > 0:
            raise ValueError("need p_0 > 0")
        if np.any(coeffs < 0):
            raise ValueError("observation probabilities must be non-negative")
        if self.detector not in ("genie", "decision-feedback"):
            raise ValueError("detector must be 'genie' or 'decision-feedback'")

    @classmethod
    def from_profile(cls, profile: IsiProfile, N: float, detector: str = "genie") -> "OokLink":
        return cls(N, profile.slot, profile.t_s, profile.coefficients, detector)

    @property
    def memory(self) -> int:
        return self.coefficients.size - 1

    @property
    def means(self) -> np.ndarray:
        """Per-slot Poisson means ``N p_i``."""
        return self.N * self.coefficients


def _threshold(signal, isi):
    signal = np.asarray(signal, float)
    isi = np.asarray(isi, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        thr = signal / np.log1p(signal / isi)
    # no interference: the MAP limit puts the boundary at zero molecules
    thr = np.where(isi > 0, thr, 0.0)
    # vanishing signal: identical hypotheses, threshold tends to the ISI mean
    thr = np.where(signal > 0, thr, isi)
    return thr


def map_threshold(history, link: OokLink) -> float:
    """Decision threshold for past bits ``history = (b_1, ..., b_M)``."""
    history = np.asarray(history, float)
    if history.size != link.memory:
        raise ValueError(f"history needs {link.memory} bits")
    means = link.means
    return float(_threshold(means[0], history @ means[1:]))


def decide(y, history, link: OokLink):
    """MAP decision(s) for received count(s) ``y``."""
    return (np.asarray(y) > map_threshold(history, link)).astype(int)


class PoissonTailError(FloatingPointError):
    """A Poisson tail sum was truncated with error above the allowed bound."""


_TAIL_STOP = 1e-16
_TAIL_BOUND = 1e-12


@nb.njit(cache=True)
def _cdf_sf(k, mu):
    """(P(X <= k), P(X > k)) for X ~ Poisson(mu), summed in log space.

    The smaller tail is summed away from its largest term until terms drop
    below 1e-16 of the running sum; the other follows by complement. The
    third value bounds the truncated remainder (geometric majorant).
    """
    if k < 0:
        return 0.0, 1.0, 0.0
    if mu <= 0.0:
        return 1.0, 0.0, 0.0
    log_mu = math.log(mu)
    if k < mu:
        # lower tail: terms grow with j up to k; sum downward from k
        log_t = k * log_mu - mu - math.lgamma(k + 1.0)
        peak = log_t
        acc = 1.0
        rel = 1.0
        j = k
        while j > 0:
            rel *= j / mu
            acc += rel
            j -= 1
            if rel < _TAIL_STOP * acc:
                break
        bound = 0.0
        if j > 0:
            r = j / mu
            bound = math.exp(peak) * rel * r / (1.0 - r)
        lower = math.exp(peak) * acc
        return lower, 1.0 - lower, bound
    # upper tail: terms from k + 1 decrease; sum upward
    j = k + 1
    log_t = j * log_mu - mu - math.lgamma(j + 1.0)
    peak = log_t
    acc = 1.0
    rel = 1.0
    while True:
        j += 1
        r = mu / j
        rel *= r
        acc += rel
        if rel < _TAIL_STOP * acc:
            break
    r = mu / (j + 1)
    bound = math.exp(peak) * rel * r / (1.0 - r)
    upper = math.exp(peak) * acc
    return 1.0 - upper, upper, bound


@nb.njit(cache=True)
def _cdf_sf_array(k, mu):
    n = k.size
    cdf = np.empty(n)
    sf = np.empty(n)
    worst = 0.0
    for i in range(n):
        c, u, b = _cdf_sf(int(k[i]), mu[i])
        cdf[i] = c
        sf[i] = u
        if b > worst:
            worst = b
    return cdf, sf, worst


def poisson_cdf_sf(k, mu):
    """``P(X <= k)`` and ``P(X > k)`` for ``X ~ Poisson(mu)``, broadcast.

    Each pair is accurate in the smaller of the two tails, so tiny error
    probabilities keep their relative precision.

    Raises
    ------
    PoissonTailError
        If a truncated tail sum could be off by more than 1e-12.
    """
    k, mu = np.broadcast_arrays(np.asarray(k, float), np.asarray(mu, float))
    if np.any(mu < 0):
        raise ValueError("Poisson mean must be non-negative")
    shape = k.shape
    cdf, sf, worst = _cdf_sf_array(np.floor(k).ravel().astype(np.int64), np.ascontiguousarray(mu.ravel()))
    if worst > _TAIL_BOUND:
        raise PoissonTailError(f"Poisson tail truncation bound {worst:.3g} exceeds {_TAIL_BOUND:g}")
    return cdf.reshape(shape), sf.reshape(shape)


def conditional_error(b0, isi, link: OokLink):
    """Error probability given the current bit and the ISI mean ``isi``."""
    signal = link.means[0]
    isi = np.asarray(isi, float)
    k = np.floor(_threshold(signal, isi))
    if b0:
        return poisson_cdf_sf(k, signal + isi)[0]
    return poisson_cdf_sf(k, isi)[1]


def _pattern_errors(link: OokLink):
    """Conditional errors for every pattern ``(b_0, ..., b_M)``."""
    M = link.memory
    hist = np.array(list(product((0, 1), repeat=M)), dtype=float).reshape(2**M, M)
    isi = hist @ link.means[1:]
    e1 = conditional_error(1, isi, link)
    e0 = conditional_error(0, isi, link)
    return hist, e0, e1


def _isi_lattice(means: np.ndarray, max_bins: int):
    """Distribution of ``sum b_i a_i`` for fair bits on a uniform lattice.

    Each slot's shift is split linearly between neighbouring nodes, which
    keeps the mean exact.
    """
    total = float(np.sum(means))
    h = max(total / (max_bins - 1), 1e-12)
    n = int(math.ceil(total / h)) + 2
    dist = np.zeros(n)
    dist[0] = 1.0
    top = 1
    for a in means:
        s = a / h
        q = int(math.floor(s))
        f = s - q
        new = np.zeros(n)
        new[:top] += 0.5 * dist[:top]
        hi = min(top + q, n)
        new[q:hi] += 0.5 * (1 - f) * dist[: hi - q]
        hi1 = min(top + q + 1, n)
        new[q + 1 : hi1] += 0.5 * f * dist[: hi1 - q - 1]
        dist = new
        top = min(top + q + 1, n)
    return np.arange(n) * h, dist


def analytic_ber(link: OokLink, enumeration_limit: int = ENUMERATION_LIMIT, lattice_bins: int = 1 << 20) -> float:
    """Genie-aided error probability averaged over equiprobable bit patterns.

    Patterns are enumerated exactly up to ``enumeration_limit`` memory;
    beyond that the ISI sum is carried on a lattice of ``lattice_bins``
    nodes.
    """
    if link.memory <= enumeration_limit:
        _, e0, e1 = _pattern_errors(link)
        return float(0.5 * (np.mean(e0) + np.mean(e1)))
    isi, weights = _isi_lattice(link.means[1:], lattice_bins)
    keep = weights > 0
    isi, weights = isi[keep], weights[keep]
    e1 = conditional_error(1, isi, link)
    e0 = conditional_error(0, isi, link)
    return float(0.5 * np.sum(weights * (e0 + e1)))


def pattern_table(link: OokLink) -> dict[tuple[int, ...], float]:
    """Conditional error for each full pattern ``(b_0, b_1, ..., b_M)``."""
    if link.memory > ENUMERATION_LIMIT:
        raise ValueError("pattern table is only built for enumerable memories")
    hist, e0, e1 = _pattern_errors(link)
    table = {}
    for h, a, b in zip(hist.astype(int), e0, e1):
        table[(0,) + tuple(h)] = float(a)
        table[(1,) + tuple(h)] = float(b)
    return table


@dataclass
class BerResult:
    """Analytic and simulated error rates for one link."""

    analytic: float
    errors: int
    n_bits: int
    detector: str
    patterns: dict = field(default_factory=dict, repr=False)
    # per-bit error indicators, kept only on request (paired comparisons)
    error_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def estimate(self) -> float:
        return self.errors / self.n_bits

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        """Wilson score interval for the simulated error rate."""
        n, p = self.n_bits, self.estimate
        denom = 1 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        return max(0.0, centre - half), min(1.0, centre + half)

    @property
    def sigma(self) -> float:
        """Binomial standard deviation of the estimate under the analytic rate."""
        p = self.analytic
        return math.sqrt(max(p * (1 - p), 0.0) / self.n_bits)

    def agrees(self, k: float = 3.0) -> bool:
        """Estimate within ``k`` binomial sigmas of the analytic rate.

        When the analytic rate is so small that no error is expected, zero or
        one observed error counts as agreement.
        """
        if self.analytic * self.n_bits < 1:
            return self.errors <= 1 + k * math.sqrt(max(self.analytic * self.n_bits, 0.0))
        return abs(self.estimate - self.analytic) <= k * self.sigma


@nb.njit(cache=True)
def _feedback_decisions(counts, bits_head, means):
    """Sequential decision-feedback detection; head bits are known."""
    M = means.size - 1
    n = counts.size
    decided = np.empty(n + M, dtype=np.int64)
    decided[:M] = bits_head
    signal = means[0]
    for j in range(n):
        isi = 0.0
        for i in range(1, M + 1):
            if decided[M + j - i]:
                isi += means[i]
        if isi > 0.0:
            thr = signal / math.log1p(signal / isi)
        else:
            thr = 0.0
        decided[M + j] = 1 if counts[j] > thr else 0
    return decided[M:]


def monte_carlo_ber(
    link: OokLink,
    n_bits: int = 1_000_000,
    seed: int = 0,
    detector: str | None = None,
    with_analytic: bool = True,
    keep_errors: bool = False,
) -> BerResult:
    """Simulate ``n_bits`` equiprobable bits through the Poisson ISI channel.

    ``M`` extra leading bits seed the history and are not scored. The genie
    detector thresholds with the true history, decision feedback with its own
    past decisions. The same seed gives the same bits and counts for both,
    so with ``keep_errors`` two detectors can be compared bit by bit.
    """
    if n_bits < 10_000:
        raise ValueError("n_bits must be at least 1e4")
    detector = detector or link.detector
    rng = np.random.default_rng(seed)
    M = link.memory
    means = link.means
    bits = rng.integers(0, 2, size=n_bits + M)
    hist_kernel = np.concatenate(([0.0], means[1:]))
    isi = np.convolve(bits.astype(float), hist_kernel)[M : M + n_bits] if M else np.zeros(n_bits)
    current = bits[M:]
    counts = rng.poisson(current * means[0] + isi)
    if detector == "genie":
        decided = (counts > _threshold(means[0], isi)).astype(np.int64)
    elif detector == "decision-feedback":
        decided = _feedback_decisions(counts.astype(np.float64), bits[:M].astype(np.int64), means)
    else:
        raise ValueError("detector must be 'genie' or 'decision-feedback'")
    wrong = decided != current
    analytic = analytic_ber(link) if with_analytic else float("nan")
    mask = wrong if keep_errors else None
    return BerResult(analytic, int(np.count_nonzero(wrong)), n_bits, detector, error_mask=mask)
