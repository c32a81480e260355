"""Closed-form finite-statistics distribution of the CHSH number.

Each of ``n`` coincidences contributes a sign-adjusted +1 with probability
``p1`` and -1 otherwise; with ``k`` positive contributions the estimate is
S = 4(2k - n)/n. The number of coincidences per run is Poisson.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlog1py, xlogy

TSIRELSON = 2.0 * math.sqrt(2.0)
OPTIMAL_P1 = (2.0 + math.sqrt(2.0)) / 4.0
POISSON_TAIL = 1e-12


@dataclass(frozen=True)
class OutcomeModel:
    p1: float
    pm1: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"p1 must lie in [0, 1], got {self.p1}")
        if self.pm1 is None:
            object.__setattr__(self, "pm1", 1.0 - self.p1)
        elif abs(self.p1 + self.pm1 - 1.0) > 1e-12:
            raise ValueError("p1 + pm1 must equal 1")


@dataclass(frozen=True)
class WernerParams:
    """Bell-state weight ``visibility`` in v|psi><psi| + (1 - v) I/4.

    Construct from the mixing parameter ``w`` with :meth:`from_mixing`,
    which reads the identity as the normalised maximally mixed state.
    """

    visibility: float

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")

    @classmethod
    def from_mixing(cls, w: float) -> WernerParams:
        if not 0.0 <= w <= 4.0:
            raise ValueError(f"mixing parameter must lie in [0, 4], got {w}")
        return cls(1.0 - w / 4.0)


def binom_pmf(k, n: int, p: float) -> np.ndarray:
    """Binomial pmf in log space; stays finite for any p in [0, 1]."""
    k = np.asarray(k, dtype=float)
    return np.exp(gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0) + xlogy(k, p) + xlog1py(n - k, -p))


def _check_n(n: int, strict: bool):
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if strict and n % 4:
        raise ValueError(f"n = {n} is not a multiple of 4 (pass strict=False to relax)")


def s_support(n: int) -> np.ndarray:
    k = np.arange(n + 1)
    return 4.0 * (2 * k - n) / n


def distribution_given_n(p1: float, n: int, strict: bool = False):
    """Attainable S values and their probabilities for ``n`` coincidences."""
    _check_n(n, strict)
    k = np.arange(n + 1)
    return s_support(n), binom_pmf(k, n, p1)


def p_s_given_n(p1: float, n: int, s: float, strict: bool = True) -> float:
    _check_n(n, strict)
    k2 = s * n / 4.0 + n  # equals 2k
    k = round(k2 / 2.0)
    if abs(2 * k - k2) > 1e-9 or not 0 <= k <= n:
        return 0.0
    return float(binom_pmf(k, n, p1))


def poisson_cutoff(nbar: float, tail: float = POISSON_TAIL) -> int:
    if nbar <= 0:
        raise ValueError(f"nbar must be positive, got {nbar}")
    return int(stats.poisson.isf(tail, nbar)) + 1


def p_s(p1: float, nbar: float, s: float, n_max: int | None = None) -> float:
    """Probability that a run with Poisson(nbar) coincidences yields exactly ``s``.

    Runs with zero coincidences carry no S and are left out, so the mass
    sums to ``1 - exp(-nbar)``.
    """
    n_max = poisson_cutoff(nbar) if n_max is None else n_max
    n = np.arange(1, n_max + 1)
    w = stats.poisson.pmf(n, nbar)
    return float(sum(wi * p_s_given_n(p1, int(ni), s, strict=False) for ni, wi in zip(n, w)))


def s_distribution(p1: float, nbar: float, n_max: int | None = None) -> dict[Fraction, float]:
    """Full distribution of S, keyed by the exact rational value."""
    n_max = poisson_cutoff(nbar) if n_max is None else n_max
    out: dict[Fraction, float] = {}
    for n in range(1, n_max + 1):
        w = stats.poisson.pmf(n, nbar)
        pmf = binom_pmf(np.arange(n + 1), n, p1)
        for k, pk in enumerate(pmf):
            key = Fraction(4 * (2 * k - n), n)
            out[key] = out.get(key, 0.0) + w * pk
    return out


def s_moments(p1: float, nbar: float, n_max: int | None = None):
    """(mass, mean, second moment) of the run-level S distribution."""
    n_max = poisson_cutoff(nbar) if n_max is None else n_max
    mass = mean = second = 0.0
    for n in range(1, n_max + 1):
        w = stats.poisson.pmf(n, nbar)
        s, pmf = distribution_given_n(p1, n)
        mass += w * pmf.sum()
        mean += w * (pmf @ s)
        second += w * (pmf @ s ** 2)
    return mass, mean, second


def p_success(p1: float, nbar: float, n_max: int | None = None) -> float:
    """Probability mass of runs with |S| > 2."""
    n_max = poisson_cutoff(nbar) if n_max is None else n_max
    total = 0.0
    for n in range(1, n_max + 1):
        k = np.arange(n + 1)
        wins = np.abs(2 * (2 * k - n)) > n
        total += stats.poisson.pmf(n, nbar) * binom_pmf(k[wins], n, p1).sum()
    return float(total)


def werner_chsh(params: WernerParams) -> float:
    return TSIRELSON * params.visibility


def werner_visibility(p_genuine, p_contaminated):
    """Genuine share of coincidences, which plays the role of the Werner visibility."""
    total = np.asarray(p_genuine) + np.asarray(p_contaminated)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, np.asarray(p_genuine) / np.where(total > 0, total, 1.0), 0.0)


def effective_p1(genuine_fraction: float) -> float:
    if not 0.0 <= genuine_fraction <= 1.0:
        raise ValueError("genuine_fraction must lie in [0, 1]")
    return genuine_fraction * OPTIMAL_P1 + (1.0 - genuine_fraction) * 0.5


def tables(p1_values, nbar_values):
    """Rows of (p1, nbar, mean S, p_success) over a parameter grid."""
    rows = []
    for p1 in p1_values:
        for nbar in nbar_values:
            mass, mean, _ = s_moments(p1, nbar)
            rows.append((float(p1), float(nbar), mean / mass, p_success(p1, nbar)))
    return rows
