"""CHSH statistics over repeated acquisition runs and the n-sigma verdict."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from bellshadow.photonsim import CHSH_SIGNS, RecordBatch

UNDEFINED = None


@dataclass(frozen=True)
class BellTestConfig:
    n_runs: int = 30
    t_acq: float = 1e-3
    confidence_n: float = 1.0
    min_valid_runs: int = 2

    def __post_init__(self):
        if self.n_runs < 2:
            raise ValueError(f"n_runs must be at least 2, got {self.n_runs}")
        if self.confidence_n <= 0:
            raise ValueError(f"confidence_n must be positive, got {self.confidence_n}")
        if self.t_acq <= 0:
            raise ValueError(f"t_acq must be positive, got {self.t_acq}")
        if self.min_valid_runs < 1:
            raise ValueError("min_valid_runs must be at least 1")


@dataclass(frozen=True)
class BellTestResult:
    s_mean: float
    s_std: float
    valid_runs: int
    verdict: bool
    per_run_s: tuple


def chsh_from_counts(total, same):
    """CHSH value from per-basis-pair tallies shaped ``(..., 4)``.

    ``same`` counts records whose outcome product is +1. Entries where a
    basis pair has no records come back as NaN.
    """
    total = np.asarray(total, dtype=float)
    same = np.asarray(same, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = (2.0 * same - total) / total
    s = e @ CHSH_SIGNS
    return np.where(np.all(total > 0, axis=-1), s, np.nan)


def chsh_from_records(records) -> float | None:
    """S = E11 + E12 - E21 + E22, or ``None`` when a basis pair is empty.

    Key-round records, if any, are ignored.
    """
    batch = RecordBatch.from_records(records)
    bell = ~batch.key_round
    pair = (batch.alice_basis[bell].astype(int) - 1) * 2 + (batch.bob_basis[bell].astype(int) - 1)
    prod = batch.alice_outcome[bell].astype(int) * batch.bob_outcome[bell].astype(int)
    total = np.bincount(pair, minlength=4)
    same = np.bincount(pair, weights=prod > 0, minlength=4)
    s = float(chsh_from_counts(total, same))
    return UNDEFINED if math.isnan(s) else s


def summarize_runs(per_run_s, confidence_n: float, min_valid_runs: int = 2):
    """Mean, population std, valid count and verdict over the last axis.

    NaN entries are undefined runs.
    """
    s = np.asarray(per_run_s, dtype=float)
    valid = ~np.isnan(s)
    n_valid = valid.sum(axis=-1)
    filled = np.where(valid, s, 0.0)
    safe_n = np.maximum(n_valid, 1)
    mean = filled.sum(axis=-1) / safe_n
    var = (np.where(valid, s - mean[..., None], 0.0) ** 2).sum(axis=-1) / safe_n
    std = np.sqrt(var)
    mean = np.where(n_valid > 0, mean, np.nan)
    std = np.where(n_valid > 0, std, np.nan)
    with np.errstate(invalid="ignore"):
        verdict = (n_valid >= min_valid_runs) & (np.abs(mean) - confidence_n * std >= 2.0)
    return mean, std, n_valid, verdict


def verdict_margin(s_mean, s_std):
    """Largest confidence level n at which the verdict still holds."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return (np.abs(s_mean) - 2.0) / s_std


def result_from_runs(per_run_s: Iterable, cfg: BellTestConfig) -> BellTestResult:
    s = np.array([np.nan if v is None else v for v in per_run_s], dtype=float)
    mean, std, n_valid, verdict = summarize_runs(s, cfg.confidence_n, cfg.min_valid_runs)
    return BellTestResult(float(mean), float(std), int(n_valid), bool(verdict),
                          tuple(None if math.isnan(v) else float(v) for v in s))


def run_bell_test(run_records: Callable[[int], object], cfg: BellTestConfig) -> BellTestResult:
    """Execute ``cfg.n_runs`` runs in index order and render the verdict.

    ``run_records(r)`` returns the records of run ``r``; the caller refreshes
    geometry at each run start.
    """
    return result_from_runs((chsh_from_records(run_records(r)) for r in range(cfg.n_runs)), cfg)
