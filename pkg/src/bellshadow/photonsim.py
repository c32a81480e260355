"""Event generation for one acquisition run.

Two engines produce the same record-level statistics:

* ``"counts"`` draws the per-run category counts from their exact binomial
  laws by inversion of counter-based uniforms, then splits them over basis
  pairs. Inversion couples runs across parameter settings (common random
  numbers), which keeps area comparisons between settings smooth.
* ``"photon"`` walks every time slot with Bernoulli trials, photon by photon.
  It is slow and exists to check the counts engine.

Per slot: a pair is emitted with probability ``R * slot``; each arm of the
pair reaches its detector with ``eta_a`` / ``eta_b``; each side also sees a
background photon and a dark count with ``rate * slot``. A coincidence is
recorded when both sides click in the same slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from bellshadow.kernels import binom_ppf, counter_uniforms

GENUINE = "genuine"
CONTAMINATED = "contaminated"

N_CATEGORIES = 8
# draw slots per (unit, run) used by the counts engine
D_TOTAL_1, D_TOTAL_2, D_SWAP_G, D_SWAP_C = 0, 1, 2, 3
D_SPLIT_G = 4
D_SPLIT_C = D_SPLIT_G + N_CATEGORIES - 1
D_PLUS_G = D_SPLIT_C + N_CATEGORIES - 1
D_PLUS_C = D_PLUS_G + N_CATEGORIES
N_DRAWS = D_PLUS_C + N_CATEGORIES


@dataclass(frozen=True)
class SourceParams:
    pair_rate: float = 1e7
    state: str = "singlet"

    def __post_init__(self):
        if self.pair_rate < 0:
            raise ValueError(f"pair_rate must be non-negative, got {self.pair_rate}")
        if self.state != "singlet":
            raise ValueError(f"unsupported source state {self.state!r}")


@dataclass(frozen=True)
class NoiseParams:
    """Noise click rates in Hz. ``dark_rate_sat`` feeds the satellite-local
    detectors of swap-based scenarios, where ``a``/``b`` name the two ground
    stations."""

    bkg_rate_a: float = 0.0
    bkg_rate_b: float = 0.0
    dark_rate_a: float = 0.0
    dark_rate_b: float = 0.0
    dark_rate_sat: float = 0.0

    def __post_init__(self):
        for name in ("bkg_rate_a", "bkg_rate_b", "dark_rate_a", "dark_rate_b", "dark_rate_sat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MeasurementBases:
    """Polariser angles in radians, indexed 1 and 2 in the CHSH sum.

    Bob's order is (-22.5 deg, +22.5 deg): with
    S = E11 + E12 - E21 + E22 this ordering gives |S| = 2*sqrt(2) for the
    singlet, whereas (+22.5, -22.5) gives S = 0.
    """

    alice: tuple[float, float] = (0.0, math.pi / 4)
    bob: tuple[float, float] = (-math.pi / 8, math.pi / 8)

    def __post_init__(self):
        if len(self.alice) != 2 or len(self.bob) != 2:
            raise ValueError("need exactly two angles per party")
        if not all(math.isfinite(a) for a in (*self.alice, *self.bob)):
            raise ValueError("angles must be finite")


FALLBACK_SLOT = 1e-7


def default_slot(src: SourceParams, slot_duration: float | None = None) -> float:
    """Slot length: explicit value, else one source period."""
    if slot_duration is not None:
        return slot_duration
    return 1.0 / src.pair_rate if src.pair_rate > 0 else FALLBACK_SLOT


KEY_BASES = MeasurementBases(alice=(0.0, math.pi / 4), bob=(0.0, math.pi / 4))
CHSH_SIGNS = np.array([1.0, 1.0, -1.0, 1.0])


def singlet_correlator(alpha, beta):
    return -np.cos(2.0 * (np.asarray(alpha) - np.asarray(beta)))


def ideal_chsh(bases: MeasurementBases = MeasurementBases()) -> float:
    e = [singlet_correlator(a, b) for a in bases.alice for b in bases.bob]
    return float(np.dot(CHSH_SIGNS, e))


@dataclass(frozen=True)
class CoincidenceRecord:
    alice_basis: int
    bob_basis: int
    alice_outcome: int
    bob_outcome: int
    provenance: str
    key_round: bool = False


@dataclass
class RecordBatch:
    """Columnar store of coincidence records (basis indices are 1-based)."""

    alice_basis: np.ndarray
    bob_basis: np.ndarray
    alice_outcome: np.ndarray
    bob_outcome: np.ndarray
    genuine: np.ndarray
    key_round: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.key_round is None:
            self.key_round = np.zeros(len(self.alice_basis), dtype=bool)

    def __len__(self) -> int:
        return len(self.alice_basis)

    def __iter__(self) -> Iterator[CoincidenceRecord]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> CoincidenceRecord:
        return CoincidenceRecord(
            int(self.alice_basis[i]), int(self.bob_basis[i]),
            int(self.alice_outcome[i]), int(self.bob_outcome[i]),
            GENUINE if self.genuine[i] else CONTAMINATED, bool(self.key_round[i]),
        )

    def to_list(self) -> list[CoincidenceRecord]:
        return list(self)

    def select(self, mask) -> RecordBatch:
        return RecordBatch(self.alice_basis[mask], self.bob_basis[mask], self.alice_outcome[mask],
                           self.bob_outcome[mask], self.genuine[mask], self.key_round[mask])

    @classmethod
    def from_records(cls, records) -> RecordBatch:
        if isinstance(records, RecordBatch):
            return records
        records = list(records)
        return cls(
            np.array([r.alice_basis for r in records], dtype=np.int8),
            np.array([r.bob_basis for r in records], dtype=np.int8),
            np.array([r.alice_outcome for r in records], dtype=np.int8),
            np.array([r.bob_outcome for r in records], dtype=np.int8),
            np.array([r.provenance == GENUINE for r in records], dtype=bool),
            np.array([r.key_round for r in records], dtype=bool),
        )

    @classmethod
    def concatenate(cls, batches) -> RecordBatch:
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("alice_basis", "bob_basis", "alice_outcome", "bob_outcome", "genuine", "key_round")))


@dataclass(frozen=True)
class RunConfig:
    t_acq: float
    eta_a: float
    eta_b: float
    slot_duration: float | None = None
    seed_stream: tuple[int, int, int] = (0, 0, 0)

    def slot(self, src: SourceParams) -> float:
        return default_slot(src, self.slot_duration)

    def n_slots(self, src: SourceParams) -> int:
        return int(round(self.t_acq / self.slot(src)))

    def validate(self, src: SourceParams):
        slot = self.slot(src)
        if not 0 < slot <= self.t_acq:
            raise ValueError(f"need 0 < slot_duration <= t_acq, got {slot} and {self.t_acq}")
        for name in ("eta_a", "eta_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def born_outcome(alpha: float, beta: float, rng: np.random.Generator, size=None):
    """Singlet outcomes: P(++) = P(--) = sin^2(a-b)/2, P(+-) = P(-+) = cos^2(a-b)/2."""
    same = rng.random(size) < np.sin(alpha - beta) ** 2
    a = np.where(rng.random(size) < 0.5, 1, -1)
    b = np.where(same, a, -a)
    if size is None:
        return int(a), int(b)
    return a, b


class SlotProbabilities(NamedTuple):
    genuine: np.ndarray
    contaminated: np.ndarray

    @property
    def record(self):
        return self.genuine + self.contaminated


def check_slot_rates(pair_prob, *noise_probs):
    for name, v in (("pair", pair_prob),) + tuple(("noise", n) for n in noise_probs):
        if np.any(np.asarray(v) > 1.0):
            raise ValueError(f"expected {name} clicks per slot exceed 1; use a shorter slot_duration")


def resolve_probability(genuine_rate, bkg, dark):
    """Chance that a side holding both a pair photon and a noise click counts as genuine."""
    total = genuine_rate + bkg + dark
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, genuine_rate / np.where(total > 0, total, 1.0), 0.0)


def slot_probabilities(pair_prob, eta_a, eta_b, bkg_a=0.0, dark_a=0.0, bkg_b=0.0, dark_b=0.0) -> SlotProbabilities:
    """Closed-form per-slot probabilities of a genuine / contaminated coincidence.

    All noise arguments are per-slot click probabilities.
    """
    pe = np.asarray(pair_prob, dtype=float)
    eta_a = np.asarray(eta_a, dtype=float)
    eta_b = np.asarray(eta_b, dtype=float)
    check_slot_rates(pe, bkg_a, dark_a, bkg_b, dark_b)
    na = 1.0 - (1.0 - bkg_a) * (1.0 - dark_a)
    nb = 1.0 - (1.0 - bkg_b) * (1.0 - dark_b)
    ra = (1.0 - na) + na * resolve_probability(pe * eta_a, bkg_a, dark_a)
    rb = (1.0 - nb) + nb * resolve_probability(pe * eta_b, bkg_b, dark_b)
    p_gen = pe * eta_a * eta_b * ra * rb
    click_a = 1.0 - (1.0 - eta_a) * (1.0 - na)
    click_b = 1.0 - (1.0 - eta_b) * (1.0 - nb)
    p_rec = pe * click_a * click_b + (1.0 - pe) * na * nb
    return SlotProbabilities(p_gen, np.maximum(p_rec - p_gen, 0.0))


def run_slot_probabilities(src: SourceParams, noise: NoiseParams, cfg: RunConfig) -> SlotProbabilities:
    slot = cfg.slot(src)
    return slot_probabilities(src.pair_rate * slot, cfg.eta_a, cfg.eta_b,
                              noise.bkg_rate_a * slot, noise.dark_rate_a * slot,
                              noise.bkg_rate_b * slot, noise.dark_rate_b * slot)


def genuine_fraction(probs: SlotProbabilities):
    rec = probs.record
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rec > 0, probs.genuine / np.where(rec > 0, rec, 1.0), 0.0)


# ---------------------------------------------------------------------------
# counts engine


def category_layout(bases: MeasurementBases, key_fraction: float = 0.0,
                    key_bases: MeasurementBases = KEY_BASES):
    """Weights and genuine same-product probabilities of the 8 round categories.

    Category ``4*key + 2*i + j`` holds rounds with Alice basis ``i`` and Bob
    basis ``j`` (0-based) of the Bell (key=0) or key (key=1) substream.
    """
    if not 0.0 <= key_fraction <= 1.0:
        raise ValueError("key_fraction must lie in [0, 1]")
    weights = np.empty(N_CATEGORIES)
    same = np.empty(N_CATEGORIES)
    for key, b in ((0, bases), (1, key_bases)):
        w = key_fraction if key else 1.0 - key_fraction
        for i in range(2):
            for j in range(2):
                c = 4 * key + 2 * i + j
                weights[c] = w / 4.0
                same[c] = math.sin(b.alice[i] - b.bob[j]) ** 2
    return weights, same


class RunCounts(NamedTuple):
    """Per-category record tallies, arrays shaped ``(..., 8)``."""

    genuine: np.ndarray
    genuine_same: np.ndarray
    contaminated: np.ndarray
    contaminated_same: np.ndarray

    @property
    def total(self):
        return self.genuine + self.contaminated

    @property
    def same(self):
        return self.genuine_same + self.contaminated_same


def _split(total, u, weights):
    """Multinomial split of ``total`` by sequential binomial inversion."""
    out = np.zeros(total.shape + (len(weights),), dtype=np.int64)
    remaining = total.copy()
    tail = np.cumsum(weights[::-1])[::-1]
    for c in range(len(weights) - 1):
        p = weights[c] / tail[c] if tail[c] > 0 else 0.0
        out[..., c] = binom_ppf(u[..., c], remaining, min(p, 1.0))
        remaining = remaining - out[..., c]
    out[..., -1] = remaining
    return out


def split_counts(genuine, contaminated, u, weights, same) -> RunCounts:
    g = _split(np.asarray(genuine, dtype=np.int64), u[..., D_SPLIT_G:D_SPLIT_C], weights)
    c = _split(np.asarray(contaminated, dtype=np.int64), u[..., D_SPLIT_C:D_PLUS_G], weights)
    g_same = binom_ppf(u[..., D_PLUS_G:D_PLUS_C], g, same)
    c_same = binom_ppf(u[..., D_PLUS_C:N_DRAWS], c, 0.5)
    return RunCounts(g, g_same, c, c_same)


def draw_totals(u, n_slots, probs: SlotProbabilities):
    """Genuine and contaminated coincidence counts of a run of ``n_slots`` slots."""
    pg = np.asarray(probs.genuine, dtype=float)
    pc = np.asarray(probs.contaminated, dtype=float)
    g = binom_ppf(u[..., D_TOTAL_1], n_slots, pg)
    with np.errstate(invalid="ignore", divide="ignore"):
        pc_cond = np.where(pg < 1.0, pc / np.where(pg < 1.0, 1.0 - pg, 1.0), 0.0)
    c = binom_ppf(u[..., D_TOTAL_2], n_slots - g, np.clip(pc_cond, 0.0, 1.0))
    return g, c


def draw_swap_totals(u, n_slots, probs1: SlotProbabilities, probs2: SlotProbabilities,
                     p_sw: float, failed_swap: str = "random"):
    """Record counts after pairing the stored links of two downlinks and swapping.

    ``min(n1, n2)`` link pairs are formed; given the totals, each stored link
    is genuine independently with its link's genuine fraction. A pair yields
    a genuine record when both links are genuine and the swap succeeds. A
    failed swap yields an uncorrelated record (``failed_swap="random"``) or
    nothing (``"discard"``).
    """
    n1 = binom_ppf(u[..., D_TOTAL_1], n_slots, np.asarray(probs1.record, dtype=float))
    n2 = binom_ppf(u[..., D_TOTAL_2], n_slots, np.asarray(probs2.record, dtype=float))
    pairs = np.minimum(n1, n2)
    both = genuine_fraction(probs1) * genuine_fraction(probs2)
    g = binom_ppf(u[..., D_SWAP_G], pairs, both * p_sw)
    if failed_swap == "random":
        c = pairs - g
    elif failed_swap == "discard":
        denom = 1.0 - both * p_sw
        with np.errstate(invalid="ignore", divide="ignore"):
            pc = np.where(denom > 0, p_sw * (1.0 - both) / np.where(denom > 0, denom, 1.0), 0.0)
        c = binom_ppf(u[..., D_SWAP_C], pairs - g, np.clip(pc, 0.0, 1.0))
    else:
        raise ValueError(f"failed_swap must be 'random' or 'discard', got {failed_swap!r}")
    return g, c


def synthesize_records(counts: RunCounts, rng: np.random.Generator) -> RecordBatch:
    """Expand one run's category tallies into shuffled records."""
    cats, same_flags, genuine = [], [], []
    for c in range(N_CATEGORIES):
        for n, n_same, gen in ((counts.genuine[c], counts.genuine_same[c], True),
                               (counts.contaminated[c], counts.contaminated_same[c], False)):
            n, n_same = int(n), int(n_same)
            cats.append(np.full(n, c, dtype=np.int8))
            same_flags.append(np.arange(n) < n_same)
            genuine.append(np.full(n, gen))
    cat = np.concatenate(cats)
    same = np.concatenate(same_flags)
    gen = np.concatenate(genuine)
    order = rng.permutation(len(cat))
    cat, same, gen = cat[order], same[order], gen[order]
    a = np.where(rng.random(len(cat)) < 0.5, 1, -1).astype(np.int8)
    b = np.where(same, a, -a).astype(np.int8)
    return RecordBatch(((cat % 4) // 2 + 1).astype(np.int8), (cat % 2 + 1).astype(np.int8),
                       a, b, gen, cat >= 4)


def _stream_uniforms(seed_stream):
    seed, unit, run = seed_stream
    return counter_uniforms(seed, np.array([unit]), run + 1, N_DRAWS)[0, run]


def _stream_rng(seed_stream, purpose: int):
    return np.random.default_rng(np.random.SeedSequence([*map(int, seed_stream), purpose]))


# ---------------------------------------------------------------------------
# photon engine


def _simulate_slots(n_slots, pair_prob, eta_a, eta_b, bkg_a, dark_a, bkg_b, dark_b, rng,
                    chunk=1 << 20):
    """Literal slot-by-slot trials. Returns (n_genuine, n_contaminated)."""
    check_slot_rates(pair_prob, bkg_a, dark_a, bkg_b, dark_b)
    pg_a = resolve_probability(pair_prob * eta_a, bkg_a, dark_a)
    pg_b = resolve_probability(pair_prob * eta_b, bkg_b, dark_b)
    n_gen = n_con = 0
    done = 0
    while done < n_slots:
        m = min(chunk, n_slots - done)
        u = rng.random((9, m))
        emit = u[0] < pair_prob
        arm_a = emit & (u[1] < eta_a)
        arm_b = emit & (u[2] < eta_b)
        noise_a = (u[3] < bkg_a) | (u[4] < dark_a)
        noise_b = (u[5] < bkg_b) | (u[6] < dark_b)
        coinc = (arm_a | noise_a) & (arm_b | noise_b)
        gen_a = arm_a & (~noise_a | (u[7] < pg_a))
        gen_b = arm_b & (~noise_b | (u[8] < pg_b))
        genuine = coinc & gen_a & gen_b
        n_gen += int(genuine.sum())
        n_con += int((coinc & ~genuine).sum())
        done += m
    return n_gen, n_con


def _records_from_totals(g, c, bases, key_fraction, rng):
    weights, same = category_layout(bases, key_fraction)
    n = g + c
    cat = rng.choice(N_CATEGORIES, size=n, p=weights)
    gen = np.zeros(n, dtype=bool)
    gen[:g] = True
    p_same = np.where(gen, same[cat], 0.5)
    a = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    b = np.where(rng.random(n) < p_same, a, -a).astype(np.int8)
    order = rng.permutation(n)
    cat, gen, a, b = cat[order], gen[order], a[order], b[order]
    return RecordBatch(((cat % 4) // 2 + 1).astype(np.int8), (cat % 2 + 1).astype(np.int8),
                       a, b, gen, cat >= 4)


# ---------------------------------------------------------------------------
# public run API


def simulate_run(src: SourceParams, noise: NoiseParams, bases: MeasurementBases, cfg: RunConfig,
                 engine: str = "counts", key_fraction: float = 0.0) -> RecordBatch:
    """Coincidence records of one acquisition window.

    Arm A carries ``bkg_rate_a``/``dark_rate_a`` noise, arm B the ``_b`` rates.
    """
    cfg.validate(src)
    slot = cfg.slot(src)
    n_slots = cfg.n_slots(src)
    if engine == "counts":
        probs = run_slot_probabilities(src, noise, cfg)
        u = _stream_uniforms(cfg.seed_stream)
        g, c = draw_totals(u, n_slots, probs)
        weights, same = category_layout(bases, key_fraction)
        counts = split_counts(g, c, u, weights, same)
        return synthesize_records(counts, _stream_rng(cfg.seed_stream, 1))
    if engine == "photon":
        rng = _stream_rng(cfg.seed_stream, 2)
        g, c = _simulate_slots(n_slots, src.pair_rate * slot, cfg.eta_a, cfg.eta_b,
                               noise.bkg_rate_a * slot, noise.dark_rate_a * slot,
                               noise.bkg_rate_b * slot, noise.dark_rate_b * slot, rng)
        return _records_from_totals(g, c, bases, key_fraction, rng)
    raise ValueError(f"unknown engine {engine!r}")


def simulate_swap_run(cfg_link1: RunConfig, cfg_link2: RunConfig, src: SourceParams, noise: NoiseParams,
                      bases: MeasurementBases, p_sw: float, failed_swap: str = "random",
                      key_fraction: float = 0.0) -> RecordBatch:
    """Records between two ground stations joined by a swap at the satellite.

    Each ``RunConfig`` describes one downlink: ``eta_a`` the satellite-local
    detector, ``eta_b`` the ground arm. Satellite-local detectors see
    ``dark_rate_sat``; ground station 1 sees the ``_a`` rates, station 2 the
    ``_b`` rates.
    """
    if not 0.0 <= p_sw <= 1.0:
        raise ValueError(f"p_sw must lie in [0, 1], got {p_sw}")
    for cfg in (cfg_link1, cfg_link2):
        cfg.validate(src)
    slot = cfg_link1.slot(src)
    n_slots = cfg_link1.n_slots(src)
    pe = src.pair_rate * slot
    ds = noise.dark_rate_sat * slot
    p1 = slot_probabilities(pe, cfg_link1.eta_a, cfg_link1.eta_b, 0.0, ds,
                            noise.bkg_rate_a * slot, noise.dark_rate_a * slot)
    p2 = slot_probabilities(pe, cfg_link2.eta_a, cfg_link2.eta_b, 0.0, ds,
                            noise.bkg_rate_b * slot, noise.dark_rate_b * slot)
    u = _stream_uniforms(cfg_link1.seed_stream)
    g, c = draw_swap_totals(u, n_slots, p1, p2, p_sw, failed_swap)
    weights, same = category_layout(bases, key_fraction)
    counts = split_counts(g, c, u, weights, same)
    return synthesize_records(counts, _stream_rng(cfg_link1.seed_stream, 1))


def simulate_fixed_coincidences(n: int, genuine_fraction: float, bases: MeasurementBases,
                                rng: np.random.Generator, balanced: bool = True) -> RecordBatch:
    """Exactly ``n`` records, each genuine with probability ``genuine_fraction``.

    With ``balanced`` every basis pair occurs ``n/4`` times (``n`` must be a
    multiple of 4); otherwise bases are drawn uniformly per record.
    """
    if not 0.0 <= genuine_fraction <= 1.0:
        raise ValueError("genuine_fraction must lie in [0, 1]")
    if balanced:
        if n % 4:
            raise ValueError("balanced bases need n divisible by 4")
        pair = np.repeat(np.arange(4), n // 4)
    else:
        pair = rng.integers(0, 4, n)
    i, j = pair // 2, pair % 2
    gen = rng.random(n) < genuine_fraction
    alpha = np.asarray(bases.alice)[i]
    beta = np.asarray(bases.bob)[j]
    p_same = np.where(gen, np.sin(alpha - beta) ** 2, 0.5)
    a = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    b = np.where(rng.random(n) < p_same, a, -a).astype(np.int8)
    return RecordBatch((i + 1).astype(np.int8), (j + 1).astype(np.int8), a, b, gen)
