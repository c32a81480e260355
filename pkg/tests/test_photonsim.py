import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bellshadow import photonsim as ps
from bellshadow.belltest import chsh_from_records

SRC = ps.SourceParams()
NOISELESS = ps.NoiseParams()
BASES = ps.MeasurementBases()


def correlator(a, b):
    return float(np.mean(a.astype(int) * b.astype(int)))


@pytest.mark.parametrize("delta, expected", [(0.0, -1.0), (math.pi / 4, 0.0)])
def test_born_exact_cases(delta, expected):
    rng = np.random.default_rng(1)
    a, b = ps.born_outcome(0.3, 0.3 + delta, rng, size=20000)
    if expected == -1.0:
        assert np.all(a == -b)
    else:
        assert correlator(a, b) == pytest.approx(0.0, abs=0.03)


def test_born_monte_carlo_convergence():
    a, b = ps.born_outcome(0.0, math.pi / 8, np.random.default_rng(2), size=1_000_000)
    assert correlator(a, b) == pytest.approx(-math.sqrt(2) / 2, abs=0.003)
    single = ps.born_outcome(0.0, 0.0, np.random.default_rng(3))
    assert single[0] == -single[1] and single[0] in (1, -1)


def test_ideal_chsh_sign_and_order():
    assert ps.ideal_chsh() == pytest.approx(-2 * math.sqrt(2))
    swapped = ps.MeasurementBases(bob=(math.pi / 8, -math.pi / 8))
    assert ps.ideal_chsh(swapped) == pytest.approx(0.0, abs=1e-12)


def test_lossless_noiseless_run_is_all_genuine():
    cfg = ps.RunConfig(t_acq=1e-4, eta_a=1.0, eta_b=1.0, seed_stream=(1, 0, 0))
    for engine in ("counts", "photon"):
        batch = ps.simulate_run(SRC, NOISELESS, BASES, cfg, engine)
        assert len(batch) == 1000
        assert batch.genuine.all()
        assert set(np.unique(batch.alice_basis)) <= {1, 2}
        assert set(np.unique(batch.alice_outcome)) <= {-1, 1}


def test_pair_free_noise_is_contaminated_and_uncorrelated():
    src = ps.SourceParams(pair_rate=0.0)
    noise = ps.NoiseParams(bkg_rate_a=1e6, bkg_rate_b=1e6)
    s = []
    for r in range(200):
        cfg = ps.RunConfig(1e-3, 1.0, 1.0, seed_stream=(4, 0, r))
        batch = ps.simulate_run(src, noise, BASES, cfg)
        assert not batch.genuine.any()
        v = chsh_from_records(batch)
        if v is not None:
            s.append(v)
    s = np.array(s)
    assert abs(s.mean()) < 4 * s.std() / math.sqrt(len(s))


@pytest.mark.parametrize("engine", ["counts", "photon"])
def test_genuine_count_matches_binomial_mean(engine):
    eta_a, eta_b, t_acq = 0.3, 0.02, 1e-3
    cfg0 = ps.RunConfig(t_acq, eta_a, eta_b)
    n_slots = cfg0.n_slots(SRC)
    p = 1.0 * eta_a * eta_b
    counts = [int(ps.simulate_run(SRC, NOISELESS, BASES, ps.RunConfig(t_acq, eta_a, eta_b, seed_stream=(5, 1, r)),
                                  engine).genuine.sum()) for r in range(100)]
    se = math.sqrt(n_slots * p * (1 - p) / 100)
    assert abs(np.mean(counts) - n_slots * p) < 3 * se


def test_photon_engine_rate_consistency():
    # 10^6 slots at one pair per slot
    cfg = ps.RunConfig(0.1, 0.5, 0.5, seed_stream=(6, 0, 0))
    batch = ps.simulate_run(SRC, NOISELESS, BASES, cfg, "photon")
    rate = batch.genuine.sum() / cfg.t_acq
    assert rate == pytest.approx(SRC.pair_rate * 0.25, rel=0.02)


@pytest.mark.parametrize("engine", ["counts", "photon"])
def test_contamination_fraction_matches_closed_form(engine):
    noise = ps.NoiseParams(bkg_rate_a=2e5, bkg_rate_b=3e5, dark_rate_a=1e5, dark_rate_b=1e4)
    eta_a, eta_b = 0.2, 0.05
    probs = ps.run_slot_probabilities(SRC, noise, ps.RunConfig(1e-3, eta_a, eta_b))
    f_c = float(probs.contaminated / probs.record)
    gen = con = 0
    for r in range(40):
        b = ps.simulate_run(SRC, noise, BASES, ps.RunConfig(1e-3, eta_a, eta_b, seed_stream=(7, 2, r)), engine)
        gen += int(b.genuine.sum())
        con += len(b) - int(b.genuine.sum())
    n = gen + con
    assert abs(con / n - f_c) < 3 * math.sqrt(f_c * (1 - f_c) / n)


def brute_force_slot(pe, ea, eb, ba, da, bb, db):
    """Enumerate every combination of the per-slot Bernoulli events."""
    pg_a = pe * ea / (pe * ea + ba + da) if pe * ea + ba + da > 0 else 0.0
    pg_b = pe * eb / (pe * eb + bb + db) if pe * eb + bb + db > 0 else 0.0
    gen = rec = 0.0
    for emit in (0, 1):
        for arm_a in (0, 1):
            for arm_b in (0, 1):
                for noise_a in (0, 1):
                    for noise_b in (0, 1):
                        if not emit and (arm_a or arm_b):
                            continue
                        w = (pe if emit else 1 - pe)
                        if emit:
                            w *= (ea if arm_a else 1 - ea) * (eb if arm_b else 1 - eb)
                        na = 1 - (1 - ba) * (1 - da)
                        nb = 1 - (1 - bb) * (1 - db)
                        w *= (na if noise_a else 1 - na) * (nb if noise_b else 1 - nb)
                        if (arm_a or noise_a) and (arm_b or noise_b):
                            rec += w
                            if arm_a and arm_b:
                                gen += w * (pg_a if noise_a else 1.0) * (pg_b if noise_b else 1.0)
    return gen, rec


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), *(st.floats(0, 0.3) for _ in range(4)))
def test_slot_probabilities_match_enumeration(pe, ea, eb, ba, da, bb, db):
    probs = ps.slot_probabilities(pe, ea, eb, ba, da, bb, db)
    gen, rec = brute_force_slot(pe, ea, eb, ba, da, bb, db)
    assert float(probs.genuine) == pytest.approx(gen, abs=1e-12)
    assert float(probs.record) == pytest.approx(rec, abs=1e-12)


def test_genuine_correlators_converge():
    cfg = ps.RunConfig(0.02, 1.0, 1.0, seed_stream=(8, 0, 0))
    batch = ps.simulate_run(SRC, NOISELESS, BASES, cfg)
    for i in (1, 2):
        for j in (1, 2):
            sel = (batch.alice_basis == i) & (batch.bob_basis == j)
            e = correlator(batch.alice_outcome[sel], batch.bob_outcome[sel])
            expected = float(ps.singlet_correlator(BASES.alice[i - 1], BASES.bob[j - 1]))
            assert e == pytest.approx(expected, abs=4 / math.sqrt(sel.sum()))


def test_determinism_of_seed_stream():
    noise = ps.NoiseParams(1e4, 1e4, 1e3, 1e3)
    cfg = ps.RunConfig(1e-3, 0.1, 0.1, seed_stream=(9, 3, 4))
    for engine in ("counts", "photon"):
        a = ps.simulate_run(SRC, noise, BASES, cfg, engine)
        b = ps.simulate_run(SRC, noise, BASES, cfg, engine)
        assert a.to_list() == b.to_list()
    other = ps.simulate_run(SRC, noise, BASES, ps.RunConfig(1e-3, 0.1, 0.1, seed_stream=(9, 3, 5)))
    assert other.to_list() != a.to_list()


def test_key_rounds_use_key_bases():
    cfg = ps.RunConfig(1e-3, 1.0, 1.0, seed_stream=(10, 0, 0))
    batch = ps.simulate_run(SRC, NOISELESS, BASES, cfg, key_fraction=0.5)
    frac = batch.key_round.mean()
    assert frac == pytest.approx(0.5, abs=0.05)
    key = batch.select(batch.key_round & (batch.alice_basis == batch.bob_basis))
    assert np.all(key.alice_outcome == -key.bob_outcome)


def test_slot_validation():
    with pytest.raises(ValueError):
        ps.RunConfig(1e-9, 1.0, 1.0).validate(SRC)
    with pytest.raises(ValueError):
        ps.RunConfig(1e-3, 1.2, 1.0).validate(SRC)
    with pytest.raises(ValueError):
        ps.simulate_run(SRC, ps.NoiseParams(bkg_rate_a=2e7), BASES, ps.RunConfig(1e-3, 1.0, 1.0))
    with pytest.raises(ValueError):
        ps.simulate_run(SRC, NOISELESS, BASES, ps.RunConfig(1e-3, 1.0, 1.0), engine="magic")
    with pytest.raises(ValueError):
        ps.NoiseParams(dark_rate_a=-1.0)
    assert ps.RunConfig(1e-3, 1, 1).slot(ps.SourceParams(0.0)) == ps.FALLBACK_SLOT


def test_record_batch_round_trip():
    batch = ps.simulate_fixed_coincidences(40, 0.5, BASES, np.random.default_rng(0))
    again = ps.RecordBatch.from_records(batch.to_list())
    assert again.to_list() == batch.to_list()
    both = ps.RecordBatch.concatenate([batch, again])
    assert len(both) == 80
    assert isinstance(batch[0], ps.CoincidenceRecord)
    with pytest.raises(ValueError):
        ps.simulate_fixed_coincidences(41, 0.5, BASES, np.random.default_rng(0))


# swap


def _swap_cfgs(eta_ground, r=0):
    return (ps.RunConfig(1e-4, 1.0, eta_ground, seed_stream=(11, 0, r)),
            ps.RunConfig(1e-4, 1.0, eta_ground, seed_stream=(11, 0, r)))


def test_deterministic_swap_keeps_all_pairs():
    c1, c2 = _swap_cfgs(1.0)
    batch = ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 1.0)
    assert len(batch) == 1000 and batch.genuine.all()


def test_failed_swaps():
    c1, c2 = _swap_cfgs(1.0)
    dropped = ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 0.0, failed_swap="discard")
    assert len(dropped) == 0
    noisy = ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 0.0, failed_swap="random")
    assert len(noisy) == 1000 and not noisy.genuine.any()
    with pytest.raises(ValueError):
        ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 1.5)
    with pytest.raises(ValueError):
        ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 0.5, failed_swap="retry")


def test_half_swap_thins_binomially():
    counts = []
    for r in range(30):
        c1, c2 = _swap_cfgs(0.5, r)
        counts.append(len(ps.simulate_swap_run(c1, c2, SRC, NOISELESS, BASES, 0.5, failed_swap="discard")))
    # link counts are Bin(1000, 0.5); the smaller of two is about 487
    m = 1000 * 0.5 - 0.5642 * math.sqrt(1000 * 0.25)
    for k in counts:
        assert abs(k - 0.5 * m) < 3 * math.sqrt(m * 0.25) + 3 * 0.5 * math.sqrt(250)
    assert np.mean(counts) == pytest.approx(0.5 * m, rel=0.03)


def test_swap_genuine_fraction_is_product():
    noise = ps.NoiseParams(bkg_rate_a=3e5, bkg_rate_b=3e5, dark_rate_sat=1e5)
    gen = tot = 0
    for r in range(40):
        c1 = ps.RunConfig(1e-3, 0.5, 0.1, seed_stream=(12, 0, r))
        c2 = ps.RunConfig(1e-3, 0.5, 0.1, seed_stream=(12, 0, r))
        b = ps.simulate_swap_run(c1, c2, SRC, noise, BASES, 0.9)
        gen += int(b.genuine.sum())
        tot += len(b)
    pe = 1.0
    f1 = ps.genuine_fraction(ps.slot_probabilities(pe, 0.5, 0.1, 0.0, 1e5 * 1e-7, 3e5 * 1e-7, 0.0))
    expected = 0.9 * float(f1) ** 2
    assert gen / tot == pytest.approx(expected, abs=3 * math.sqrt(expected * (1 - expected) / tot))


def test_split_counts_conserve_totals():
    u = ps._stream_uniforms((13, 0, 0))
    weights, same = ps.category_layout(BASES, 0.3)
    assert weights.sum() == pytest.approx(1.0)
    c = ps.split_counts(np.int64(500), np.int64(300), u, weights, same)
    assert c.genuine.sum() == 500 and c.contaminated.sum() == 300
    assert np.all(c.genuine_same <= c.genuine) and np.all(c.contaminated_same <= c.contaminated)
