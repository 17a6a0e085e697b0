import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coherent_embed.core import DatasetIndex, VideoEntry
from coherent_embed.memory_bank import InsufficientNegativesError, MemoryBank, init_bank
from coherent_embed.mining import MiningSchedule, radius, sample_within_video, select_negatives


def index_of(lengths):
    return DatasetIndex(tuple(VideoEntry(i, n, f"v{i}", None) for i, n in enumerate(lengths)))


def test_radius_examples():
    s = MiningSchedule(-1.0, 1.0, 9.0)
    assert radius(s, 0.0) == -1.0
    assert radius(s, 9.0) == pytest.approx(0.9865242, abs=1e-7)
    assert radius(s, 4.5) == pytest.approx(0.8358300, abs=1e-7)
    assert abs(radius(s, 9.0) - (-1 + 2 * (1 - math.exp(-5)))) <= 1e-12
    for bad in (-0.1, 9.01):
        with pytest.raises(ValueError):
            radius(s, bad)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 100))
def test_radius_monotone(a, b, E):
    s = MiningSchedule(min(a, b), max(a, b), E)
    r = [radius(s, t) for t in np.linspace(0, E, 200)]
    assert r[0] == s.r0
    assert all(y >= x for x, y in zip(r, r[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        MiningSchedule(0.5, 0.2)
    with pytest.raises(ValueError):
        MiningSchedule(-2, 1)
    with pytest.raises(ValueError):
        MiningSchedule(epochs=0)


def bank_with_sims(sims, video_of_key, lengths):
    """Unit vectors in 2-D whose similarity to (1, 0) is exactly ``sims``."""
    sims = np.asarray(sims, dtype=np.float64)
    vecs = np.stack([sims, np.sqrt(1 - sims**2)], axis=1)
    return MemoryBank(index_of(lengths), vecs.astype(np.float64))


def test_hand_set_bank_example():
    # video 0 holds the anchor's own frames; video 1 holds six candidates
    sims = [0.0, 0.0, 0.9, 0.5, 0.1, -0.2, -0.6, -0.9]
    bank = bank_with_sims(sims, None, [2, 6])
    keys = select_negatives(bank, np.array([1.0, 0.0]), 0, 2, 0.2, np.random.default_rng(0))
    np.testing.assert_allclose(bank.vectors[keys, 0], [0.1, -0.2])


def test_boundary_radii():
    rng = np.random.default_rng(0)
    bank = init_bank(index_of([3, 4, 5]), dim=8, seed=1, dtype=np.float64)
    anchor = bank.vectors[0]
    top = select_negatives(bank, anchor, 0, 4, 1.0, rng)
    cand = np.arange(3, 12)
    sims = bank.vectors[cand] @ anchor
    np.testing.assert_array_equal(top, cand[np.argsort(-sims, kind="stable")][:4])
    random_only = select_negatives(bank, anchor, 0, 4, -1.0, np.random.default_rng(5))
    assert len(set(random_only.tolist())) == 4 and all(k >= 3 for k in random_only)


def test_ties_break_by_ascending_key():
    bank = bank_with_sims([1.0, 0.3, 0.3, 0.3, 0.3], None, [1 + 1, 3])
    keys = select_negatives(bank, np.array([1.0, 0.0]), 0, 2, 0.5, np.random.default_rng(0))
    np.testing.assert_array_equal(keys, [2, 3])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(2, 40, size=rng.integers(2, 25)).tolist()
    bank = init_bank(index_of(lengths), dim=4, seed=seed, dtype=np.float64)
    if rng.random() < 0.3:  # force exact ties
        bank.vectors[rng.integers(len(bank), size=len(bank) // 3)] = bank.vectors[0]
    av = int(rng.integers(len(lengths)))
    anchor = rng.standard_normal(4)
    pool = len(bank) - lengths[av]
    n = int(rng.integers(0, pool + 1))
    r = float(rng.uniform(-1, 1))
    keys = select_negatives(bank, anchor, av, n, r, np.random.default_rng(seed))
    sims = (bank.vectors @ (anchor / np.linalg.norm(anchor))).tolist()
    mined, fill, outside = oracles.select_negatives(sims, bank.key_video.tolist(), av, n, r)
    assert keys[:len(mined)].tolist() == mined
    assert len(keys) == n and len(set(keys.tolist())) == n
    assert set(keys[len(mined):].tolist()) <= outside and len(keys) - len(mined) == fill
    assert not np.any(bank.key_video[keys] == av)


def test_select_is_deterministic_and_raises_when_short():
    bank = init_bank(index_of([3, 3]), dim=4, seed=0)
    a = select_negatives(bank, bank.vectors[0], 0, 3, -1.0, np.random.default_rng(9))
    b = select_negatives(bank, bank.vectors[0], 0, 3, -1.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(InsufficientNegativesError):
        select_negatives(bank, bank.vectors[0], 0, 4, 0.0, np.random.default_rng(0))


def test_within_video_sampling_excludes_frames():
    bank = init_bank(index_of([4, 10]), dim=4, seed=0)
    keys = sample_within_video(bank, 1, (2, 3, 4), 100, np.random.default_rng(0))
    assert sorted(keys.tolist()) == [4 + t for t in (0, 1, 5, 6, 7, 8, 9)]
    assert sample_within_video(bank, 0, (0, 1, 2, 3), 5, np.random.default_rng(0)).size == 0
    assert sample_within_video(bank, 1, (0, 1, 2), 3, np.random.default_rng(0)).size == 3
