import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

import oracles
from coherent_embed.curvature import (ZeroSegmentWarning, coherency_report, mac, read_coherency_table,
                                      sample_videos_evenly, tac, turn_angles)

HEXAGON = [(math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)) for k in range(4)]


def test_fixtures():
    assert tac([[0, 0], [1, 1], [2, 2], [5, 5]]) == pytest.approx(0.0, abs=1e-12)
    assert mac([[0, 0], [1, 1], [2, 2], [5, 5]]) == pytest.approx(0.0, abs=1e-12)
    assert tac([[0, 0], [1, 0], [1, 1]]) == pytest.approx(math.pi / 2, abs=1e-12)
    # two turns of pi/3 along four vertices of a regular hexagon
    assert tac(HEXAGON) == pytest.approx(2 * math.pi / 3, abs=1e-9)
    assert mac(HEXAGON) == pytest.approx(math.pi / 3, abs=1e-9)
    assert tac([[0, 0], [1, 0], [0, 0]]) == pytest.approx(math.pi)


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        tac([[0, 0], [1, 0]])


def test_zero_segment_skipped_with_warning():
    with pytest.warns(ZeroSegmentWarning):
        angles, skipped = turn_angles([[0, 0], [1, 0], [1, 0], [1, 1]])
    np.testing.assert_array_equal(skipped, [True, True])
    assert angles.sum() == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.integers(2, 6))
def test_matches_oracle_and_invariances(seed, T, D):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, D))
    ref = oracles.turning_angles(x)
    np.testing.assert_allclose(turn_angles(x)[0], ref, atol=1e-9)
    R = Rotation.random(random_state=seed).as_matrix() if D == 3 else np.linalg.qr(rng.standard_normal((D, D)))[0]
    moved = 2.7 * x @ R.T + rng.standard_normal(D)
    assert tac(moved) == pytest.approx(tac(x), abs=1e-9)
    assert mac(moved) == pytest.approx(mac(x), abs=1e-9)


def test_sample_videos_evenly_round_robin():
    labels = [0, 0, 0, 0, 1, 1, 2]
    picked = sample_videos_evenly(7, 5, labels, seed=1)
    got = [labels[i] for i in picked]
    assert len(picked) == 5 and got.count(2) == 1 and got.count(0) == 2 and got.count(1) == 2
    assert picked == sample_videos_evenly(7, 5, labels, seed=1)
    assert sample_videos_evenly(3, 10, None) == [0, 1, 2]


def test_report_and_table_round_trip(tmp_path):
    videos = [np.array([[0, 0], [1, 0], [1, 1], [2, 1]], float), np.array([[0, 0], [1, 0], [2, 0]], float)]
    rep = coherency_report(lambda v: v, videos)
    assert rep.mean_tac == pytest.approx((math.pi + 0.0) / 2)
    assert rep.mean_mac == pytest.approx(math.pi / 4)
    rep.write(tmp_path / "c.tsv")
    rows = read_coherency_table(tmp_path / "c.tsv")
    assert [r[:2] for r in rows] == [(0, 4), (1, 3)]
    assert rows[0][2] == rep.rows[0][2]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        coherency_report(lambda v: v, [np.zeros((3, 2))])
