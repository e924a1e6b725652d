import time

import numpy as np
import pytest

from oracles import brute_ball, grouping_against_ball_query
from ppseg.grouping import EPS, GroupingConfig, group, inverse_density, localize, unfold, window_index
from ppseg.projection import ConfigError, ProjectionConfig, project
from ppseg.sampling import SampleGrid, sample
from ppseg.synthetic import synthetic_scan


def _identity(H, W, valid=None):
    valid = np.ones((H, W), bool) if valid is None else valid
    return valid, sample(valid, SampleGrid(H, W, H, W))


def test_k_must_be_odd():
    with pytest.raises(ConfigError):
        GroupingConfig(k=4)
    valid, s = _identity(3, 3)
    with pytest.raises(ConfigError):
        window_index(valid, s, 2)


def test_k1_unfold_is_sampled_features():
    H, W = 8, 16
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(H, W, 4))
    valid = np.ones((H, W), bool)
    s = sample(valid, SampleGrid(H, W, 4, 8))
    b = group(rng.normal(size=(H, W, 3)), valid, s, GroupingConfig(1, 1.0))
    F = unfold(feats, b).data
    np.testing.assert_array_equal(F[:, :, 0], s.take(feats))


def test_columns_wrap_rows_flag_invalid():
    H, W = 5, 6
    valid, s = _identity(H, W)
    idx, sv = window_index(valid, s, 3, (1, 1))
    # center (2, 0): left neighbors from column W-1
    left = idx[2, 0].reshape(3, 3)[:, 0]
    np.testing.assert_array_equal(left % W, [W - 1] * 3)
    assert sv[2, 0].all()
    # center (0, 3): the row above is outside the image
    assert not sv[0, 3].reshape(3, 3)[0].any() and sv[0, 3].reshape(3, 3)[1:].all()
    assert np.all((idx >= 0) & (idx < H * W))


def test_constant_image_slots_identical():
    valid, s = _identity(3, 3)
    xyz = np.ones((3, 3, 3))
    b = group(xyz, valid, s, GroupingConfig(3, 1.0), dilation=(1, 1))
    F = unfold(np.full((3, 3, 2), 7.0), b, xyz).data
    center = F[1, 1]
    assert np.all(center == center[0])


def test_invalid_slots_are_zero_and_unmasked():
    valid = np.ones((4, 4), bool)
    valid[1, 2] = False
    _, s = _identity(4, 4, valid)
    xyz = np.zeros((4, 4, 3))
    b = group(xyz, valid, s, GroupingConfig(3, 10.0), dilation=(1, 1))
    F = unfold(np.ones((4, 4, 1)), b).data
    slot = 1 * 3 + 2  # neighbor (1, 2) of center (1, 1)
    assert F[1, 1, slot, 0] == 0 and not b.mask[1, 1, slot]
    assert not b.mask[1, 2].any()  # invalid center masks everything
    assert b.inv_density[1, 2] == 0


def test_localize_examples():
    xyz = np.array([[0.0, 0, 0], [2.0, 0, 0], [0.5, 0, 0]])
    idx = np.array([[[0, 1, 2]]])
    sv = np.ones((1, 1, 3), bool)
    P, dist, mask, inv = localize(xyz, idx, sv, np.array([[0]]), 1.0)
    np.testing.assert_array_equal(P[0, 0, 0], [0, 0, 0])
    assert dist[0, 0, 0] == 0 and mask[0, 0, 0] and inv[0, 0, 0] == 1 / EPS
    assert not mask[0, 0, 1] and inv[0, 0, 1] == 0
    assert mask[0, 0, 2] and inv[0, 0, 2] == 2.0


def test_bundle_invariants_on_scan():
    cfg = ProjectionConfig(32, 256)
    img = project(synthetic_scan(2, cfg, azimuth_oversample=2), cfg)
    s = sample(img.valid, SampleGrid(32, 256, 16, 64))
    b = group(img.xyz, img.valid, s, GroupingConfig(5, 1.0))
    assert np.all(b.dist >= 0)
    c = b.center_slot
    assert np.all(b.dist[..., c][s.valid] == 0) and b.mask[..., c][s.valid].all()
    assert np.all(b.dist[b.mask] <= 1.0) and np.all(b.slot_valid[b.mask])
    np.testing.assert_array_equal(b.inv_dist, b.mask / np.maximum(b.dist, EPS))
    assert np.all(b.inv_density[s.valid] > 0) and np.all(b.inv_density <= 1)
    assert not b.inv_density[~s.valid].any()


def test_inverse_density_examples():
    dist = np.array([[[0.0, 5.0], [0.0, 0.0]]])
    mask = np.array([[[True, False], [True, True]]])
    D = inverse_density(dist, mask, 0.5, np.ones((1, 2), bool), rescale=False)
    np.testing.assert_array_equal(D, [[1.0, 0.5]])
    sparse = inverse_density(np.array([[[0.0, 0.9]]]), np.ones((1, 1, 2), bool), 0.5, np.ones((1, 1), bool), False)
    dense = inverse_density(np.array([[[0.0, 0.3]]]), np.ones((1, 1, 2), bool), 0.5, np.ones((1, 1), bool), False)
    assert dense[0, 0] < sparse[0, 0]
    with pytest.raises(ConfigError):
        inverse_density(dist, mask, 0.0, np.ones((1, 2), bool))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("dilation", [None, (1, 1)])
def test_masked_window_matches_ball_query(seed, dilation):
    violations, covered, mismatches, n = grouping_against_ball_query(seed, dilation)
    assert violations == 0
    assert covered > 0 and mismatches == 0


def test_brute_ball_oracle_agrees_with_library():
    from ppseg.baseline import ball_query

    pts = np.random.default_rng(3).uniform(-2, 2, (300, 3))
    for c in pts[:10]:
        assert ball_query(pts, c, 1.0).tolist() == brute_ball(pts, c, 1.0)


def test_masked_count_non_decreasing_in_k():
    cfg = ProjectionConfig(32, 256)
    img = project(synthetic_scan(4, cfg), cfg)
    s = sample(img.valid, SampleGrid(32, 256, 16, 128))
    counts = [group(img.xyz, img.valid, s, GroupingConfig(k, 2.0)).mask.sum(-1) for k in (1, 3, 5, 7, 9)]
    for a, b in zip(counts, counts[1:]):
        assert np.all(b >= a)


def test_grouping_runtime_increases_with_k():
    cfg = ProjectionConfig(64, 1024)
    img = project(synthetic_scan(0, cfg), cfg)
    s = sample(img.valid, SampleGrid(64, 1024, 32, 512))
    times = []
    for k in (3, 5, 7):
        gc = GroupingConfig(k, 1.0)
        best = np.inf
        for _ in range(5):
            t = time.perf_counter()
            group(img.xyz, img.valid, s, gc)
            best = min(best, time.perf_counter() - t)
        times.append(best)
    assert times[0] < times[1] < times[2]
    # roughly proportional to k^2
    slope = np.polyfit(np.log([9, 25, 49]), np.log(times), 1)[0]
    assert 0.5 < slope < 1.5
