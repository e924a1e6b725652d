import time

import numpy as np
import pytest

from ppseg.baseline import fps
from ppseg.projection import ConfigError, ProjectionConfig, project
from ppseg.sampling import SampleGrid, sample, sample_image
from ppseg.synthetic import synthetic_scan


def test_stride_arithmetic_corner_anchor():
    s = sample(np.ones((4, 4), bool), SampleGrid(4, 4, 2, 2, offset=(0, 0)))
    assert list(zip(s.center_v.ravel(), s.center_u.ravel())) == [(0, 0), (0, 2), (2, 0), (2, 2)]
    assert s.valid.all()


def test_default_anchor_is_cell_center():
    g = SampleGrid(8, 16, 2, 4)
    assert g.offset == (2, 2) and g.m == 8
    s = sample(np.ones((8, 16), bool), g)
    assert s.center_v[0, 0] == 2 and s.center_u[0, 1] == 6


def test_identity_sampling():
    c = synthetic_scan(0, ProjectionConfig(16, 64))
    img = project(c, ProjectionConfig(16, 64))
    chans, valid, pix2pt, _ = sample_image(img, SampleGrid(16, 64, 16, 64))
    np.testing.assert_array_equal(chans, img.channels)
    np.testing.assert_array_equal(valid, img.valid)
    np.testing.assert_array_equal(pix2pt, img.pix2pt)


def test_invalid_cell_gives_invalid_coarse_pixel():
    valid = np.ones((4, 4), bool)
    valid[:2, :2] = False
    s = sample(valid, SampleGrid(4, 4, 2, 2))
    assert s.valid.tolist() == [[False, True], [True, True]]


def test_fallback_nearest_valid_row_major_ties():
    valid = np.zeros((3, 3), bool)
    g = SampleGrid(3, 3, 1, 1)  # anchor (1, 1)
    valid[0, 1] = valid[1, 0] = valid[2, 2] = True
    s = sample(valid, g)
    # (0,1) and (1,0) are both at distance 1; row-major picks (0,1)
    assert (s.center_v[0, 0], s.center_u[0, 0]) == (0, 1)


def test_non_integral_stride_is_config_error():
    with pytest.raises(ConfigError):
        SampleGrid(64, 512, 3, 64)
    with pytest.raises(ConfigError):
        SampleGrid(4, 4, 2, 2, offset=(2, 0))


def test_sample_count_is_exactly_m():
    c = synthetic_scan(1)
    img = project(c, ProjectionConfig())
    for oh, ow in [(32, 256), (16, 128), (8, 32)]:
        s = sample(img.valid, SampleGrid(64, 512, oh, ow))
        assert s.center_v.size == oh * ow


def _shares(r):
    return np.array([(r < 10).mean(), ((r >= 10) & (r < 30)).mean(), (r >= 30).mean()])


def test_range_distribution_grid_vs_fps():
    """Grid samples follow the cloud's range distribution; FPS over-samples far points."""
    cfg = ProjectionConfig()
    for seed in range(3):
        c = synthetic_scan(seed, cfg)
        img = project(c, cfg)
        cloud_share = _shares(c.range)
        s = sample(img.valid, SampleGrid(64, 512, 32, 64))
        grid_r = img.range[s.center_v, s.center_u][s.valid]
        assert np.abs(_shares(grid_r) - cloud_share).max() <= 0.05
        far = _shares(c.range[fps(c.xyz, int(s.valid.sum()))])[2]
        assert far - cloud_share[2] > 0.10


def test_runtime_roughly_linear_in_m():
    valid = np.random.default_rng(0).random((512, 4096)) > 0.3
    sizes = [(32, 256), (64, 512), (128, 1024), (256, 2048)]
    ms = []
    for oh, ow in sizes:
        g = SampleGrid(512, 4096, oh, ow)
        best = min(_time(lambda: sample(valid, g)) for _ in range(7))
        ms.append(best)
    m = np.array([oh * ow for oh, ow in sizes], float)
    slope = np.polyfit(np.log(m), np.log(ms), 1)[0]
    assert 0.7 < slope < 1.3


def _time(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t
