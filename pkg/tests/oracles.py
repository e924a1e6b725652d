"""Independent brute-force oracles used by several test modules."""
import numpy as np

from ppseg.grouping import GroupingConfig, group
from ppseg.projection import ProjectionConfig, project
from ppseg.sampling import SampleGrid, sample
from ppseg.synthetic import synthetic_scan


def brute_ball(points, center, radius):
    """Double loop over points, no shared code with the library."""
    out = []
    for i, p in enumerate(points):
        d = ((p[0] - center[0]) ** 2 + (p[1] - center[1]) ** 2 + (p[2] - center[2]) ** 2) ** 0.5
        if d <= radius:
            out.append(i)
    return out


def grouping_against_ball_query(seed, dilation=None, k=5):
    """Compare masked window neighborhoods with exact radius search.

    Returns ``(violations, covered, mismatches_on_covered, centers)``.
    A center is covered when every point of its exact ball projects to a
    pixel inside its window and wins that pixel.
    """
    rng = np.random.default_rng(seed)
    cfg = ProjectionConfig(32, 128)
    cloud = synthetic_scan(seed, cfg, jitter=float(rng.uniform(0, 0.4)))
    assert cloud.n <= 5000
    image = project(cloud, cfg)
    radius = float(rng.uniform(0.3, 1.5))
    s = sample(image.valid, SampleGrid(32, 128, 16, 64))
    b = group(image.xyz, image.valid, s, GroupingConfig(k, radius), dilation=dilation)
    pix2pt = image.pix2pt.reshape(-1)
    pts = cloud.xyz
    # vectorised exact ball per center (all pairwise distances)
    cv, cu = np.nonzero(s.valid)
    centers = image.xyz[s.center_v[cv, cu], s.center_u[cv, cu]]
    d = np.sqrt(((centers[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    violations = covered = mismatches = 0
    for c, (i, j) in enumerate(zip(cv, cu)):
        ball = set(np.flatnonzero(d[c] <= radius).tolist())
        masked = set(pix2pt[b.slot_index[i, j][b.mask[i, j]]].tolist())
        violations += len(masked - ball)
        window_pts = set(pix2pt[b.slot_index[i, j][b.slot_valid[i, j]]].tolist())
        if ball <= window_pts:
            covered += 1
            mismatches += masked != ball
    return violations, covered, mismatches, len(cv)
