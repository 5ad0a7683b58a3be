"""Shared fixtures and independent oracle helpers.

Oracles here deliberately avoid the library's code paths: homogeneous
matrices are built from scratch, pair scans are plain double loops.
"""

import math

import numpy as np
import pytest


def quat_to_mat_oracle(q):
    """Rotation matrix from (w,x,y,z) via the textbook expansion."""
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def homogeneous_oracle(position, quaternion):
    m = np.eye(4)
    m[:3, :3] = quat_to_mat_oracle(quaternion)
    m[:3, 3] = np.asarray(position, dtype=float)
    return m


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose_arrays(rng, scale=1.0):
    return rng.uniform(-scale, scale, size=3), random_quat(rng)


def min_pair_scan(points_a, points_b):
    """O(n*m) exhaustive minimum pairwise distance."""
    best = math.inf
    for pa in points_a:
        for pb in points_b:
            d = math.sqrt((pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2)
            if d < best:
                best = d
    return best


def marker_scan(series, epsilon):
    """Exhaustive scan of the threshold-crossing predicates with in-order pairing."""
    starts = [t for t in range(1, len(series)) if series[t - 1] > epsilon and series[t] < epsilon]
    ends = [t for t in range(1, len(series)) if series[t - 1] < epsilon and series[t] > epsilon]
    pairs = []
    open_start = None
    events = sorted([(t, "s") for t in starts] + [(t, "e") for t in ends])
    for t, kind in events:
        if kind == "s" and open_start is None:
            open_start = t
        elif kind == "e" and open_start is not None:
            pairs.append((open_start, t))
            open_start = None
    if open_start is not None:
        pairs.append((open_start, len(series) - 1))
    return pairs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
