import numpy as np
import pytest

from demoskill import geometry as geo
from demoskill.errors import EmptyCloudError, FrameMismatchError, InvalidPoseError

from conftest import homogeneous_oracle, min_pair_scan, random_pose_arrays


def random_pose(rng, scale=1.0):
    p, q = random_pose_arrays(rng, scale)
    return geo.Pose(p, q)


class TestPose:
    def test_identity_compose(self, rng):
        p = random_pose(rng)
        out = geo.compose(geo.Pose.identity(), p)
        assert np.allclose(out.position, p.position, atol=1e-12)
        assert abs(abs(np.dot(out.quaternion, p.quaternion)) - 1) < 1e-12

    def test_pure_translation_adds(self):
        a = geo.Pose([1, 0, 0])
        b = geo.Pose([0, 2, 0])
        out = geo.compose(a, b)
        assert np.allclose(out.position, [1, 2, 0])

    def test_compose_matches_matrix_oracle(self, rng):
        for _ in range(200):
            a = random_pose(rng)
            b = random_pose(rng)
            out = geo.compose(a, b)
            expected = homogeneous_oracle(a.position, a.quaternion) @ homogeneous_oracle(
                b.position, b.quaternion)
            assert np.allclose(out.matrix(), expected, atol=1e-9)

    def test_compose_inverse_is_identity(self, rng):
        for _ in range(100):
            p = random_pose(rng)
            out = geo.compose(p, geo.inverse(p))
            assert np.linalg.norm(out.position) < 1e-9
            assert abs(abs(out.quaternion[0]) - 1) < 1e-9

    def test_compose_associative(self, rng):
        for _ in range(100):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = geo.compose(geo.compose(a, b), c)
            right = geo.compose(a, geo.compose(b, c))
            assert np.allclose(left.position, right.position, atol=1e-8)
            assert abs(abs(np.dot(left.quaternion, right.quaternion)) - 1) < 1e-8

    def test_relative_pose_self(self, rng):
        p = random_pose(rng)
        r = geo.relative_pose(p, p)
        assert np.linalg.norm(r.position) < 1e-9
        assert abs(r.quaternion[0] - 1) < 1e-9

    def test_relative_pose_identity_reference(self, rng):
        t = random_pose(rng)
        r = geo.relative_pose(geo.Pose.identity(), t)
        assert np.allclose(r.position, t.position, atol=1e-12)

    def test_relative_pose_round_trip(self, rng):
        for _ in range(100):
            ref, target = random_pose(rng), random_pose(rng)
            r = geo.relative_pose(ref, target)
            back = geo.compose(ref, r)
            assert np.allclose(back.position, target.position, atol=1e-9)
            assert abs(abs(np.dot(back.quaternion, target.quaternion)) - 1) < 1e-9

    def test_quaternion_canonical_w(self, rng):
        p, q = random_pose_arrays(rng)
        q = -q if q[0] > 0 else q  # force a negative-w input
        pose = geo.Pose(p, q)
        assert pose.quaternion[0] >= 0
        assert abs(np.linalg.norm(pose.quaternion) - 1) < 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidPoseError):
            geo.Pose([np.nan, 0, 0])
        with pytest.raises(InvalidPoseError):
            geo.Pose([0, 0, 0], [np.inf, 0, 0, 0])

    def test_axis_angle_round_trip(self, rng):
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(0.01, np.pi - 0.01)
            q = geo.quat_from_axis_angle(axis, angle)
            out_axis, out_angle = geo.quat_to_axis_angle(q)
            assert abs(out_angle - angle) < 1e-9
            assert np.allclose(out_axis, axis, atol=1e-9) or np.allclose(out_axis, -axis, atol=1e-9)

    def test_quat_from_matrix_round_trip(self, rng):
        for _ in range(50):
            _, q = random_pose_arrays(rng)
            if q[0] < 0:
                q = -q
            m = geo.quat_to_matrix(q)
            back = geo.quat_from_matrix(m)
            assert abs(abs(np.dot(back, q)) - 1) < 1e-9


class TestCloudDistance:
    def test_identical_clouds_zero(self, rng):
        pts = rng.uniform(-1, 1, size=(30, 3))
        a = geo.PointCloud(pts)
        b = geo.PointCloud(pts.copy())
        assert geo.cloud_distance(a, b) == 0.0

    def test_three_four_five(self):
        a = geo.PointCloud([[0, 0, 0]])
        b = geo.PointCloud([[3, 4, 0]])
        assert geo.cloud_distance(a, b) == pytest.approx(5.0, abs=1e-12)

    def test_matches_pair_scan(self, rng):
        for _ in range(20):
            pa = rng.uniform(-1, 1, size=(50, 3))
            pb = rng.uniform(-1, 1, size=(50, 3))
            got = geo.cloud_distance(geo.PointCloud(pa), geo.PointCloud(pb))
            assert got == pytest.approx(min_pair_scan(pa, pb), abs=1e-12)

    def test_symmetric(self, rng):
        pa = rng.uniform(-1, 1, size=(40, 3))
        pb = rng.uniform(-1, 1, size=(7, 3))
        a, b = geo.PointCloud(pa), geo.PointCloud(pb)
        assert geo.cloud_distance(a, b) == geo.cloud_distance(b, a)

    def test_zero_iff_shared_point(self, rng):
        pa = rng.uniform(-1, 1, size=(10, 3))
        pb = rng.uniform(2, 3, size=(10, 3))
        assert geo.cloud_distance(geo.PointCloud(pa), geo.PointCloud(pb)) > 0
        pb[4] = pa[7]
        assert geo.cloud_distance(geo.PointCloud(pa), geo.PointCloud(pb)) == 0.0

    def test_empty_cloud_rejected(self):
        a = geo.PointCloud(np.zeros((0, 3)))
        b = geo.PointCloud([[0, 0, 0]])
        with pytest.raises(EmptyCloudError):
            geo.cloud_distance(a, b)

    def test_frame_mismatch_rejected(self):
        a = geo.PointCloud([[0, 0, 0]], frame="world")
        b = geo.PointCloud([[1, 0, 0]], frame="object")
        with pytest.raises(FrameMismatchError):
            geo.cloud_distance(a, b)

    def test_centroid_strategy(self):
        a = geo.PointCloud([[0, 0, 0], [2, 0, 0]])
        b = geo.PointCloud([[1, 3, 0], [1, 5, 0]])
        assert geo.cloud_distance(a, b, strategy="centroid") == pytest.approx(4.0)


class TestComputeBbox:
    def test_unit_cube_corners(self):
        corners = [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        props = geo.compute_bbox(geo.PointCloud(corners), "cube")
        assert np.allclose(props.bbox_extents, [1, 1, 1])
        assert np.allclose(props.bbox_center.position, [0.5, 0.5, 0.5])

    def test_single_point_clamped(self):
        props = geo.compute_bbox(geo.PointCloud([[0.3, -0.1, 2.0]]))
        assert np.allclose(props.bbox_extents, [1e-6] * 3)

    def test_containment(self, rng):
        pts = rng.normal(size=(200, 3))
        props = geo.compute_bbox(geo.PointCloud(pts))
        half = props.bbox_extents / 2
        center = props.bbox_center.position
        for p in pts:
            assert np.all(p >= center - half - 1e-12)
            assert np.all(p <= center + half + 1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyCloudError):
            geo.compute_bbox(geo.PointCloud(np.zeros((0, 3))))

    def test_normalize_round_trip(self, rng):
        pts = rng.uniform(-2, 5, size=(50, 3))
        props = geo.compute_bbox(geo.PointCloud(pts))
        for p in pts[:10]:
            n = geo.normalize_point(p, props)
            assert np.all(np.abs(n) <= 0.5 + 1e-12)
            assert np.allclose(geo.denormalize_point(n, props), p, atol=1e-12)
