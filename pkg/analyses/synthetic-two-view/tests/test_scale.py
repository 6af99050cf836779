import math

import numpy as np
import pytest

from conftest import rotvec_pose
from errors import InsufficientDataError, InvalidInputError
from geometry import CameraIntrinsics, RigidPose
from scale import (
    MedianDepth,
    SparsePointCloud,
    median_depth,
    scale_transform,
    sparse_view_depths,
    triangulate_correspondences,
    view_median_depth,
)

K = CameraIntrinsics(50.0, 50.0, 20.0, 15.0)


class TestScaleTransform:
    def test_zero_field_gives_median(self):
        np.testing.assert_array_equal(scale_transform(np.zeros((3, 4)), MedianDepth(10.0)), 10.0)

    def test_log_inverse(self):
        assert scale_transform(np.array([[math.log(3.0)]]), 1.0)[0, 0] == pytest.approx(3.0, rel=1e-15)

    def test_scalar_evaluation(self):
        assert scale_transform(np.array([[1.0]]), 2.0)[0, 0] == pytest.approx(2 * math.e, rel=1e-15)

    def test_matches_scalar_exp(self, rng):
        relative = rng.normal(size=(5, 5))
        depth = scale_transform(relative, 1.7)
        for r, d in zip(relative.ravel(), depth.ravel()):
            assert d == pytest.approx(1.7 * math.exp(r), rel=1e-15)

    def test_monotone(self, rng):
        relative = rng.normal(size=50)[None, :]
        depth = scale_transform(relative, 3.0)
        np.testing.assert_array_equal(np.argsort(relative[0]), np.argsort(depth[0]))

    def test_joint_scale_equivariance(self, rng):
        relative = rng.normal(size=(4, 4))
        for k in (0.5, 2.0, 8.0):
            np.testing.assert_array_equal(scale_transform(relative, 4.0 * k), k * scale_transform(relative, 4.0))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError, match="u=1, v=0"):
            scale_transform(np.array([[0.0, np.inf]]), 1.0)

    def test_non_positive_median_rejected(self):
        with pytest.raises(InvalidInputError):
            MedianDepth(0.0)


class TestMedianDepth:
    @pytest.mark.parametrize(
        "depths, expected", [([1.0, 5.0, 3.0], 3.0), ([1.0, 2.0, 3.0, 4.0], 2.0), ([7.0], 7.0)]
    )
    def test_examples(self, depths, expected):
        assert median_depth(depths).value == expected

    def test_sort_oracle(self, rng):
        for _ in range(1000):
            values = rng.uniform(0.1, 100.0, size=rng.integers(1, 30))
            result = median_depth(values).value
            assert result == sorted(values)[(len(values) - 1) // 2]
            assert result in values
            assert np.sum(values >= result) >= len(values) / 2

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            median_depth([])


class TestSparseViewDepths:
    def test_point_on_optical_axis(self):
        cloud = SparsePointCloud(np.array([[0.0, 0.0, 5.0]]))
        pixels, depths = sparse_view_depths(cloud, K, RigidPose.identity(), (30, 40))
        np.testing.assert_allclose(pixels, [[20.0, 15.0]])
        np.testing.assert_allclose(depths, [5.0])

    def test_point_behind_camera_excluded(self):
        cloud = SparsePointCloud(np.array([[0.0, 0.0, -5.0], [0.0, 0.0, 2.0]]))
        _, depths = sparse_view_depths(cloud, K, RigidPose.identity(), (30, 40))
        np.testing.assert_allclose(depths, [2.0])

    def test_matches_explicit_transform(self, rng):
        pose = rotvec_pose(0.05, 0.1, -0.02, 0.3, -0.2, 0.1)
        # points in front of the camera, inside the frustum, then moved to world
        cam = np.column_stack([rng.uniform(-0.5, 0.5, 10), rng.uniform(-0.4, 0.4, 10), rng.uniform(3.0, 6.0, 10)])
        world = cam @ pose.rotation.T + pose.translation
        pixels, depths = sparse_view_depths(SparsePointCloud(world), K, pose, (30, 40))
        assert len(depths) == 10
        homogeneous = np.linalg.inv(np.vstack([np.column_stack([pose.rotation, pose.translation]), [0, 0, 0, 1]]))
        expected = (homogeneous @ np.column_stack([world, np.ones(10)]).T).T[:, 2]
        np.testing.assert_allclose(depths, expected, rtol=1e-12)

    def test_empty_cloud(self):
        with pytest.raises(InsufficientDataError):
            sparse_view_depths(SparsePointCloud(np.zeros((0, 3))), K, RigidPose.identity(), (30, 40))

    def test_fronto_plane_median(self):
        xs, ys = np.meshgrid(np.linspace(-0.5, 0.5, 7), np.linspace(-0.4, 0.4, 5))
        cloud = SparsePointCloud(np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, 4.0)]))
        assert view_median_depth(cloud, K, RigidPose.identity(), (30, 40)).value == 4.0


class TestTriangulateCorrespondences:
    def test_recovers_points(self, rng):
        pose_a = RigidPose.identity()
        pose_b = rotvec_pose(0.0, -0.05, 0.0, 0.5, 0.0, 0.0)
        points = np.column_stack([rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8), rng.uniform(4, 8, 8)])

        def project(pose):
            cam = (points - pose.translation) @ pose.rotation
            return np.column_stack([K.fx * cam[:, 0] / cam[:, 2] + K.cx, K.fy * cam[:, 1] / cam[:, 2] + K.cy])

        cloud = triangulate_correspondences(project(pose_a), project(pose_b), K, K, pose_a, pose_b, pair_id="ab")
        np.testing.assert_allclose(cloud.points, points, atol=1e-9)
        assert cloud.pair_ids == ["ab"] * 8

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            triangulate_correspondences(
                np.zeros((2, 2)), np.zeros((3, 2)), K, K, RigidPose.identity(), RigidPose.identity()
            )
