import numpy as np
import pytest

from twolayer_pose import geom
from twolayer_pose.errors import BehindCameraError, DegenerateParamError, InvalidMeshError
from twolayer_pose.scenes import make_box, random_rotation

from conftest import LM_INTRINSICS, random_rigid_pose


class TestProject:
    def test_optical_axis_maps_to_principal_point(self):
        K = geom.CameraIntrinsics(1, 1, 0, 0)
        assert np.allclose(geom.project(K, [0, 0, 1]), [0, 0])

    def test_similar_triangles(self):
        K = geom.CameraIntrinsics(1, 1, 0, 0)
        assert np.allclose(geom.project(K, [1, 0, 5]), [0.2, 0])

    def test_direct_evaluation(self):
        # oracle: u = fx*X/Z + cx, v = fy*Y/Z + cy evaluated by hand
        u = 572.4 * 0.1 / 4.7 + 325.3
        v = 573.6 * 0.2 / 4.7 + 242.0
        got = geom.project(LM_INTRINSICS, [0.1, 0.2, 4.7])
        assert np.allclose(got, [u, v], atol=1e-12)
        assert abs(got[0] - 337.479) < 1e-3 and abs(got[1] - 266.408) < 1e-3

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            geom.project(LM_INTRINSICS, [0, 0, -1])
        with pytest.raises(BehindCameraError):
            geom.project(LM_INTRINSICS, [0, 0, 1e-12])

    def test_bad_intrinsics_rejected(self):
        with pytest.raises(ValueError):
            geom.CameraIntrinsics(-1, 1, 0, 0)

    def test_k_matrix_shape(self):
        K = LM_INTRINSICS.K
        assert K[2, 2] == 1.0 and K[1, 0] == 0.0 and K[2, 0] == 0.0


class TestBackproject:
    def test_principal_point(self):
        K = geom.CameraIntrinsics(1, 1, 0, 0)
        assert np.allclose(geom.backproject_ray(K, [0, 0]), [0, 0, 1])

    def test_inverse_of_projection_example(self):
        K = geom.CameraIntrinsics(1, 1, 0, 0)
        d = np.array([0.2, 0, 1.0])
        assert np.allclose(geom.backproject_ray(K, [0.2, 0]), d / np.linalg.norm(d))

    def test_round_trip_1000_random_pixels(self, rng):
        for _ in range(1000):
            rho = rng.uniform([0, 0], [640, 480])
            d = geom.backproject_ray(LM_INTRINSICS, rho)
            assert abs(np.linalg.norm(d) - 1.0) < 1e-12
            z = rng.uniform(0.1, 10)
            p = d / d[2] * z
            assert np.abs(geom.project(LM_INTRINSICS, p) - rho).max() < 1e-9


class TestR6d:
    def test_identity(self):
        assert np.allclose(geom.r6d_to_rotation([1, 0, 0, 0, 1, 0]), np.eye(3))

    def test_scale_invariance(self, rng):
        assert np.abs(geom.r6d_to_rotation([2, 0, 0, 0, 3, 0]) - np.eye(3)).max() < 1e-12
        for _ in range(50):
            r6 = rng.normal(size=6)
            a, b = rng.uniform(0.1, 10, 2)
            scaled = np.concatenate([a * r6[:3], b * r6[3:]])
            base = geom.r6d_to_rotation(r6)
            assert np.abs(geom.r6d_to_rotation(scaled) - base).max() < 1e-12

    def test_round_trip_random_rotations(self, rng):
        for _ in range(100):
            R = random_rotation(rng)
            r6 = geom.rotation_to_r6d(R)
            R2 = geom.r6d_to_rotation(r6)
            assert np.abs(R2 - R).max() < 1e-12

    def test_output_is_rotation(self, rng):
        for _ in range(100):
            R = geom.r6d_to_rotation(rng.normal(size=6))
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateParamError):
            geom.r6d_to_rotation([0, 0, 0, 0, 1, 0])
        with pytest.raises(DegenerateParamError):
            geom.r6d_to_rotation([1, 0, 0, 2, 0, 0])


class TestAllocentric:
    def test_on_axis_is_identity_correction(self, rng):
        R = random_rotation(rng)
        assert np.abs(geom.allo_to_ego(R, [0, 0, 5]) - R).max() < 1e-12

    def test_45_degrees_about_y(self):
        got = geom.allo_to_ego(np.eye(3), [5.0, 0.0, 5.0])
        th = np.pi / 4
        want = np.array(
            [[np.cos(th), 0, np.sin(th)], [0, 1, 0], [-np.sin(th), 0, np.cos(th)]]
        )
        assert np.abs(got - want).max() < 1e-12

    def test_inverse_round_trip(self, rng):
        for _ in range(100):
            R = random_rotation(rng)
            t = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.1, 5)])
            R2 = geom.ego_to_allo(geom.allo_to_ego(R, t), t)
            assert np.abs(R2 - R).max() < 1e-12

    def test_degenerate_translation(self):
        with pytest.raises(DegenerateParamError):
            geom.allo_to_ego(np.eye(3), [0, 0, 0])

    def test_output_is_rotation(self, rng):
        for _ in range(50):
            R = geom.allo_to_ego(random_rotation(rng), rng.uniform(0.1, 2, 3))
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(R) - 1.0) < 1e-9


class TestPoseParam:
    def test_principal_point_decodes_on_axis(self):
        K = LM_INTRINSICS
        p = geom.PoseParam([1, 0, 0, 0, 1, 0], [K.cx, K.cy], 5.0)
        pose = geom.param_to_pose(p, K)
        assert np.abs(pose.t - [0, 0, 5]).max() < 1e-12

    def test_projection_definitional_property(self, rng):
        for _ in range(100):
            p = geom.PoseParam(rng.normal(size=6), rng.uniform(50, 500, 2), rng.uniform(0.3, 8))
            pose = geom.param_to_pose(p, LM_INTRINSICS)
            assert np.abs(geom.project(LM_INTRINSICS, pose.t) - p.uv).max() < 1e-9
            assert abs(pose.t[2] - p.dist) < 1e-12

    def test_round_trip(self, rng):
        for _ in range(100):
            pose = random_rigid_pose(rng)
            p = geom.pose_to_param(pose, LM_INTRINSICS)
            pose2 = geom.param_to_pose(p, LM_INTRINSICS)
            assert np.abs(pose2.R - pose.R).max() < 1e-9
            assert np.abs(pose2.t - pose.t).max() < 1e-9

    def test_reencode_idempotent(self, rng):
        pose = random_rigid_pose(rng)
        p = geom.pose_to_param(pose, LM_INTRINSICS)
        p2 = geom.pose_to_param(geom.param_to_pose(p, LM_INTRINSICS), LM_INTRINSICS)
        assert np.abs(p2.as_vector() - p.as_vector()).max() < 1e-9

    def test_invalid_dist(self):
        with pytest.raises(ValueError):
            geom.PoseParam([1, 0, 0, 0, 1, 0], [0, 0], -1.0)


class TestRigidPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            geom.RigidPose(np.eye(3) * 1.1, [0, 0, 1])

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            geom.RigidPose(np.diag([1.0, 1.0, -1.0]), [0, 0, 1])

    def test_rejects_negative_depth(self):
        with pytest.raises(ValueError):
            geom.RigidPose(np.eye(3), [0, 0, -1])

    def test_transform_matches_manual(self, rng):
        pose = random_rigid_pose(rng)
        pts = rng.normal(size=(10, 3))
        want = (pose.R @ pts.T).T + pose.t
        assert np.abs(pose.transform(pts) - want).max() < 1e-12


class TestMeshStats:
    def test_unit_cube(self, unit_cube):
        d, cub = geom.mesh_stats(unit_cube)
        assert abs(d - np.sqrt(3)) < 1e-9
        assert np.allclose(cub.min, [-0.5, -0.5, -0.5]) and np.allclose(cub.max, [0.5, 0.5, 0.5])

    def test_single_triangle(self):
        mesh = geom.TriangleMesh(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]
        )
        d, _ = geom.mesh_stats(mesh)
        assert abs(d - np.sqrt(2)) < 1e-9

    def test_brute_force_oracle(self, rng):
        pts = rng.normal(size=(120, 3))
        mesh = geom.TriangleMesh(pts, np.zeros((0, 3), dtype=int))
        d, cub = geom.mesh_stats(mesh)
        best = 0.0
        for i in range(len(pts)):        # O(n^2) oracle
            for j in range(i + 1, len(pts)):
                best = max(best, float(np.linalg.norm(pts[i] - pts[j])))
        assert abs(d - best) < 1e-9
        assert cub.contains(pts).all()

    def test_hull_reduction_matches_dense(self, rng):
        pts = rng.normal(size=(800, 3))
        d_fast, _ = geom.mesh_stats_raw(pts)
        d2 = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max()
        assert abs(d_fast - d2) < 1e-9

    def test_empty_mesh_rejected(self):
        with pytest.raises(InvalidMeshError):
            geom.TriangleMesh(np.zeros((1, 3)), np.zeros((0, 3), dtype=int))

    def test_out_of_range_faces_rejected(self):
        with pytest.raises(InvalidMeshError):
            geom.TriangleMesh(np.zeros((3, 3)), [[0, 1, 5]])

    def test_diameter_cached_on_construction(self, unit_cube):
        assert abs(unit_cube.diameter - np.sqrt(3)) < 1e-9
        assert unit_cube.cuboid.contains(unit_cube.vertices).all()


def test_mesh_stats_raw_on_box_vertices():
    box = make_box((2.0, 4.0, 6.0))
    d, cub = geom.mesh_stats_raw(box.vertices)
    assert abs(d - np.linalg.norm([2, 4, 6])) < 1e-9
    assert np.allclose(cub.max - cub.min, [2, 4, 6])
