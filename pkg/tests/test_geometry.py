import numpy as np
import pytest

from fleetslam import geometry as geo
from fleetslam.errors import DegenerateGeometryError, DegenerateRotationError

from conftest import poses_close, random_pose


class TestPoseGroup:
    def test_compose_identity(self, rng):
        p = random_pose(rng)
        assert poses_close(geo.compose(geo.Pose.identity(), p), p)
        assert poses_close(geo.compose(p, geo.Pose.identity()), p)

    def test_rotation_group_closure(self):
        quarter = geo.Pose(geo.rotation_about_z(np.pi / 2), np.zeros(3))
        half = geo.compose(quarter, quarter)
        assert poses_close(half, geo.Pose(geo.rotation_about_z(np.pi), np.zeros(3)))

    def test_compose_inverse_is_identity(self, rng):
        for _ in range(50):
            p = random_pose(rng)
            assert poses_close(geo.compose(p, geo.inverse(p)), geo.Pose.identity())
            assert poses_close(geo.compose(geo.inverse(p), p), geo.Pose.identity())

    def test_associativity(self, rng):
        for _ in range(20):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = geo.compose(geo.compose(a, b), c)
            right = geo.compose(a, geo.compose(b, c))
            assert poses_close(left, right)

    def test_inverse_cases(self, rng):
        assert poses_close(geo.inverse(geo.Pose.identity()), geo.Pose.identity())
        p = random_pose(rng)
        assert poses_close(geo.inverse(geo.inverse(p)), p)
        t = geo.Pose(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert np.allclose(geo.inverse(t).translation, [-1.0, -2.0, -3.0])

    def test_orthonormality_after_composition(self, rng):
        p = geo.Pose.identity()
        for _ in range(100):
            p = geo.compose(p, random_pose(rng))
        assert np.linalg.norm(p.rotation.T @ p.rotation - np.eye(3)) < 1e-9
        assert abs(np.linalg.det(p.rotation) - 1.0) < 1e-9

    def test_pose_arrays_read_only(self, rng):
        p = random_pose(rng)
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0


class TestTangent:
    def test_boxminus_self_is_zero(self, rng):
        p = random_pose(rng)
        assert geo.boxminus(p, p).norm() < 1e-9

    def test_rotation_part_is_axis_angle(self):
        theta = 0.3
        a = geo.Pose(geo.rotation_about_z(theta), np.zeros(3))
        xi = geo.boxminus(a, geo.Pose.identity())
        assert np.allclose(xi.rotation_part, [0.0, 0.0, theta], atol=1e-12)

    def test_round_trip(self, rng):
        # exp(boxminus(a, b)) applied at b reproduces a
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            if geo.rotation_geodesic_distance(a.rotation, b.rotation) > np.pi - 0.1:
                continue
            assert poses_close(geo.boxplus(b, geo.boxminus(a, b)), a, atol=1e-8)

    def test_log_near_pi_raises(self):
        R = geo.so3_exp(np.array([np.pi, 0.0, 0.0]))
        with pytest.raises(DegenerateRotationError):
            geo.so3_log(R)

    def test_log_accuracy_near_pi(self):
        # not degenerate yet, but deep into the hard region
        omega = np.array([np.pi - 1e-5, 0.0, 0.0])
        back = geo.so3_log(geo.so3_exp(omega))
        assert np.allclose(back, omega, atol=1e-8)


class TestRotationDistance:
    def test_zero_on_equal(self, rng):
        R = geo.random_rotation(rng)
        assert geo.rotation_geodesic_distance(R, R) < 1e-12

    def test_quarter_turn(self):
        assert np.isclose(
            geo.rotation_geodesic_distance(np.eye(3), geo.rotation_about_z(np.pi / 2)),
            np.pi / 2,
        )

    def test_symmetry(self, rng):
        for _ in range(20):
            a, b = geo.random_rotation(rng), geo.random_rotation(rng)
            assert np.isclose(
                geo.rotation_geodesic_distance(a, b),
                geo.rotation_geodesic_distance(b, a),
            )


class TestArun:
    def test_identity_on_equal_points(self, rng):
        pts = rng.normal(size=(10, 3))
        pose = geo.arun_align(geo.Correspondences(pts, pts))
        assert poses_close(pose, geo.Pose.identity())

    def test_exact_recovery(self, rng):
        for _ in range(50):
            pts = rng.normal(size=(8, 3))
            T = random_pose(rng)
            est = geo.arun_align(geo.Correspondences(pts, T.apply(pts)))
            assert poses_close(est, T, atol=1e-9)

    def test_noisy_recovery_error_bound(self, rng):
        # translation error stays below 3 sigma / sqrt(N) across trials
        sigma, n, failures = 0.01, 50, 0
        for _ in range(100):
            pts = rng.normal(size=(n, 3)) * 2.0
            T = random_pose(rng)
            noisy = T.apply(pts) + rng.normal(scale=sigma, size=(n, 3))
            est = geo.arun_align(geo.Correspondences(pts, noisy))
            err = np.linalg.norm(est.translation - T.translation)
            if err > 3.0 * sigma / np.sqrt(n):
                failures += 1
        assert failures <= 10  # 3-sigma bound holds for the vast majority

    def test_collinear_raises(self):
        pts = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
        with pytest.raises(DegenerateGeometryError):
            geo.arun_align(geo.Correspondences(pts, pts + 1.0))

    def test_permutation_invariance(self, rng):
        pts = rng.normal(size=(12, 3))
        T = random_pose(rng)
        noisy = T.apply(pts) + rng.normal(scale=0.01, size=(12, 3))
        base = geo.arun_align(geo.Correspondences(pts, noisy))
        perm = rng.permutation(12)
        shuffled = geo.arun_align(geo.Correspondences(pts[perm], noisy[perm]))
        assert poses_close(base, shuffled, atol=1e-12)


class TestRansac:
    def test_all_exact_inliers(self, rng):
        pts = rng.normal(size=(20, 3))
        T = random_pose(rng)
        res = geo.ransac_align(
            geo.Correspondences(pts, T.apply(pts)),
            geo.RansacConfig(inlier_threshold=0.05, seed=1),
        )
        assert res.accepted
        assert res.num_inliers == 20
        assert poses_close(res.pose, T, atol=1e-9)

    def test_planted_inliers_with_outliers(self, rng):
        pts = rng.normal(size=(20, 3)) * 3.0
        T = random_pose(rng)
        pa = np.vstack([pts, rng.uniform(-5, 5, size=(10, 3))])
        pb = np.vstack([T.apply(pts), rng.uniform(-5, 5, size=(10, 3))])
        res = geo.ransac_align(
            geo.Correspondences(pa, pb),
            geo.RansacConfig(inlier_threshold=0.05, seed=3),
        )
        assert res.accepted
        assert set(res.inliers) == set(range(20))

    def test_too_few_correspondences(self):
        pts = np.zeros((2, 3))
        with pytest.raises(DegenerateGeometryError):
            geo.ransac_align(geo.Correspondences(pts, pts), geo.RansacConfig())

    def test_rejection_below_min_inliers(self, rng):
        pa = rng.uniform(-5, 5, size=(12, 3))
        pb = rng.uniform(-5, 5, size=(12, 3))
        res = geo.ransac_align(
            geo.Correspondences(pa, pb),
            geo.RansacConfig(inlier_threshold=0.01, min_inliers=10, seed=0),
        )
        assert not res.accepted

    def test_bit_reproducible(self, rng):
        pts = rng.normal(size=(15, 3))
        T = random_pose(rng)
        pa = np.vstack([pts, rng.uniform(-3, 3, size=(6, 3))])
        pb = np.vstack([T.apply(pts), rng.uniform(-3, 3, size=(6, 3))])
        cfg = geo.RansacConfig(inlier_threshold=0.05, seed=99)
        r1 = geo.ransac_align(geo.Correspondences(pa, pb), cfg)
        r2 = geo.ransac_align(geo.Correspondences(pa, pb), cfg)
        assert np.array_equal(r1.inliers, r2.inliers)
        assert np.array_equal(r1.pose.rotation, r2.pose.rotation)
        assert np.array_equal(r1.pose.translation, r2.pose.translation)
