import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtt.errors import InputError
from dtt.geometry import (CameraIntrinsics, DepthFrame, PointCloud, Pose,
                          backproject, compose, inverse, project,
                          quaternion_to_rotation, rotation_about_axis,
                          rotation_to_quaternion, transform)
from tests.conftest import rotation_angle, small_intrinsics


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_about_axis(axis, rng.uniform(-np.pi, np.pi))


class TestPose:
    def test_identity(self):
        p = Pose.identity()
        pts = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(p.apply(pts), pts)

    def test_apply_matches_matrix_form(self):
        rng = np.random.default_rng(3)
        r = random_rotation(rng)
        t = rng.normal(size=3)
        p = Pose(r, t)
        pts = rng.normal(size=(20, 3))
        expected = (r @ pts.T).T + t
        assert np.allclose(p.apply(pts), expected, atol=1e-14)

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 0] = 1.0 + 1e-6
        with pytest.raises(InputError):
            Pose(bad, np.zeros(3))

    def test_rejects_reflection(self):
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InputError):
            Pose(refl, np.zeros(3))

    def test_rejects_bad_shapes(self):
        with pytest.raises(InputError):
            Pose(np.eye(4), np.zeros(3))
        with pytest.raises(InputError):
            Pose(np.eye(3), np.zeros(2))

    def test_fields_are_read_only(self):
        p = Pose.identity()
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0

    def test_compose_then_apply(self):
        rng = np.random.default_rng(5)
        a = Pose(random_rotation(rng), rng.normal(size=3))
        b = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(7, 3))
        assert np.allclose(compose(a, b).apply(pts), a.apply(b.apply(pts)),
                           atol=1e-12)

    def test_inverse_cancels(self):
        rng = np.random.default_rng(7)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        back = compose(inverse(p), p)
        assert np.allclose(back.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(back.translation, 0.0, atol=1e-12)

    def test_json_round_trip(self):
        rng = np.random.default_rng(11)
        p = Pose(random_rotation(rng), rng.normal(size=3))
        q = Pose.from_json_dict(json.loads(json.dumps(p.to_json_dict())))
        assert rotation_angle(p.rotation, q.rotation) < 1e-12
        assert np.allclose(p.translation, q.translation, atol=1e-15)

    def test_from_json_missing_keys(self):
        with pytest.raises(InputError):
            Pose.from_json_dict({"q": [1, 0, 0, 0]})


class TestQuaternion:
    def test_identity_quaternion(self):
        assert np.allclose(rotation_to_quaternion(np.eye(3)), [1, 0, 0, 0])

    def test_half_turns_hit_all_branches(self):
        # 180 degree turns about each axis exercise the non-dominant-trace
        # extraction paths
        for axis in np.eye(3):
            r = rotation_about_axis(axis, np.pi)
            q = rotation_to_quaternion(r)
            assert np.isclose(np.linalg.norm(q), 1.0, atol=1e-12)
            assert np.allclose(quaternion_to_rotation(q), r, atol=1e-12)

    def test_w_kept_non_negative(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            q = rotation_to_quaternion(random_rotation(rng))
            assert q[0] >= 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.floats(min_value=-np.pi, max_value=np.pi,
                     allow_nan=False, allow_infinity=False))
    def test_round_trip_property(self, seed, angle):
        rng = np.random.default_rng(seed)
        axis = rng.normal(size=3)
        axis /= max(np.linalg.norm(axis), 1e-12)
        r = rotation_about_axis(axis, angle)
        back = quaternion_to_rotation(rotation_to_quaternion(r))
        assert rotation_angle(r, back) < 1e-9

    def test_rotation_about_axis_quarter_turn(self):
        r = rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.pi / 2)
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_rotation_about_axis_normalizes(self):
        a = rotation_about_axis(np.array([0.0, 0.0, 10.0]), 0.3)
        b = rotation_about_axis(np.array([0.0, 0.0, 1.0]), 0.3)
        assert np.allclose(a, b, atol=1e-15)


class TestIntrinsics:
    def test_round_trip(self, tmp_path):
        intr = small_intrinsics()
        p = tmp_path / "intr.json"
        intr.save(p)
        assert CameraIntrinsics.load(p) == intr

    def test_validation(self):
        with pytest.raises(InputError):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4,
                             depth_scale=0.001)
        with pytest.raises(InputError):
            CameraIntrinsics(fx=1, fy=1, cx=99, cy=0, width=4, height=4,
                             depth_scale=0.001)
        with pytest.raises(InputError):
            CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4,
                             depth_scale=0.0)


class TestBackproject:
    def test_single_pixel_formula(self):
        # one valid pixel: x = (u - cx) z / fx, y = (v - cy) z / fy
        intr = small_intrinsics()
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        raw[40, 100] = 1500
        cloud = backproject(DepthFrame(raw=raw, intrinsics=intr))
        z = 1500 * intr.depth_scale
        expected = [(100 - intr.cx) * z / intr.fx,
                    (40 - intr.cy) * z / intr.fy, z]
        assert np.allclose(cloud.points, [expected], atol=1e-15)
        assert cloud.pixel_index[0] == 40 * intr.width + 100

    def test_zero_depth_skipped(self):
        intr = small_intrinsics()
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        raw[1, 1] = 700
        raw[2, 2] = 0
        cloud = backproject(DepthFrame(raw=raw, intrinsics=intr))
        assert len(cloud) == 1

    def test_stride_subsamples_grid(self):
        intr = small_intrinsics()
        raw = np.full((intr.height, intr.width), 1000, dtype=np.uint16)
        cloud = backproject(DepthFrame(raw=raw, intrinsics=intr), stride=4)
        assert len(cloud) == (intr.height // 4) * (intr.width // 4)
        us = cloud.pixel_index % intr.width
        assert np.all(us % 4 == 0)

    def test_colors_scaled_to_unit(self):
        intr = small_intrinsics()
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        raw[0, 0] = 500
        color = np.zeros((intr.height, intr.width, 3), dtype=np.uint8)
        color[0, 0] = (255, 0, 51)
        cloud = backproject(DepthFrame(raw=raw, intrinsics=intr), color=color)
        assert np.allclose(cloud.colors, [[1.0, 0.0, 0.2]])

    def test_color_shape_mismatch(self):
        intr = small_intrinsics()
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        with pytest.raises(InputError):
            backproject(DepthFrame(raw=raw, intrinsics=intr),
                        color=np.zeros((2, 2, 3), dtype=np.uint8))

    def test_project_inverts_backproject(self):
        intr = small_intrinsics()
        rng = np.random.default_rng(17)
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        vs = rng.integers(0, intr.height, size=200)
        us = rng.integers(0, intr.width, size=200)
        raw[vs, us] = rng.integers(200, 4000, size=200).astype(np.uint16)
        cloud = backproject(DepthFrame(raw=raw, intrinsics=intr))
        pix, depth, valid = project(cloud.points, intr)
        assert valid.all()
        u = cloud.pixel_index % intr.width
        v = cloud.pixel_index // intr.width
        assert np.allclose(pix[:, 0], u, atol=1e-9)
        assert np.allclose(pix[:, 1], v, atol=1e-9)
        assert np.allclose(depth, cloud.points[:, 2], atol=1e-15)

    def test_project_flags_non_positive_depth(self):
        intr = small_intrinsics()
        pix, depth, valid = project(np.array([[0.0, 0.0, -1.0],
                                              [0.0, 0.0, 1.0]]), intr)
        assert list(valid) == [False, True]
        assert np.isnan(pix[0]).all()


class TestDepthFrame:
    def test_meters_scales_and_keeps_missing(self):
        intr = small_intrinsics()
        raw = np.zeros((intr.height, intr.width), dtype=np.uint16)
        raw[0, 0] = 2000
        m = DepthFrame(raw=raw, intrinsics=intr).meters()
        assert m[0, 0] == pytest.approx(2.0)
        assert m[1, 1] == 0.0

    def test_shape_checked(self):
        intr = small_intrinsics()
        with pytest.raises(InputError):
            DepthFrame(raw=np.zeros((2, 2), dtype=np.uint16), intrinsics=intr)


class TestPointCloud:
    def test_validation(self):
        with pytest.raises(InputError):
            PointCloud(points=np.zeros((3, 2)))
        with pytest.raises(InputError):
            PointCloud(points=np.array([[np.nan, 0, 0]]))
        with pytest.raises(InputError):
            PointCloud(points=np.zeros((2, 3)), colors=np.zeros((3, 3)))

    def test_transform_carries_metadata(self):
        rng = np.random.default_rng(19)
        cloud = PointCloud(points=rng.normal(size=(5, 3)),
                           colors=rng.random((5, 3)),
                           pixel_index=np.arange(5))
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        moved = transform(cloud, pose)
        assert np.allclose(moved.points, pose.apply(cloud.points))
        assert np.array_equal(moved.colors, cloud.colors)
        assert np.array_equal(moved.pixel_index, cloud.pixel_index)
