"""Camera model and rigid-transform tests against hand-computed oracles."""

import numpy as np
import pytest

from pointbc.geom import (
    CameraIntrinsics,
    RGBDFrame,
    RigidTransform,
    backproject,
    project,
    to_base_frame,
)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def frame_with_pixels(width, height, pixels):
    """A frame whose depth is zero except at the given (u, v) -> z pixels."""
    depth = np.zeros((height, width), dtype=np.float32)
    for (u, v), z in pixels.items():
        depth[v, u] = z
    color = np.zeros((height, width, 3), dtype=np.float32)
    return RGBDFrame(color, depth)


# ------------------------------------------------------------------ intrinsics


def test_intrinsics_validation():
    CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 100.0, 50.0, 50.0, 101, 101)
    with pytest.raises(ValueError):
        CameraIntrinsics(100.0, -1.0, 50.0, 50.0, 101, 101)
    with pytest.raises(ValueError):
        CameraIntrinsics(100.0, 100.0, 200.0, 50.0, 101, 101)
    with pytest.raises(ValueError):
        CameraIntrinsics(100.0, 100.0, 50.0, 101.0, 101, 101)


# ---------------------------------------------------------------- backproject


def test_backproject_principal_point_ray():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    frame = frame_with_pixels(200, 200, {(50, 50): 1.0})
    cloud = backproject(frame, intr)
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 1.0]])
    assert cloud.frame == "camera"


def test_backproject_one_focal_length_offset():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    frame = frame_with_pixels(200, 200, {(150, 50): 2.0})
    cloud = backproject(frame, intr)
    np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]])


def test_backproject_pinhole_inverse_formula():
    # independent scalar evaluation: x=(60-50)*0.5/100, y=(70-50)*0.5/200
    intr = CameraIntrinsics(100.0, 200.0, 50.0, 50.0, 200, 200)
    frame = frame_with_pixels(200, 200, {(60, 70): 0.5})
    cloud = backproject(frame, intr)
    np.testing.assert_allclose(cloud.points, [[0.05, 0.05, 0.5]], atol=1e-12)


def test_backproject_row_major_order_and_mask():
    intr = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
    frame = frame_with_pixels(5, 5, {(1, 0): 1.0, (0, 1): 2.0, (3, 3): 3.0})
    mask = np.ones((5, 5), dtype=bool)
    cloud = backproject(frame, intr, mask=mask)
    # row-major scan: row 0 first, then row 1, then row 3
    np.testing.assert_allclose(cloud.points[:, 2], [1.0, 2.0, 3.0])
    mask[3, 3] = False
    cloud = backproject(frame, intr, mask=mask)
    assert len(cloud) == 2


def test_backproject_skips_invalid_depth():
    intr = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
    frame = frame_with_pixels(5, 5, {})
    cloud = backproject(frame, intr)
    assert len(cloud) == 0


def test_backproject_input_validation():
    intr = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
    frame = frame_with_pixels(6, 6, {})
    with pytest.raises(ValueError):
        backproject(frame, intr)
    frame = frame_with_pixels(5, 5, {})
    with pytest.raises(ValueError):
        backproject(frame, intr, mask=np.ones((4, 5), dtype=bool))
    with pytest.raises(ValueError):
        backproject(frame, intr, mask=np.ones((5, 5), dtype=np.int32))


def test_rgbd_frame_validation():
    with pytest.raises(ValueError):
        RGBDFrame(np.zeros((4, 4, 2), dtype=np.float32), np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        RGBDFrame(np.zeros((4, 4, 3), dtype=np.float32), np.zeros((4, 5), dtype=np.float32))
    with pytest.raises(ValueError):
        RGBDFrame(
            np.zeros((4, 4, 3), dtype=np.float32),
            np.full((4, 4), -0.5, dtype=np.float32),
        )


# -------------------------------------------------------------------- project


def test_project_axis_point():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    uv, z = project(np.array([0.0, 0.0, 1.0]), intr)
    np.testing.assert_allclose(uv, [50.0, 50.0])
    assert z == 1.0


def test_project_inverse_of_backproject_example():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    uv, z = project(np.array([2.0, 0.0, 2.0]), intr)
    np.testing.assert_allclose(uv, [150.0, 50.0])
    assert z == 2.0


def test_project_rejects_nonpositive_depth():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    with pytest.raises(ValueError):
        project(np.array([0.0, 0.0, 0.0]), intr)
    with pytest.raises(ValueError):
        project(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), intr)


def test_project_backproject_round_trip():
    intr = CameraIntrinsics(80.0, 120.0, 31.5, 23.0, 64, 48)
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.3, 3.0, size=(48, 64)).astype(np.float32)
    frame = RGBDFrame(np.zeros((48, 64, 3), dtype=np.float32), depth)
    cloud = backproject(frame, intr)
    uv, z = project(cloud.points, intr)
    vs, us = np.nonzero(depth > 0)
    np.testing.assert_allclose(uv[:, 0], us, atol=1e-9)
    np.testing.assert_allclose(uv[:, 1], vs, atol=1e-9)
    np.testing.assert_allclose(z, depth[vs, us].astype(np.float64), atol=1e-9)


# ----------------------------------------------------------------- transforms


def test_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), np.zeros(2))


def test_identity_and_translation():
    t = RigidTransform(np.eye(3), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(t.apply(np.zeros(3)), [1.0, 0.0, 0.0])
    ident = RigidTransform.identity()
    pts = np.random.default_rng(1).standard_normal((7, 3))
    np.testing.assert_array_equal(ident.apply(pts), pts)


def test_rotation_about_z():
    t = RigidTransform(rot_z(np.pi / 2), np.zeros(3))
    np.testing.assert_allclose(t.apply(np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-12)


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        t = RigidTransform(q, rng.standard_normal(3))
        ident = t.compose(t.invert())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)
        again = RigidTransform.identity().compose(t)
        np.testing.assert_array_equal(again.rotation, t.rotation)
        np.testing.assert_array_equal(again.translation, t.translation)


def test_invert_translation():
    t = RigidTransform(np.eye(3), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_allclose(t.invert().translation, [-1.0, 2.0, -3.0])


def test_compose_rotations_add_angles():
    a = RigidTransform(rot_z(np.pi / 6), np.zeros(3))
    b = RigidTransform(rot_z(np.pi / 3), np.zeros(3))
    ab = a.compose(b)
    np.testing.assert_allclose(ab.rotation, rot_z(np.pi / 2), atol=1e-12)


def test_transform_is_isometry():
    rng = np.random.default_rng(3)
    for _ in range(5):
        q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        t = RigidTransform(q, rng.standard_normal(3))
        pts = rng.standard_normal((20, 3))
        moved = t.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        np.testing.assert_allclose(d1, d0, atol=1e-9)


def test_to_base_frame():
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 200)
    frame = frame_with_pixels(200, 200, {(50, 50): 1.0})
    cloud = backproject(frame, intr)
    extr = RigidTransform(rot_z(np.pi / 2), np.array([0.0, 0.0, 1.0]))
    based = to_base_frame(cloud, extr)
    assert based.frame == "base"
    np.testing.assert_allclose(based.points, [[0.0, 0.0, 2.0]], atol=1e-12)
    with pytest.raises(ValueError):
        to_base_frame(based, extr)


def test_backproject_deterministic():
    intr = CameraIntrinsics(80.0, 120.0, 31.5, 23.0, 64, 48)
    rng = np.random.default_rng(4)
    depth = rng.uniform(0.3, 3.0, size=(48, 64)).astype(np.float32)
    depth[rng.random((48, 64)) < 0.3] = 0.0
    frame = RGBDFrame(np.zeros((48, 64, 3), dtype=np.float32), depth)
    a = backproject(frame, intr)
    b = backproject(frame, intr)
    np.testing.assert_array_equal(a.points, b.points)
