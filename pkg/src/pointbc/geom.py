"""Camera models, rigid transforms, and depth-image backprojection.

Conventions: right-handed frames, camera looks along +z, pixel (u, v)
has u along image columns and v along rows, and integer coordinates sit
at pixel centers.  Depth images store the camera-frame z coordinate in
meters; a depth of exactly 0 marks an invalid reading.  Image buffers
are float32, all geometry math runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")


@dataclass
class RigidTransform:
    """SE(3) transform: x_out = rotation @ x_in + translation.

    rotation: (3, 3) float64 orthonormal with determinant +1.
    translation: (3,) float64.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max error {err:.3e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have determinant +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self applied after other: (self * other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def invert(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass
class RGBDFrame:
    """One aligned color + depth image pair.

    color: (H, W, 3) float32 in [0, 1].
    depth: (H, W) float32 meters, >= 0 everywhere, 0 = invalid.
    frame_id: index of this frame within its trajectory.
    """

    color: np.ndarray
    depth: np.ndarray
    frame_id: int = 0

    def __post_init__(self) -> None:
        self.color = np.asarray(self.color, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.color.ndim != 3 or self.color.shape[2] != 3:
            raise ValueError("color must be (H, W, 3)")
        if self.depth.shape != self.color.shape[:2]:
            raise ValueError("depth dimensions must match color")
        if (self.depth < 0).any():
            raise ValueError("depth must be non-negative")


def backproject(
    frame: RGBDFrame,
    intrinsics: CameraIntrinsics,
    mask: np.ndarray | None = None,
    object_id: int = -1,
) -> PointCloud:
    """Lift masked valid-depth pixels into a camera-frame point cloud.

    x = (u - cx) * z / fx, y = (v - cy) * z / fy, z = depth.  Pixels
    with depth 0 are dropped.  Points come out in row-major pixel scan
    order.  ``mask`` is a (H, W) boolean selection; None takes every
    pixel.
    """
    h, w = frame.depth.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ValueError("frame dimensions do not match intrinsics")
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != (h, w) or mask.dtype != np.bool_:
        raise ValueError("mask must be a (H, W) boolean array")

    valid = mask & (frame.depth > 0)
    vs, us = np.nonzero(valid)  # nonzero scans row-major
    z = frame.depth[vs, us].astype(np.float64)
    x = (us.astype(np.float64) - intrinsics.cx) * z / intrinsics.fx
    y = (vs.astype(np.float64) - intrinsics.cy) * z / intrinsics.fy
    return PointCloud(np.stack([x, y, z], axis=1), frame="camera", object_id=object_id)


def project(points: np.ndarray, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to pixel coordinates.

    Returns ((..., 2) float64 (u, v), (...,) float64 depth).  Raises on
    any point with z <= 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    if (z <= 0).any():
        raise ValueError("cannot project points with z <= 0")
    u = pts[..., 0] * intrinsics.fx / z + intrinsics.cx
    v = pts[..., 1] * intrinsics.fy / z + intrinsics.cy
    return np.stack([u, v], axis=-1), z.copy()


def to_base_frame(cloud: PointCloud, camera_to_base: RigidTransform) -> PointCloud:
    """Map a camera-frame cloud through the camera extrinsics."""
    if cloud.frame != "camera":
        raise ValueError(f"expected a camera-frame cloud, got {cloud.frame!r}")
    return PointCloud(
        camera_to_base.apply(cloud.points), frame="base", object_id=cloud.object_id
    )
