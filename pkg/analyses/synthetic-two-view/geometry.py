"""Pinhole cameras, rigid poses, cross-view pixel projection and two-ray triangulation.

Pixel convention: p = (u, v, 1) with u the column and v the row index,
origin at the centre of the top-left pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import DegenerateGeometryError, InvalidInputError

# Point3 is a length-3 float array (x, y, z) in meters.
Point3 = np.ndarray

IN_FRONT_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(values)):
            raise InvalidInputError(f"Intrinsics must be finite, got {values}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def downscaled(self) -> CameraIntrinsics:
        """Intrinsics of the 2x block-mean downsampled raster (pixel-centre convention)."""
        return CameraIntrinsics(self.fx / 2, self.fy / 2, (self.cx - 0.5) / 2, (self.cy - 0.5) / 2)

    def rays(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Back-projected rays K^-1 (u, v, 1), z-component 1."""
        u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


@dataclass(frozen=True)
class RigidPose:
    """x' = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError(f"Pose needs a 3x3 rotation and a 3-vector, got {r.shape} and {t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidInputError("Pose entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
            raise InvalidInputError("Rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidInputError("Rotation determinant is not 1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> RigidPose:
        r_t = self.rotation.T
        return RigidPose(r_t, -r_t @ self.translation)

    def compose(self, other: RigidPose) -> RigidPose:
        """self after other: x -> self(other(x))."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def scaled(self, k: float) -> RigidPose:
        return RigidPose(self.rotation, self.translation * k)


@dataclass
class ProjectionMap:
    """Per-pixel transfer of a source raster into a destination camera.

    `d_coords` and `d_depth` hold the derivatives of the coordinates and the
    projected depth with respect to the source depth of the same pixel.
    """

    coords: np.ndarray  # (H, W, 2) continuous (u, v)
    projected_depth: np.ndarray  # (H, W)
    in_front: np.ndarray  # (H, W) bool
    d_coords: Optional[np.ndarray] = field(default=None, repr=False)
    d_depth: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.projected_depth.shape


def check_depth(depth: np.ndarray, name: str = "depth") -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2D grid, got shape {depth.shape}")
    bad = ~np.isfinite(depth) | (depth <= 0)
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        raise InvalidInputError(f"{name} must be positive and finite, got {depth[row, col]} at pixel (u={col}, v={row})")
    return depth


def relative_pose(world_pose_a: RigidPose, world_pose_b: RigidPose) -> RigidPose:
    """Camera-a to camera-b transform from two camera-to-world poses: b^-1 o a."""
    return world_pose_b.inverse().compose(world_pose_a)


def transfer_points(
    u: np.ndarray,
    v: np.ndarray,
    depth: np.ndarray,
    k_src: CameraIntrinsics,
    k_dst: CameraIntrinsics,
    pose_src_to_dst: RigidPose,
) -> tuple[np.ndarray, ...]:
    """Transfer pixels (u, v) with depth into the destination view.

    Returns (u', v', projected depth, in_front, d(u', v')/d depth, d(projected depth)/d depth).
    """
    directions = k_src.rays(u, v) @ pose_src_to_dst.rotation.T
    points = np.asarray(depth, dtype=np.float64)[..., None] * directions + pose_src_to_dst.translation
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    in_front = z > IN_FRONT_EPS
    # pixels behind the camera get an out-of-frame coordinate and no derivative
    safe_z = np.where(in_front, z, 1.0)
    u_dst = np.where(in_front, k_dst.fx * x / safe_z + k_dst.cx, -1.0)
    v_dst = np.where(in_front, k_dst.fy * y / safe_z + k_dst.cy, -1.0)
    ax, ay, az = directions[..., 0], directions[..., 1], directions[..., 2]
    z2 = safe_z * safe_z
    du = k_dst.fx * (ax * safe_z - x * az) / z2
    dv = k_dst.fy * (ay * safe_z - y * az) / z2
    d_coords = np.where(in_front[..., None], np.stack([du, dv], axis=-1), 0.0)
    d_depth = np.where(in_front, az, 0.0)
    return u_dst, v_dst, z, in_front, d_coords, d_depth


def project_pixels(
    depth: np.ndarray, k_src: CameraIntrinsics, k_dst: CameraIntrinsics, pose_src_to_dst: RigidPose
) -> ProjectionMap:
    depth = check_depth(depth)
    height, width = depth.shape
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    u_dst, v_dst, z, in_front, d_coords, d_depth = transfer_points(u, v, depth, k_src, k_dst, pose_src_to_dst)
    return ProjectionMap(
        coords=np.stack([u_dst, v_dst], axis=-1),
        projected_depth=z,
        in_front=in_front,
        d_coords=d_coords,
        d_depth=d_depth,
    )


def triangulate_midpoint(origin_a: Point3, dir_a: np.ndarray, origin_b: Point3, dir_b: np.ndarray) -> Point3:
    """Midpoint of the common perpendicular of two rays."""
    origin_a, dir_a, origin_b, dir_b = (np.asarray(x, dtype=np.float64) for x in (origin_a, dir_a, origin_b, dir_b))
    for name, d in (("dir_a", dir_a), ("dir_b", dir_b)):
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidInputError(f"{name} must be unit length, |{name}| = {np.linalg.norm(d)}")
    cos = float(dir_a @ dir_b)
    if abs(cos) >= 1.0 - 1e-9:
        raise DegenerateGeometryError(f"Rays are parallel (|cos| = {abs(cos)})")
    w0 = origin_a - origin_b
    # normal equations of min |origin_a + s dir_a - origin_b - t dir_b|^2
    lhs = np.array([[1.0, -cos], [cos, -1.0]])
    rhs = np.array([-dir_a @ w0, -dir_b @ w0])
    s, t = np.linalg.solve(lhs, rhs)
    return 0.5 * ((origin_a + s * dir_a) + (origin_b + t * dir_b))
