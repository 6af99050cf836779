"""Scale transform D = mu * exp(D_rel) and median scene depth from sparse 3D points."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from errors import InsufficientDataError, InvalidInputError
from geometry import CameraIntrinsics, RigidPose, triangulate_midpoint


@dataclass(frozen=True)
class MedianDepth:
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value <= 0:
            raise InvalidInputError(f"Median depth must be positive and finite, got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class SparsePointCloud:
    """World-frame points with the id of the view pair that produced each one."""

    points: np.ndarray  # (N, 3)
    pair_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not self.pair_ids:
            self.pair_ids = ["0"] * len(self.points)
        if len(self.pair_ids) != len(self.points):
            raise InvalidInputError(f"{len(self.points)} points but {len(self.pair_ids)} pair ids")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("Sparse points must be finite")

    def __len__(self) -> int:
        return len(self.points)


def scale_transform(relative: np.ndarray, mu: Union[MedianDepth, float]) -> np.ndarray:
    relative = np.asarray(relative, dtype=np.float64)
    if not np.all(np.isfinite(relative)):
        row, col = np.argwhere(~np.isfinite(relative))[0][:2]
        raise InvalidInputError(f"Relative depth has a non-finite entry at pixel (u={col}, v={row})")
    mu = float(mu)
    if not np.isfinite(mu) or mu <= 0:
        raise InvalidInputError(f"Median depth must be positive, got {mu}")
    return mu * np.exp(relative)


def sparse_view_depths(
    cloud: SparsePointCloud, k: CameraIntrinsics, world_pose: RigidPose, raster: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into a view.

    Returns (pixels (M, 2) as continuous (u, v), depths (M,)) for the points in
    front of the camera that land inside the (height, width) raster.
    """
    if len(cloud) == 0:
        raise InsufficientDataError("Sparse point cloud is empty")
    height, width = raster
    cam = world_pose.inverse().apply(cloud.points)
    z = cam[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = k.fx * cam[:, 0] / safe_z + k.cx
    v = k.fy * cam[:, 1] / safe_z + k.cy
    keep = front & (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
    if not np.any(keep):
        logging.warning("No sparse point projects inside the view")
    return np.stack([u[keep], v[keep]], axis=-1), z[keep]


def median_depth(depths: Sequence[float]) -> MedianDepth:
    """Lower median: element at index (n - 1) // 2 of the ascending sort."""
    values = np.sort(np.asarray(depths, dtype=np.float64).ravel())
    if values.size == 0:
        raise InsufficientDataError("Cannot take the median of an empty depth list")
    return MedianDepth(float(values[(values.size - 1) // 2]))


def view_median_depth(
    cloud: SparsePointCloud, k: CameraIntrinsics, world_pose: RigidPose, raster: tuple[int, int]
) -> MedianDepth:
    _, depths = sparse_view_depths(cloud, k, world_pose, raster)
    mu = median_depth(depths)
    logging.info(f"Median depth {mu.value:.6g} m from {depths.size} of {len(cloud)} sparse points")
    return mu


def triangulate_correspondences(
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    world_pose_a: RigidPose,
    world_pose_b: RigidPose,
    pair_id: str = "0",
) -> SparsePointCloud:
    """Triangulate matched pixels of two views into a world-frame sparse cloud."""
    pixels_a = np.asarray(pixels_a, dtype=np.float64).reshape(-1, 2)
    pixels_b = np.asarray(pixels_b, dtype=np.float64).reshape(-1, 2)
    if pixels_a.shape != pixels_b.shape:
        raise InvalidInputError(f"Correspondence lists differ in length: {len(pixels_a)} vs {len(pixels_b)}")
    rays_a = k_a.rays(pixels_a[:, 0], pixels_a[:, 1]) @ world_pose_a.rotation.T
    rays_b = k_b.rays(pixels_b[:, 0], pixels_b[:, 1]) @ world_pose_b.rotation.T
    rays_a /= np.linalg.norm(rays_a, axis=1, keepdims=True)
    rays_b /= np.linalg.norm(rays_b, axis=1, keepdims=True)
    points = [
        triangulate_midpoint(world_pose_a.translation, ra, world_pose_b.translation, rb)
        for ra, rb in zip(rays_a, rays_b)
    ]
    return SparsePointCloud(np.array(points).reshape(-1, 3), [pair_id] * len(points))
