"""Procedural planar two-view scenes with exact ground-truth depth.

A scene is one world plane n.X = offset carrying a sum of 3D sinusoids per
color channel, so every view sees the same texture at the same world point.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from errors import InvalidInputError, ParseError, SceneConfigurationError
from geometry import CameraIntrinsics, RigidPose, transfer_points
from losses import ScenePair
from scale import SparsePointCloud, view_median_depth
from utils import KeyValue, parse_floats, read_key_values

# cycles per pixel above which bilinear warping error is no longer small
MAX_TEXTURE_FREQUENCY = 0.25
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class TextureComponent:
    channel: int
    amplitude: float
    frequency: tuple[float, float, float]  # cycles per meter, world frame
    phase: float = 0.0

    def __post_init__(self):
        if self.channel not in (0, 1, 2):
            raise InvalidInputError(f"Texture channel must be 0, 1 or 2, got {self.channel}")
        if not all(np.isfinite((self.amplitude, self.phase, *self.frequency))):
            raise InvalidInputError("Texture parameters must be finite")

    def phase_at(self, points: np.ndarray) -> np.ndarray:
        return 2 * np.pi * (points @ np.asarray(self.frequency)) + self.phase

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(self.phase_at(points))


@dataclass
class PlanarScene:
    normal: np.ndarray
    offset: float
    base: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    textures: list[TextureComponent] = field(default_factory=list)

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        self.base = np.broadcast_to(np.asarray(self.base, dtype=np.float64), (3,)).copy()
        if abs(np.linalg.norm(self.normal) - 1.0) > UNIT_TOL:
            raise SceneConfigurationError(f"Plane normal must be unit length, |n| = {np.linalg.norm(self.normal)}")
        if not np.isfinite(self.offset) or self.offset <= 0:
            raise SceneConfigurationError(f"Plane offset must be positive, got {self.offset}")
        for channel in range(3):
            swing = sum(abs(t.amplitude) for t in self.textures if t.channel == channel)
            if self.base[channel] - swing < 0 or self.base[channel] + swing > 1:
                raise SceneConfigurationError(
                    f"Channel {channel} texture spans [{self.base[channel] - swing}, {self.base[channel] + swing}], outside [0, 1]"
                )

    def texture(self, points: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.base, points.shape[:-1] + (3,)).copy()
        for component in self.textures:
            out[..., component.channel] += component.evaluate(points)
        return out

    def scaled(self, k: float) -> PlanarScene:
        """The same scene with every length multiplied by k (texture frequencies divided by k)."""
        textures = [
            TextureComponent(t.channel, t.amplitude, tuple(f / k for f in t.frequency), t.phase) for t in self.textures
        ]
        return PlanarScene(self.normal, self.offset * k, self.base, textures)


def _intersect(scene: PlanarScene, k: CameraIntrinsics, world_pose: RigidPose, u: np.ndarray, v: np.ndarray):
    """Ray-plane intersection for pixels (u, v): returns (camera z, world points, valid)."""
    directions = k.rays(u, v) @ world_pose.rotation.T
    denominator = directions @ scene.normal
    numerator = scene.offset - scene.normal @ world_pose.translation
    valid = np.abs(denominator) > 1e-12
    depth = np.where(valid, numerator / np.where(valid, denominator, 1.0), -1.0)
    valid &= depth > 0
    points = world_pose.translation + depth[..., None] * directions
    return depth, points, valid


def render_view(
    scene: PlanarScene, k: CameraIntrinsics, world_pose: RigidPose, dims: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Render (image (H, W, 3), depth (H, W)) of a plane seen by a pinhole camera."""
    height, width = dims
    if height < 1 or width < 1:
        raise InvalidInputError(f"Raster dimensions must be positive, got {height}x{width}")
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    # rays have unit z, so the ray parameter is the camera-frame depth
    depth, points, valid = _intersect(scene, k, world_pose, u, v)
    if not np.all(valid):
        row, col = np.argwhere(~valid)[0]
        raise SceneConfigurationError(
            f"Ray of pixel (u={col}, v={row}) is parallel to or points away from the plane"
        )
    for component in scene.textures:
        phase = component.phase_at(points) / (2 * np.pi)
        step = 0.0
        if width > 1:
            step = max(step, float(np.max(np.abs(np.diff(phase, axis=1)))))
        if height > 1:
            step = max(step, float(np.max(np.abs(np.diff(phase, axis=0)))))
        if step > MAX_TEXTURE_FREQUENCY:
            logging.warning(
                f"Texture component with frequency {component.frequency} reaches {step:.3f} cycles/pixel "
                f"(band limit {MAX_TEXTURE_FREQUENCY})"
            )
    return scene.texture(points), depth


@dataclass
class PixelMatches:
    """Pixel correspondences of two views and their exact world points."""

    pixels1: np.ndarray  # (N, 2) as (u, v)
    pixels2: np.ndarray
    points: np.ndarray  # (N, 3)


def match_pixels(
    scene: PlanarScene,
    world_poses: Sequence[RigidPose],
    intrinsics: Sequence[CameraIntrinsics],
    dims: tuple[int, int],
    n: int,
    seed: int,
    pixels: Optional[np.ndarray] = None,
) -> PixelMatches:
    """Draw n distinct view-1 pixels (or use `pixels`) that are also visible in view 2."""
    if n < 1:
        raise InvalidInputError(f"Need at least one correspondence, got n={n}")
    height, width = dims
    pose1, pose2 = world_poses
    k1, k2 = intrinsics
    if pixels is None:
        order = np.random.default_rng(seed).permutation(height * width)
        candidates = np.stack([order % width, order // width], axis=-1).astype(np.float64)
    else:
        candidates = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depth, points, valid = _intersect(scene, k1, pose1, candidates[:, 0], candidates[:, 1])
    pose_12 = pose2.inverse().compose(pose1)
    u2, v2, _, in_front, _, _ = transfer_points(
        candidates[:, 0], candidates[:, 1], np.where(valid, depth, 1.0), k1, k2, pose_12
    )
    visible = valid & in_front & (u2 >= 0) & (u2 <= width - 1) & (v2 >= 0) & (v2 <= height - 1)
    chosen = np.flatnonzero(visible)[:n]
    if chosen.size < n:
        logging.warning(f"Only {chosen.size} of {n} requested correspondences are visible in both views")
    return PixelMatches(
        pixels1=candidates[chosen],
        pixels2=np.stack([u2[chosen], v2[chosen]], axis=-1),
        points=points[chosen],
    )


def sample_correspondences(
    scene: PlanarScene,
    world_poses: Sequence[RigidPose],
    intrinsics: Sequence[CameraIntrinsics],
    dims: tuple[int, int],
    n: int,
    seed: int,
    pixels: Optional[np.ndarray] = None,
) -> SparsePointCloud:
    matches = match_pixels(scene, world_poses, intrinsics, dims, n, seed, pixels)
    return SparsePointCloud(matches.points, ["0"] * len(matches.points))


# --- scene descriptor ---

SINGLE_KEYS = {
    "width",
    "height",
    "intrinsics",
    "intrinsics1",
    "intrinsics2",
    "pose1",
    "pose2",
    "plane_normal",
    "plane_offset",
    "base",
    "sparse_points",
    "seed",
}
REPEATED_KEYS = {"texture"}


@dataclass
class SceneDescriptor:
    width: int
    height: int
    k1: CameraIntrinsics
    k2: CameraIntrinsics
    pose1: RigidPose
    pose2: RigidPose
    scene: PlanarScene
    sparse_points: int = 200
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int]:
        return self.height, self.width


@contextmanager
def _reported_at(path: Union[str, Path], entry: KeyValue):
    try:
        yield
    except ParseError:
        raise
    except InvalidInputError as e:
        raise ParseError(str(path), entry.line, str(e)) from None


def _parse_int(path, entry: KeyValue) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ParseError(str(path), entry.line, f"'{entry.key}' must be an integer, got '{entry.value}'")


def pose_from_rotvec(values: Sequence[float]) -> RigidPose:
    """Camera-to-world pose from `rx ry rz tx ty tz` (rotation vector in radians)."""
    return RigidPose(Rotation.from_rotvec(values[:3]).as_matrix(), np.asarray(values[3:], dtype=np.float64))


def load_scene_descriptor(path: Union[str, Path]) -> SceneDescriptor:
    entries: dict[str, KeyValue] = {}
    textures: list[KeyValue] = []
    for entry in read_key_values(path):
        if entry.key in REPEATED_KEYS:
            textures.append(entry)
        elif entry.key in SINGLE_KEYS:
            if entry.key in entries:
                raise ParseError(str(path), entry.line, f"duplicate key '{entry.key}'")
            entries[entry.key] = entry
        else:
            raise ParseError(str(path), entry.line, f"unknown key '{entry.key}'")

    for key in ("width", "height", "pose1", "pose2", "plane_normal", "plane_offset"):
        if key not in entries:
            raise ParseError(str(path), None, f"missing required key '{key}'")
    if "intrinsics" in entries and ("intrinsics1" in entries or "intrinsics2" in entries):
        raise ParseError(str(path), entries["intrinsics"].line, "give either 'intrinsics' or 'intrinsics1'/'intrinsics2'")

    width = _parse_int(path, entries["width"])
    height = _parse_int(path, entries["height"])
    if width < 1 or height < 1:
        raise ParseError(str(path), entries["width"].line, f"raster must be positive, got {width}x{height}")

    intrinsics = []
    for key in ("intrinsics1", "intrinsics2"):
        entry = entries.get(key, entries.get("intrinsics"))
        if entry is None:
            raise ParseError(str(path), None, f"missing required key '{key}' (or shared 'intrinsics')")
        with _reported_at(path, entry):
            intrinsics.append(CameraIntrinsics(*parse_floats(entry, path, 4)))

    poses = []
    for key in ("pose1", "pose2"):
        with _reported_at(path, entries[key]):
            poses.append(pose_from_rotvec(parse_floats(entries[key], path, 6)))

    components = []
    for entry in textures:
        channel, amplitude, fx, fy, fz, phase = parse_floats(entry, path, 6)
        if channel != int(channel):
            raise ParseError(str(path), entry.line, f"texture channel must be an integer, got {channel}")
        with _reported_at(path, entry):
            components.append(TextureComponent(int(channel), amplitude, (fx, fy, fz), phase))

    base = np.full(3, 0.5)
    if "base" in entries:
        tokens = entries["base"].value.split()
        base = np.asarray(parse_floats(entries["base"], path, 1 if len(tokens) == 1 else 3))

    normal = parse_floats(entries["plane_normal"], path, 3)
    with _reported_at(path, entries["plane_normal"]):
        if abs(np.linalg.norm(normal) - 1.0) > UNIT_TOL:
            raise SceneConfigurationError(f"plane_normal must be unit length, |n| = {np.linalg.norm(normal)}")
    offset = parse_floats(entries["plane_offset"], path, 1)[0]
    with _reported_at(path, entries["plane_offset"]):
        scene = PlanarScene(np.asarray(normal), offset, base, components)

    sparse_points = _parse_int(path, entries["sparse_points"]) if "sparse_points" in entries else 200
    if sparse_points < 1:
        raise ParseError(str(path), entries["sparse_points"].line, "sparse_points must be at least 1")
    seed = _parse_int(path, entries["seed"]) if "seed" in entries else 0

    logging.debug(f"Loaded scene descriptor {path}: {width}x{height}, {len(components)} texture components")
    return SceneDescriptor(width, height, intrinsics[0], intrinsics[1], poses[0], poses[1], scene, sparse_points, seed)


@dataclass
class RenderedPair:
    image1: np.ndarray
    image2: np.ndarray
    depth1: np.ndarray
    depth2: np.ndarray
    matches: PixelMatches
    cloud: SparsePointCloud


def render_descriptor(descriptor: SceneDescriptor, seed: Optional[int] = None) -> RenderedPair:
    seed = descriptor.seed if seed is None else seed
    d = descriptor
    image1, depth1 = render_view(d.scene, d.k1, d.pose1, d.dims)
    image2, depth2 = render_view(d.scene, d.k2, d.pose2, d.dims)
    matches = match_pixels(d.scene, (d.pose1, d.pose2), (d.k1, d.k2), d.dims, d.sparse_points, seed)
    cloud = SparsePointCloud(matches.points, ["0"] * len(matches.points))
    return RenderedPair(image1, image2, depth1, depth2, matches, cloud)


def make_scene_pair(
    image1: np.ndarray,
    image2: np.ndarray,
    intrinsics: Sequence[CameraIntrinsics],
    world_poses: Sequence[RigidPose],
    cloud: SparsePointCloud,
    gt: Sequence[Optional[np.ndarray]] = (None, None),
) -> ScenePair:
    """Assemble a ScenePair, estimating each view's median depth from the sparse cloud."""
    dims = np.shape(image1)[:2]
    mu1 = view_median_depth(cloud, intrinsics[0], world_poses[0], dims)
    mu2 = view_median_depth(cloud, intrinsics[1], world_poses[1], dims)
    return ScenePair(
        image1, image2, intrinsics[0], intrinsics[1], world_poses[0], world_poses[1], mu1, mu2, gt[0], gt[1]
    )


def descriptor_scene_pair(descriptor: SceneDescriptor, seed: Optional[int] = None) -> ScenePair:
    rendered = render_descriptor(descriptor, seed)
    return make_scene_pair(
        rendered.image1,
        rendered.image2,
        (descriptor.k1, descriptor.k2),
        (descriptor.pose1, descriptor.pose2),
        rendered.cloud,
        (rendered.depth1, rendered.depth2),
    )
