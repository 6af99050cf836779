import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from geometry import CameraIntrinsics, RigidPose
from losses import ScenePair
from synth import PlanarScene, TextureComponent, make_scene_pair, render_view, sample_correspondences

SLANTED_NORMAL = np.array([0.28, 0.0, 0.96])


def rotvec_pose(rx: float, ry: float, rz: float, tx: float, ty: float, tz: float) -> RigidPose:
    return RigidPose(Rotation.from_rotvec([rx, ry, rz]).as_matrix(), np.array([tx, ty, tz]))


def textured_plane(normal, offset: float, frequency: float = 0.5) -> PlanarScene:
    """Plane with two sinusoids per channel; `frequency` in cycles per meter."""
    f = frequency
    textures = [
        TextureComponent(0, 0.2, (f, 0.4 * f, 0.0), 0.0),
        TextureComponent(0, 0.1, (-0.3 * f, 1.2 * f, 0.0), 1.0),
        TextureComponent(1, 0.2, (0.7 * f, -f, 0.0), 0.5),
        TextureComponent(1, 0.1, (1.3 * f, 0.2 * f, 0.0), 2.0),
        TextureComponent(2, 0.2, (-f, -0.5 * f, 0.0), 1.5),
        TextureComponent(2, 0.1, (0.4 * f, 1.1 * f, 0.0), 0.3),
    ]
    return PlanarScene(np.asarray(normal, dtype=np.float64), offset, np.full(3, 0.5), textures)


def build_pair(
    scene: PlanarScene, k: CameraIntrinsics, pose2: RigidPose, dims: tuple[int, int], n_points: int = 60, seed: int = 0
) -> ScenePair:
    pose1 = RigidPose.identity()
    image1, depth1 = render_view(scene, k, pose1, dims)
    image2, depth2 = render_view(scene, k, pose2, dims)
    cloud = sample_correspondences(scene, (pose1, pose2), (k, k), dims, n_points, seed)
    return make_scene_pair(image1, image2, (k, k), (pose1, pose2), cloud, (depth1, depth2))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_pair() -> ScenePair:
    """16x16 slanted plane, second camera 0.2 m to the right and slightly turned."""
    k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5)
    scene = textured_plane(SLANTED_NORMAL, 3.0, frequency=0.5)
    return build_pair(scene, k, rotvec_pose(0.0, -0.03, 0.0, 0.2, 0.02, 0.05), (16, 16), n_points=40)


@pytest.fixture
def slanted_pair() -> ScenePair:
    k = CameraIntrinsics(32.0, 32.0, 15.5, 15.5)
    scene = textured_plane(SLANTED_NORMAL, 4.0, frequency=0.8)
    return build_pair(scene, k, rotvec_pose(0.0, -0.04, 0.0, 0.4, 0.03, 0.05), (32, 32))


@pytest.fixture
def fronto_pair() -> ScenePair:
    """Fronto-parallel plane z = 4 and a pure 0.4 m x-translation."""
    k = CameraIntrinsics(32.0, 32.0, 15.5, 15.5)
    scene = textured_plane([0.0, 0.0, 1.0], 4.0, frequency=0.8)
    return build_pair(scene, k, RigidPose(np.eye(3), np.array([0.4, 0.0, 0.0])), (32, 32))
