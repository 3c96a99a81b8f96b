import numpy as np
import pytest

from core.config import PipelineConfig
from core.geometry import CameraModel, look_at
from core.maps import DepthNormalMap
from stages.fusion.synthetic import PlaneSpec, SyntheticSceneSpec, synth_scene, trace


def make_camera(center=(0.0, 0.0, 0.0), target=(0.0, 0.0, 5.0), width=64, height=48, fx=60.0,
                d_min=1.0, d_max=20.0) -> CameraModel:
    return look_at(center, target, d_min, d_max, fx, fx, (width - 1) / 2, (height - 1) / 2)


def random_camera(rng: np.random.Generator, width=320, height=240) -> CameraModel:
    center = rng.uniform(-0.5, 0.5, 3)
    target = np.array([0.0, 0.0, 5.0]) + rng.uniform(-0.5, 0.5, 3)
    fx = rng.uniform(200.0, 400.0)
    return look_at(center, target, 0.5, 50.0, fx, fx, (width - 1) / 2, (height - 1) / 2)


def small_spec(**overrides) -> SyntheticSceneSpec:
    """Low-resolution wall + floor scene; texture cells span a few pixels."""
    values = dict(
        planes=[
            PlaneSpec((0.0, 0.0, -1.0), 5.0, texture="flat", albedo=0.55, shading=0.05,
                      weak_texture=0.05, texture_scale=0.5),
            PlaneSpec((0.0, -1.0, 0.0), 1.0, texture="noise", texture_scale=0.3),
        ],
        n_cameras=3,
        ring_radius=0.4,
        width=48,
        height=36,
        fx=42.0,
        seed=3,
    )
    values.update(overrides)
    return SyntheticSceneSpec(**values)


def ground_truth_maps(spec: SyntheticSceneSpec):
    """Bundle plus GT depth/normal maps (camera-frame normals, cost 0) per view."""
    bundle, gt_depth, gt_cloud, _ = synth_scene(spec)
    maps = {}
    for i, view in enumerate(bundle.views):
        _, label = trace(view.camera, spec.planes, (spec.width, spec.height))
        normal = np.zeros(label.shape + (3,))
        for k, plane in enumerate(spec.planes):
            normal[label == k] = view.camera.R @ np.array(plane.normal)
        maps[i] = DepthNormalMap(gt_depth[i], normal, np.zeros(label.shape))
    return bundle, maps, gt_cloud


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def camera():
    return make_camera()


@pytest.fixture
def config(tmp_path):
    return PipelineConfig(output_dir=str(tmp_path / "out"), cache_dir=str(tmp_path / "cache"))


@pytest.fixture
def fast_config(tmp_path):
    """Few iterations and a small patch for end-to-end runs on tiny scenes."""
    return PipelineConfig(
        output_dir=str(tmp_path / "out"),
        cache_dir=str(tmp_path / "cache"),
        patchmatch={"iterations": 2, "patch_radius": 3, "patch_step": 1, "geometric_iterations": 1},
        prior={"knn": 8, "ransac_iters": 64},
    )


@pytest.fixture(scope="session")
def small_scene():
    return ground_truth_maps(small_spec())
