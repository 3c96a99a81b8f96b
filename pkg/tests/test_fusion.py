import numpy as np
import pytest

from conftest import small_spec

from core.config import FusionParams
from core.errors import DimensionError, InputError, MetricsUndefinedError
from core.maps import DepthNormalMap, PointCloud
from core.scene_io import ImageBuffer
from stages.fusion.fusion import fuse
from stages.fusion.metrics import evaluate_cloud, evaluate_depth, f1_score, format_report


def cams_of(bundle):
    return {i: v.camera for i, v in enumerate(bundle.views)}


def plane_distance(points, planes):
    normals = np.array([p.normal for p in planes])
    offsets = np.array([p.offset for p in planes])
    return np.abs(points @ normals.T + offsets).min(axis=1)


# --- fusion -------------------------------------------------------------------

def test_ground_truth_maps_fuse_onto_planes(small_scene):
    bundle, maps, _ = small_scene
    cloud = fuse(maps, cams_of(bundle), FusionParams())
    assert len(cloud) > 0
    # points merged across the wall/floor crease may sit between the planes
    assert (plane_distance(cloud.positions, small_spec().planes) < 1e-3).mean() > 0.9
    np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-5)
    assert (cloud.colors == 128).all()


def test_each_pixel_used_once(small_scene):
    bundle, maps, _ = small_scene
    params = FusionParams(min_consistent=2)
    cloud = fuse(maps, cams_of(bundle), params)
    total = sum(int(m.reliable.sum()) for m in maps.values())
    assert len(cloud) * (params.min_consistent + 1) <= total


def test_colours_come_from_images(small_scene):
    bundle, maps, _ = small_scene
    images = {i: v.image for i, v in enumerate(bundle.views)}
    cloud = fuse(maps, cams_of(bundle), FusionParams(), images)
    assert (cloud.colors[:, 0] == cloud.colors[:, 2]).all()
    assert len(np.unique(cloud.colors[:, 0])) > 1


def test_unreachable_consistency_gives_empty_cloud(small_scene):
    bundle, maps, _ = small_scene
    assert len(fuse(maps, cams_of(bundle), FusionParams(min_consistent=len(maps)))) == 0


def test_random_view_breaks_consistency(small_scene, rng):
    bundle, maps, _ = small_scene
    clean = fuse(maps, cams_of(bundle), FusionParams())
    noisy_maps = dict(maps)
    m = maps[2]
    noisy_maps[2] = DepthNormalMap(rng.uniform(1, 20, m.shape), m.normal, m.cost)
    noisy = fuse(noisy_maps, cams_of(bundle), FusionParams())
    assert len(noisy) < 0.2 * len(clean)


def test_fusion_input_checks(small_scene):
    bundle, maps, _ = small_scene
    with pytest.raises(InputError):
        fuse({0: maps[0]}, cams_of(bundle), FusionParams())
    with pytest.raises(InputError):
        fuse(maps, {0: bundle.views[0].camera}, FusionParams())
    with pytest.raises(DimensionError):
        fuse(maps, cams_of(bundle), FusionParams(), {0: ImageBuffer(np.zeros((4, 4)))})


# --- cloud metrics ------------------------------------------------------------

def grid_cloud(n=10):
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    pos = np.stack([xs.ravel(), ys.ravel(), np.zeros(n * n)], axis=-1)
    return PointCloud(pos, np.tile([0.0, 0.0, 1.0], (n * n, 1)), np.zeros((n * n, 3)))


def brute_fraction(query, reference, tau):
    d = np.linalg.norm(query[:, None] - reference[None], axis=-1).min(axis=1)
    return 100.0 * float((d <= tau).mean())


def test_identical_clouds():
    gt = grid_cloud()
    result = evaluate_cloud(gt, gt, tau=0.1)
    assert (result.accuracy, result.completeness, result.f1) == (100.0, 100.0, 100.0)


def test_half_moved_cloud():
    gt = grid_cloud()
    pos = gt.positions.copy()
    pos[::2, 2] += 0.2
    est = PointCloud(pos, gt.normals, gt.colors)
    result = evaluate_cloud(est, gt, tau=0.1)
    assert result.accuracy == pytest.approx(brute_fraction(pos, gt.positions, 0.1)) == pytest.approx(50.0)
    assert result.completeness == pytest.approx(brute_fraction(gt.positions, pos, 0.1))
    assert result.f1 == pytest.approx(f1_score(result.accuracy, result.completeness))


def test_tolerance_is_inclusive():
    gt = grid_cloud(2)
    est = PointCloud(gt.positions + [0.0, 0.0, 0.25], gt.normals, gt.colors)
    assert evaluate_cloud(est, gt, tau=0.25).accuracy == 100.0


def test_empty_clouds():
    result = evaluate_cloud(PointCloud.empty(), grid_cloud(), tau=0.1)
    assert (result.accuracy, result.completeness, result.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(MetricsUndefinedError):
        evaluate_cloud(grid_cloud(), PointCloud.empty(), tau=0.1)
    with pytest.raises(InputError):
        evaluate_cloud(grid_cloud(), grid_cloud(), tau=0.0)
    assert f1_score(0.0, 0.0) == 0.0


# --- depth metrics ------------------------------------------------------------

def depth_map(depth):
    h, w = depth.shape
    return DepthNormalMap(depth, np.tile([0.0, 0.0, -1.0], (h, w, 1)), np.zeros((h, w)))


def test_depth_metrics():
    gt = np.full((4, 5), 5.0)
    assert evaluate_depth(depth_map(gt), gt, 0.01) == (1.0, 0.0)
    fraction, error = evaluate_depth(depth_map(gt * 1.02), gt, 0.01)
    assert fraction == 0.0
    assert error == pytest.approx(0.02)


def test_depth_metrics_missing_estimate_and_region():
    gt = np.full((2, 2), 4.0)
    est = gt.copy()
    est[0, 0] = 0.0
    fraction, error = evaluate_depth(depth_map(est), gt, 0.01)
    assert fraction == 0.75
    assert error == pytest.approx(0.25)
    region = np.array([[False, True], [True, True]])
    assert evaluate_depth(depth_map(est), gt, 0.01, region) == (1.0, 0.0)
    with pytest.raises(MetricsUndefinedError):
        evaluate_depth(depth_map(est), np.zeros((2, 2)), 0.01)
    with pytest.raises(DimensionError):
        evaluate_depth(depth_map(est), np.ones((3, 3)), 0.01)


def test_format_report_sorted():
    assert format_report({"b": 1.5, "a": 2}) == "a=2\nb=1.5\n"
