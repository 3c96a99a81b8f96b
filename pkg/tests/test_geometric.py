import numpy as np
import pytest
from scipy.ndimage import binary_erosion

from conftest import small_spec
from core.errors import InputError
from core.maps import DepthNormalMap
from stages.aggregate.geometric import final_geometric_pass, geometric_sweep
from stages.fusion.synthetic import trace


def rel_error(est, gt):
    ok = gt > 0
    return np.abs(est.depth[ok] - gt[ok]) / gt[ok]


def wall_interior(bundle, index: int, margin: int = 3) -> np.ndarray:
    """Wall pixels at least `margin` pixels away from the crease and the image border."""
    spec = small_spec()
    _, label = trace(bundle.views[index].camera, spec.planes, (spec.width, spec.height))
    return binary_erosion(label == 0, iterations=margin, border_value=0)


def test_ground_truth_stays_put(small_scene, fast_config):
    bundle, maps, _ = small_scene
    final = final_geometric_pass(bundle, maps, fast_config)
    assert sorted(final) == sorted(maps)
    for i, m in final.items():
        wall = wall_interior(bundle, i)
        assert wall.sum() > 50
        np.testing.assert_allclose(m.depth[wall], maps[i].depth[wall], rtol=1e-6)
        np.testing.assert_allclose(m.normal[wall], maps[i].normal[wall], atol=1e-6)
        assert np.median(rel_error(m, maps[i].depth)) < 1e-3
        assert ((m.cost >= 0) & (m.cost <= 2)).all()
        m.validate(bundle.views[i].camera)


def test_sweep_reports_combined_cost(small_scene, fast_config):
    bundle, maps, _ = small_scene
    updated, totals = geometric_sweep(maps, bundle, fast_config, sweep=0)
    for i in maps:
        assert totals[i].shape == maps[i].shape
        # combined cost only adds a non-negative geometric term
        assert (totals[i] >= updated[i].cost - 1e-6).all()


def test_pass_is_deterministic(small_scene, fast_config):
    bundle, maps, _ = small_scene
    a = final_geometric_pass(bundle, maps, fast_config)
    b = final_geometric_pass(bundle, maps, fast_config)
    for i in a:
        np.testing.assert_array_equal(a[i].depth, b[i].depth)
        np.testing.assert_array_equal(a[i].normal, b[i].normal)


def test_zero_sweeps_is_identity(small_scene, fast_config):
    bundle, maps, _ = small_scene
    config = fast_config.override({"patchmatch.geometric_iterations": 0})
    assert final_geometric_pass(bundle, maps, config) is maps


def test_missing_view(small_scene, fast_config):
    bundle, maps, _ = small_scene
    with pytest.raises(InputError):
        final_geometric_pass(bundle, {0: maps[0]}, fast_config)


def test_planted_outlier_is_corrected(small_scene, fast_config):
    bundle, maps, _ = small_scene
    wall = wall_interior(bundle, 0)
    ys, xs = np.nonzero(wall)
    y, x = ys[len(ys) // 2], xs[len(xs) // 2]
    depth = maps[0].depth.copy()
    depth[y, x] *= 1.15
    planted = dict(maps)
    planted[0] = DepthNormalMap(depth, maps[0].normal, maps[0].cost)

    final = final_geometric_pass(bundle, planted, fast_config)
    truth = maps[0].depth[y, x]
    assert abs(final[0].depth[y, x] - truth) / truth < 0.01
