import math

import numpy as np
import pytest

from conftest import make_camera
from core.config import PriorParams
from core.errors import DegenerateInputError, DegenerateNeighborhoodError, DimensionError, PlaneFitRejected
from core.maps import DepthNormalMap
from stages.prior.candidates import Choice, assemble_candidates
from stages.prior.planes import build_sam_prior, curvature_batch, fit_region, pca_curvature, ransac_plane_fit
from stages.prior.triangulation import SparsePointSet, delaunay_prior, sparsify, triangle_planes


def fronto_parallel(camera, depth=5.0, cost=0.0):
    h, w = 48, 64
    return DepthNormalMap(np.full((h, w), depth), np.tile([0.0, 0.0, -1.0], (h, w, 1)), np.full((h, w), cost))


# --- triangulation prior ------------------------------------------------------

def test_sparsify_keeps_exactly_confident_pixels(camera, rng):
    m = fronto_parallel(camera)
    m.cost[:] = rng.uniform(0, 1, m.shape)
    m.depth[0, 0] = 0.0
    m.cost[0, 0] = 0.0
    params = PriorParams()
    sparse = sparsify(m, camera, params)
    expected = (m.cost <= params.sparsify_cost_threshold) & (m.depth > 0)
    assert len(sparse) == int(expected.sum())
    assert np.all(m.cost[sparse.pixels[:, 1], sparse.pixels[:, 0]] <= params.sparsify_cost_threshold)
    np.testing.assert_allclose(sparse.points[:, 2], 5.0)


def test_delaunay_prior_reproduces_plane(camera):
    m = fronto_parallel(camera)
    prior = delaunay_prior(sparsify(m, camera, PriorParams()), camera, (64, 48))
    assert prior.reliable.all()
    np.testing.assert_allclose(prior.depth, 5.0, rtol=1e-5)
    np.testing.assert_allclose(prior.normal[..., 2], -1.0, atol=1e-6)


def test_delaunay_prior_interpolates_inside_hull_only(camera):
    m = fronto_parallel(camera, cost=1.0)
    for x, y in [(10, 10), (50, 10), (30, 40)]:
        m.cost[y, x] = 0.0
    prior = delaunay_prior(sparsify(m, camera, PriorParams()), camera, (64, 48))
    assert prior.depth[20, 30] == pytest.approx(5.0, rel=1e-5)
    assert prior.depth[0, 0] == 0.0
    assert prior.depth[47, 63] == 0.0


def test_delaunay_prior_absent_for_degenerate_input(camera):
    m = fronto_parallel(camera, cost=1.0)
    m.cost[10, 5:40] = 0.0
    assert not delaunay_prior(sparsify(m, camera, PriorParams()), camera, (64, 48)).reliable.any()
    empty = SparsePointSet(np.zeros((0, 2), np.int64), np.zeros(0), np.zeros((0, 3)), np.zeros(0))
    assert not delaunay_prior(empty, camera, (64, 48)).reliable.any()


def test_triangle_planes_face_camera():
    tri = np.array([[[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.0, 1.0, 5.0]],
                    [[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [2.0, 0.0, 5.0]]])
    coeffs, ok = triangle_planes(tri)
    assert ok.tolist() == [True, False]
    np.testing.assert_allclose(coeffs[0], [0.0, 0.0, -1.0, 5.0])


# --- curvature ----------------------------------------------------------------

def test_curvature_collinear_is_one():
    pts = np.outer(np.linspace(0, 1, 30), [1.0, 2.0, 3.0])
    assert pca_curvature(pts, 0, knn=10).curvature == pytest.approx(1.0)


def test_curvature_disk_is_half(rng):
    r = np.sqrt(rng.uniform(0, 1, 10_000))
    phi = rng.uniform(0, 2 * np.pi, 10_000)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros_like(r)], axis=-1)
    est = pca_curvature(pts, 0, knn=len(pts) - 1)
    assert est.curvature == pytest.approx(0.5, abs=0.01)
    assert est.eigenvalues[2] == 0.0


def test_curvature_isotropic_is_third(rng):
    pts = rng.normal(size=(10_000, 3))
    assert pca_curvature(pts, 0, knn=len(pts) - 1).curvature == pytest.approx(1 / 3, abs=0.02)


def test_curvature_degenerate_neighbourhood():
    with pytest.raises(DegenerateNeighborhoodError):
        pca_curvature(np.ones((8, 3)), 0, knn=4)
    assert np.isnan(curvature_batch(np.ones((8, 3)), knn=4)).all()


def test_curvature_batch_matches_single(rng):
    pts = rng.normal(size=(200, 3))
    batch = curvature_batch(pts, knn=12)
    for i in (0, 17, 199):
        assert batch[i] == pytest.approx(pca_curvature(pts, i, knn=12).curvature, rel=1e-9)


# --- RANSAC -------------------------------------------------------------------

def plane_with_outliers(rng, normal, offset, n_in=210, n_out=90):
    normal = np.asarray(normal) / np.linalg.norm(normal)
    e1 = np.cross(normal, [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    origin = -offset * normal
    uv = rng.uniform(-1, 1, (n_in, 2))
    inliers = origin + uv[:, :1] * e1 + uv[:, 1:] * e2
    outliers = origin + rng.uniform(-1, 1, (n_out, 3))
    return np.concatenate([inliers, outliers]), normal


@pytest.mark.parametrize("seed", range(100))
def test_ransac_recovers_plane(seed):
    rng = np.random.default_rng(seed)
    pts, normal = plane_with_outliers(rng, (0.2, 0.3, -0.93), 5.0)
    plane = ransac_plane_fit(pts, PriorParams(ransac_inlier_tol=1e-3), seed=seed)
    angle = math.degrees(math.acos(min(1.0, abs(float(plane.normal @ normal)))))
    assert angle < 0.5
    assert plane.offset == pytest.approx(5.0, abs=1e-3)
    assert plane.inlier_count >= 210


def test_ransac_is_seeded():
    rng = np.random.default_rng(0)
    pts, _ = plane_with_outliers(rng, (0.0, 0.0, -1.0), 4.0)
    params = PriorParams(ransac_inlier_tol=1e-3, ransac_iters=8)
    assert ransac_plane_fit(pts, params, 3, 1) == ransac_plane_fit(pts, params, 3, 1)


def test_ransac_rejects_low_consensus(rng):
    with pytest.raises(PlaneFitRejected):
        ransac_plane_fit(rng.uniform(-1, 1, (100, 3)) + [0, 0, 5], PriorParams(ransac_inlier_tol=1e-3), 0)


def test_ransac_degenerate_input():
    with pytest.raises(DegenerateInputError):
        ransac_plane_fit(np.zeros((2, 3)), PriorParams(), 0)
    with pytest.raises(DegenerateInputError):
        ransac_plane_fit(np.outer(np.arange(10.0), [1.0, 0.0, 0.0]), PriorParams(), 0)


# --- mask prior ---------------------------------------------------------------

def test_mask_prior_fits_wall(small_scene):
    bundle, maps, _ = small_scene
    view = bundle.views[0]
    prior, fits = build_sam_prior(view.mask, maps[0], view.camera, PriorParams(), seed=0)
    wall = view.mask.labels == 1
    assert wall.any()
    assert any(f.region_id == 1 and f.status == "accepted" for f in fits)
    np.testing.assert_allclose(prior.depth[wall], maps[0].depth[wall], rtol=1e-4)
    assert not prior.reliable[view.mask.labels == 0].any()


def test_region_needs_confident_pixels(small_scene):
    bundle, maps, _ = small_scene
    view = bundle.views[0]
    noisy = DepthNormalMap(maps[0].depth, maps[0].normal, np.ones(maps[0].shape))
    plane, fit = fit_region(view.mask.region_index[1], noisy, view.camera, PriorParams(), 0, 1)
    assert plane is None
    assert fit.status == "too few confident pixels"


def test_mask_prior_dimension_check(small_scene, camera):
    bundle, _, _ = small_scene
    with pytest.raises(DimensionError):
        build_sam_prior(bundle.views[0].mask, fronto_parallel(camera), camera, PriorParams(), 0)


# --- candidates -----------------------------------------------------------------

def test_absent_priors_are_empty(camera):
    raw = fronto_parallel(camera)
    cands = assemble_candidates(raw)
    assert cands.coverage() == {"RAW": 64 * 48, "TRI": 0, "SAM": 0}
    at = cands.at(3, 4)
    assert at[Choice.SAM] is None and at[Choice.RAW].depth == pytest.approx(5.0)
    with pytest.raises(DimensionError):
        assemble_candidates(raw, tri=DepthNormalMap.empty(10, 10))
