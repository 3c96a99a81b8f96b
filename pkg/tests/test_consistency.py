import math

import numpy as np
import pytest

from core.config import ConsistencyParams
from core.errors import DomainError
from core.geometry import EpipolarLine
from stages.aggregate.consistency import (
    EpipolarGeoContext,
    adaptive_threshold,
    epipolar_context,
    epipolar_cost_maps,
    epipolar_geo_cost,
    reprojection_cost,
    reprojection_cost_maps,
)
from stages.depth.patchmatch import MatchingViews

PARAMS = ConsistencyParams()
LINE = EpipolarLine(0.6, 0.8, -3.0)
N = (0.0, 0.0, -1.0)


def context(p, p_H, line=LINE):
    return EpipolarGeoContext(p, p_H, line, line.distance(p), math.dist(p, p_H))


def test_threshold_off_line_is_point_distance():
    ctx = EpipolarGeoContext((0.0, 0.0), (1.0, 0.0), LINE, 3.0, 1.0)
    assert adaptive_threshold(ctx) == 3.0


def test_threshold_on_line_formula():
    ctx = context((5.0, 0.0), (6.0, 2.0))
    assert ctx.dist_p == pytest.approx(0.0, abs=1e-12)
    ctx = EpipolarGeoContext(ctx.p, ctx.p_H, LINE, 0.0, ctx.dist_H)
    ca, cb = LINE.c / LINE.a, LINE.c / LINE.b
    expected = abs((ca * 1.0 - ca * 2.0) / math.sqrt(ca**2 + cb**2 + ctx.dist_H) * ctx.dist_H)
    assert adaptive_threshold(ctx) == pytest.approx(expected, rel=1e-12)


def test_threshold_on_line_without_displacement():
    assert adaptive_threshold(EpipolarGeoContext((5.0, 0.0), (5.0, 0.0), LINE, 0.0, 0.0)) == 0.0


def test_threshold_axis_aligned_line_falls_back():
    line = EpipolarLine(1.0, 0.0, -5.0)
    assert adaptive_threshold(EpipolarGeoContext((5.0, 0.0), (5.0, 2.0), line, 0.0, 2.0)) == 2.0


def test_geo_cost_branches():
    perfect = EpipolarGeoContext((5.0, 0.0), (5.0, 0.0), LINE, 0.0, 0.0)
    assert epipolar_geo_cost(perfect, N, N, PARAMS) == 0.0
    assert epipolar_geo_cost(perfect, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), PARAMS) == pytest.approx(1.0)

    far = EpipolarGeoContext((0.0, 0.0), (0.0, 5.0), LINE, 1.0, 5.0)
    assert epipolar_geo_cost(far, N, N, PARAMS) == 2.0

    equal = EpipolarGeoContext((0.0, 0.0), (0.0, 2.0), LINE, 2.0, 2.0)
    assert epipolar_geo_cost(equal, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), PARAMS) == pytest.approx(2.0)
    assert epipolar_geo_cost(equal, N, N, PARAMS) == pytest.approx(1.0)

    off_zero = EpipolarGeoContext((5.0, 0.0), (6.0, 0.0), EpipolarLine(1.0, 0.0, -5.0), 0.0, 1.0)
    assert epipolar_geo_cost(off_zero, N, N, PARAMS) == pytest.approx(1.0 / adaptive_threshold(off_zero))


def test_geo_cost_range(rng):
    for _ in range(1000):
        ctx = EpipolarGeoContext((0.0, 0.0), (0.0, 0.0), LINE, *rng.uniform(0, 4, 2))
        n_p, n_q = rng.normal(size=3), rng.normal(size=3)
        cost = epipolar_geo_cost(ctx, n_p / np.linalg.norm(n_p), n_q / np.linalg.norm(n_q), PARAMS)
        assert 0.0 <= cost <= 2.0


def test_negative_distance_rejected():
    with pytest.raises(DomainError):
        EpipolarGeoContext((0.0, 0.0), (0.0, 0.0), LINE, -1.0, 0.0)


def wall_pixel(bundle):
    """Middle of the wall along the centre column of view 0."""
    labels = bundle.views[0].mask.labels
    x = labels.shape[1] // 2
    rows = np.nonzero(labels[:, x] == 1)[0]
    return x, int(rows[len(rows) // 2])


def test_reprojection_zero_on_ground_truth(small_scene):
    bundle, maps, _ = small_scene
    x, y = wall_pixel(bundle)
    ref, src = bundle.views[0].camera, bundle.views[1].camera
    cost = reprojection_cost(ref, src, (x, y), float(maps[0].depth[y, x]), maps[1].depth, PARAMS)
    assert cost == pytest.approx(0.0, abs=1e-2)


def test_reprojection_truncates(small_scene):
    bundle, maps, _ = small_scene
    x, y = wall_pixel(bundle)
    ref, src = bundle.views[0].camera, bundle.views[1].camera
    assert reprojection_cost(ref, src, (x, y), 1.0, maps[1].depth, PARAMS) == PARAMS.tau_geo
    occluded = np.zeros_like(maps[1].depth)
    assert reprojection_cost(ref, src, (x, y), float(maps[0].depth[y, x]), occluded, PARAMS) == PARAMS.tau_geo
    with pytest.raises(DomainError):
        reprojection_cost(ref, src, (x, y), 0.0, maps[1].depth, PARAMS)


def test_epipolar_cost_zero_on_ground_truth(small_scene):
    bundle, maps, _ = small_scene
    x, y = wall_pixel(bundle)
    ref, src = bundle.views[0].camera, bundle.views[1].camera
    ctx = epipolar_context(ref, src, (x, y), float(maps[0].depth[y, x]), maps[1].depth, PARAMS.zero_tol)
    assert ctx is not None
    assert ctx.dist_H == 0.0
    n = maps[0].normal[y, x]
    assert epipolar_geo_cost(ctx, n, n, PARAMS) == pytest.approx(0.0, abs=1e-6)


def test_cost_maps_on_ground_truth(small_scene):
    bundle, maps, _ = small_scene
    views = MatchingViews.from_bundle(bundle, maps)
    wall = bundle.views[0].mask.labels == 1
    epi = epipolar_cost_maps(views, maps[0].depth, maps[0].normal, PARAMS)[0]
    rep = reprojection_cost_maps(views, maps[0].depth, PARAMS)[0]
    assert np.median(epi[wall]) < 1e-3
    assert np.median(rep[wall]) < 1e-2
    assert np.nanmax(rep) <= 2.0
    assert np.isnan(epi[maps[0].depth <= 0]).all()
