import numpy as np
import pytest

from conftest import make_camera, random_camera
from core.errors import (
    DepthOutOfRangeError,
    DomainError,
    InputError,
    ParallelRayError,
    SingularWarpError,
    UndefinedEpipoleError,
)
from core.geometry import (
    CameraModel,
    FittedPlane,
    PlaneHypothesis,
    back_project,
    epipolar_line,
    homography,
    make_hypothesis,
    normal_similarity,
    plane_depth_at,
    project,
    triangle_plane,
    warp,
)

N_INSTANCES = 100


def random_hypothesis(rng, cam, pixel):
    normal = -cam.ray(pixel) / np.linalg.norm(cam.ray(pixel)) + rng.normal(0, 0.3, 3)
    return make_hypothesis(cam, pixel, rng.uniform(3.0, 8.0), normal)


def test_camera_rejects_non_rotation():
    with pytest.raises(InputError):
        CameraModel(100, 100, 50, 50, np.diag([1.0, 1.0, -1.0]), np.zeros(3), 1, 10)


def test_camera_rejects_bad_depth_range():
    with pytest.raises(InputError):
        CameraModel(100, 100, 50, 50, np.eye(3), np.zeros(3), 5, 1)


def test_project_back_project_identity(rng):
    for _ in range(N_INSTANCES):
        cam = random_camera(rng)
        pixel = rng.uniform([0, 0], [319, 239])
        depth = rng.uniform(1.0, 20.0)
        p, d = project(cam, back_project(cam, pixel, depth))
        np.testing.assert_allclose(p, pixel, atol=1e-6)
        assert d == pytest.approx(depth, rel=1e-9)


def test_back_project_rejects_nonpositive_depth(camera):
    with pytest.raises(DomainError):
        back_project(camera, (10.0, 10.0), 0.0)


def test_plane_round_trip(rng):
    for _ in range(N_INSTANCES):
        cam = random_camera(rng)
        pixel = rng.uniform([0, 0], [319, 239])
        hyp = random_hypothesis(rng, cam, pixel)
        plane = FittedPlane.from_hypothesis(cam, pixel, hyp)
        assert plane_depth_at(plane, pixel, cam) == pytest.approx(hyp.depth, rel=1e-9)


def test_fronto_parallel_plane_depth(camera):
    plane = FittedPlane((0.0, 0.0, -1.0, 5.0))
    for pixel in [(0, 0), (31.5, 23.5), (63, 47)]:
        assert plane_depth_at(plane, pixel, camera) == pytest.approx(5.0)


def test_plane_depth_errors(camera):
    with pytest.raises(ParallelRayError):
        plane_depth_at(FittedPlane((1.0, 0.0, 0.0, 1.0)), (camera.cx, camera.cy), camera)
    with pytest.raises(DepthOutOfRangeError) as info:
        plane_depth_at(FittedPlane((0.0, 0.0, -1.0, 50.0)), (camera.cx, camera.cy), camera)
    assert info.value.depth == pytest.approx(50.0)


def test_homography_matches_plane_transfer(rng):
    for _ in range(N_INSTANCES):
        ref, src = random_camera(rng), random_camera(rng)
        pixel = rng.uniform([40, 40], [280, 200])
        hyp = random_hypothesis(rng, ref, pixel)
        H = homography(ref, src, hyp, pixel)
        plane = FittedPlane.from_hypothesis(ref, pixel, hyp)
        q = pixel + rng.uniform(-5, 5, 2)
        X = back_project(ref, q, plane_depth_at(plane, q, ref, check_range=False))
        expected, _ = project(src, X)
        np.testing.assert_allclose(warp(H, q), expected, atol=1e-6)


def test_homography_singular_when_plane_through_camera(camera):
    other = make_camera(center=(0.5, 0.0, 0.0))
    pixel = (camera.cx, camera.cy)
    # normal perpendicular to the central ray: the plane contains the reference centre
    edge_on = PlaneHypothesis(5.0, (1.0, 0.0, 0.0))
    with pytest.raises(SingularWarpError):
        homography(camera, other, edge_on, pixel)


def test_epipolar_incidence(rng):
    for _ in range(N_INSTANCES):
        ref, src = random_camera(rng), random_camera(rng)
        q = rng.uniform([0, 0], [319, 239])
        X = back_project(src, q, rng.uniform(2.0, 10.0))
        p, _ = project(ref, X)
        line = epipolar_line(ref, src, q)
        assert line.distance(p) < 1e-6


def test_epipole_undefined_for_coincident_centres(camera):
    rotated = make_camera(target=(1.0, 0.0, 5.0))
    with pytest.raises(UndefinedEpipoleError):
        epipolar_line(camera, rotated, (10.0, 10.0))


def test_triangle_plane_contains_vertices(rng):
    v = rng.normal(size=(3, 3))
    plane = triangle_plane(*v)
    np.testing.assert_allclose(plane.signed_distance(v), 0.0, atol=1e-12)


def test_normal_similarity_range():
    assert normal_similarity((0, 0, 1), (0, 0, 2)) == pytest.approx(1.0)
    assert normal_similarity((0, 0, 1), (0, 0, -1)) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        normal_similarity((0, 0, 0), (0, 0, 1))
