"""Pinhole camera geometry.

Conventions: world->camera is X_c = R X_w + t, pixels are (x, y) with
viewing rays K^-1 (x, y, 1) of positive z, and plane normals face the camera
(n . ray < 0). All math runs in float64.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateTriangleError,
    DepthOutOfRangeError,
    DomainError,
    GeometryError,
    InputError,
    ParallelRayError,
    SingularWarpError,
    UndefinedEpipoleError,
)

ORTHONORMAL_TOL = 1e-9
UNIT_TOL = 1e-6
PARALLEL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Calibrated pinhole camera. P = [M | p4] with M = K R and p4 = K t."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        for name in ("fx", "fy", "cx", "cy", "d_min", "d_max"):
            object.__setattr__(self, name, float(getattr(self, name)))

        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be > 0, got fx={self.fx}, fy={self.fy}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise InputError("non-finite extrinsics")
        if np.abs(R.T @ R - np.eye(3)).max() >= ORTHONORMAL_TOL or np.linalg.det(R) <= 0:
            raise InputError("R must be a rotation (orthonormal, det +1)")
        if not (0 < self.d_min < self.d_max):
            raise InputError(f"invalid depth range [{self.d_min}, {self.d_max}]")

    @cached_property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @cached_property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @cached_property
    def M(self) -> np.ndarray:
        return self.K @ self.R

    @cached_property
    def p4(self) -> np.ndarray:
        return self.K @ self.t

    @cached_property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def in_range(self, depth) -> np.ndarray | bool:
        return (depth >= self.d_min) & (depth <= self.d_max)

    def ray(self, pixel) -> np.ndarray:
        """Viewing ray(s) with z = 1 in the camera frame."""
        p = np.asarray(pixel, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        return np.stack([(x - self.cx) / self.fx, (y - self.cy) / self.fy, np.ones_like(x)], axis=-1)

    def scaled(self, factor: float) -> "CameraModel":
        """Same pose, intrinsics for an image resized by `factor`."""
        return CameraModel(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
            self.R, self.t, self.d_min, self.d_max,
        )

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.d_min, self.d_max)
            == (other.fx, other.fy, other.cx, other.cy, other.d_min, other.d_max)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )

    __hash__ = None


@dataclass(frozen=True)
class PlaneHypothesis:
    """Per-pixel plane: depth along the pixel's ray and unit camera-frame normal."""

    depth: float
    normal: tuple[float, float, float]

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise DomainError(f"normal must be unit length, |n| = {np.linalg.norm(n):.9f}")
        if not self.depth > 0:
            raise DomainError(f"depth must be > 0, got {self.depth}")
        object.__setattr__(self, "depth", float(self.depth))
        object.__setattr__(self, "normal", tuple(float(v) for v in n))

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)


def make_hypothesis(cam: CameraModel, pixel, depth: float, normal) -> PlaneHypothesis:
    """Normalise `normal`, flip it to face the camera, and validate the depth range."""
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < PARALLEL_TOL:
        raise DomainError("zero-length normal")
    n = n / norm
    if float(n @ cam.ray(pixel)) > 0:
        n = -n
    if not cam.in_range(depth):
        raise DepthOutOfRangeError(depth, cam.d_min, cam.d_max)
    return PlaneHypothesis(depth, tuple(n))


@dataclass(frozen=True)
class FittedPlane:
    """Plane A x + B y + C z + d = 0 with unit (A, B, C)."""

    coeffs: tuple[float, float, float, float]
    inlier_count: int = 0
    rms_residual: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(4)
        if abs(float(c[:3] @ c[:3]) - 1.0) > ORTHONORMAL_TOL:
            raise DomainError("plane normal (A, B, C) must be unit length")
        if self.rms_residual < 0:
            raise DomainError("rms_residual must be >= 0")
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))

    @property
    def normal(self) -> np.ndarray:
        return np.array(self.coeffs[:3])

    @property
    def offset(self) -> float:
        return self.coeffs[3]

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def facing_camera(self) -> "FittedPlane":
        """Orient so the normal faces a camera at the origin (d > 0)."""
        if self.offset >= 0:
            return self
        return FittedPlane(tuple(-v for v in self.coeffs), self.inlier_count, self.rms_residual)

    @classmethod
    def from_hypothesis(cls, cam: CameraModel, pixel, hyp: PlaneHypothesis) -> "FittedPlane":
        """Camera-frame plane through the hypothesis point."""
        X = back_project_camera(cam, pixel, hyp.depth)
        n = hyp.n
        return cls((*n, float(-n @ X)))


def project(cam: CameraModel, X) -> tuple[np.ndarray, np.ndarray]:
    """World point(s) -> (pixel(s), depth(s))."""
    X = np.asarray(X, dtype=np.float64)
    h = X @ cam.M.T + cam.p4
    depth = np.asarray(h[..., 2])
    return h[..., :2] / depth[..., None], depth


def back_project(cam: CameraModel, pixel, depth) -> np.ndarray:
    """Pixel + depth -> world point: X = M^-1 (D p - p4)."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("depth must be > 0")
    p = np.asarray(pixel, dtype=np.float64)
    hp = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    rhs = depth[..., None] * hp - cam.p4
    return np.linalg.solve(cam.M, rhs.reshape(-1, 3).T).T.reshape(rhs.shape)


def back_project_camera(cam: CameraModel, pixel, depth) -> np.ndarray:
    """Pixel + depth -> camera-frame point ((x-cx)/fx D, (y-cy)/fy D, D)."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("depth must be > 0")
    return cam.ray(pixel) * depth[..., None]


def plane_depth_at(plane: FittedPlane, pixel, cam: CameraModel, check_range: bool = True) -> float:
    """Depth where the pixel's ray meets a camera-frame plane."""
    A, B, C, d = plane.coeffs
    x, y = float(pixel[0]), float(pixel[1])
    denom = A * (x - cam.cx) / cam.fx + B * (y - cam.cy) / cam.fy + C
    if abs(denom) < PARALLEL_TOL:
        raise ParallelRayError(f"ray through ({x}, {y}) is parallel to the plane")
    depth = -d / denom
    if check_range and not cam.in_range(depth):
        raise DepthOutOfRangeError(depth, cam.d_min, cam.d_max)
    return depth


def plane_depths(plane_coeffs: np.ndarray, pixels: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorised plane_depth_at; NaN where the ray is parallel or the depth leaves range.

    `plane_coeffs` is (4,) or (N, 4) aligned with `pixels` (N, 2).
    """
    coeffs = np.asarray(plane_coeffs, dtype=np.float64)
    rays = cam.ray(pixels)
    denom = np.einsum("...i,...i->...", rays, coeffs[..., :3])
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = -coeffs[..., 3] / denom
    bad = (np.abs(denom) < PARALLEL_TOL) | ~cam.in_range(depth)
    return np.where(bad, np.nan, depth)


def triangle_plane(v0, v1, v2) -> FittedPlane:
    """Plane through three points, normal (v1 - v0) x (v2 - v0) normalised."""
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in (v0, v1, v2))
    n = np.cross(v1 - v0, v2 - v0)
    scale = max(np.linalg.norm(v1 - v0), np.linalg.norm(v2 - v0), np.linalg.norm(v2 - v1))
    norm = np.linalg.norm(n)
    if scale == 0 or norm < PARALLEL_TOL * scale * scale:
        raise DegenerateTriangleError("triangle vertices are collinear")
    n = n / norm
    return FittedPlane((*n, float(-n @ v0)), inlier_count=3, rms_residual=0.0)


def relative_pose(ref: CameraModel, src: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """(R_rel, t_rel) mapping ref camera coordinates to src camera coordinates."""
    R_rel = src.R @ ref.R.T
    t_rel = src.t - R_rel @ ref.t
    return R_rel, t_rel


def homography(ref: CameraModel, src: CameraModel, hyp: PlaneHypothesis, pixel) -> np.ndarray:
    """Plane-induced homography ref -> src: H = K_s (R_rel - t_rel n^T / d) K_r^-1."""
    n = hyp.n
    X = back_project_camera(ref, pixel, hyp.depth)
    d = float(-n @ X)
    if abs(d) < PARALLEL_TOL:
        raise SingularWarpError("plane passes through the reference camera centre")
    R_rel, t_rel = relative_pose(ref, src)
    # Plane through the source centre collapses the warp to a line
    src_center = -R_rel.T @ t_rel
    if abs(float(n @ src_center) + d) < PARALLEL_TOL * max(1.0, abs(d)):
        raise SingularWarpError("plane passes through the source camera centre")
    return src.K @ (R_rel - np.outer(t_rel, n) / d) @ ref.K_inv


def warp(H: np.ndarray, pixel) -> np.ndarray:
    p = np.asarray(pixel, dtype=np.float64)
    h = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1) @ H.T
    return h[..., :2] / h[..., 2:3]


@dataclass(frozen=True)
class EpipolarLine:
    """Line a x + b y + c = 0 with a^2 + b^2 = 1."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if abs(self.a * self.a + self.b * self.b - 1.0) > ORTHONORMAL_TOL:
            raise DomainError("epipolar line must be normalised")

    def distance(self, pixel) -> float:
        return abs(self.a * float(pixel[0]) + self.b * float(pixel[1]) + self.c)


def epipolar_line(ref: CameraModel, src: CameraModel, pixel_in_src) -> EpipolarLine:
    """Line in the reference image holding every projection of the src pixel's ray."""
    if np.linalg.norm(ref.center - src.center) < PARALLEL_TOL:
        raise UndefinedEpipoleError("camera centres coincide")
    # Epipole and vanishing point of the ray, both homogeneous in the ref image
    epipole = ref.M @ src.center + ref.p4
    direction = src.R.T @ src.K_inv @ np.array([float(pixel_in_src[0]), float(pixel_in_src[1]), 1.0])
    vanishing = ref.M @ direction
    line = np.cross(epipole, vanishing)
    norm = np.hypot(line[0], line[1])
    if norm < PARALLEL_TOL:
        raise UndefinedEpipoleError("ray passes through the reference camera centre")
    line = line / norm
    return EpipolarLine(float(line[0]), float(line[1]), float(line[2]))


def normal_similarity(n_p, n_q) -> float:
    """Cosine similarity n_p . n_q / (|n_p| |n_q|)."""
    n_p = np.asarray(n_p, dtype=np.float64)
    n_q = np.asarray(n_q, dtype=np.float64)
    norms = np.linalg.norm(n_p) * np.linalg.norm(n_q)
    if norms < PARALLEL_TOL:
        raise DomainError("zero-length normal")
    return float(np.clip(n_p @ n_q / norms, -1.0, 1.0))


def look_at(center, target, d_min: float, d_max: float, fx: float, fy: float, cx: float, cy: float,
            down=(0.0, 1.0, 0.0)) -> CameraModel:
    """Camera at `center` looking at `target` with image y along `down`."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    if np.linalg.norm(z) < PARALLEL_TOL:
        raise GeometryError("camera centre coincides with its target")
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    if np.linalg.norm(x) < PARALLEL_TOL:
        raise GeometryError("viewing direction parallel to the down vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraModel(fx, fy, cx, cy, R, -R @ center, d_min, d_max)
