"""Triangulation prior: planes of a Delaunay mesh over confident raw depths."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from core.config import PriorParams
from core.geometry import PARALLEL_TOL, CameraModel, back_project_camera, plane_depths
from core.maps import DepthNormalMap

logger = logging.getLogger(__name__)


@dataclass
class SparsePointSet:
    """Confident pixels with their depth and camera-frame 3D point."""

    pixels: np.ndarray
    depth: np.ndarray
    points: np.ndarray
    source_cost: np.ndarray

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def empty(self) -> bool:
        return len(self) == 0


def sparsify(depth_map: DepthNormalMap, cam: CameraModel, params: PriorParams) -> SparsePointSet:
    """Keep exactly the pixels with cost <= threshold (and a depth)."""
    keep = (depth_map.cost <= params.sparsify_cost_threshold) & depth_map.reliable
    ys, xs = np.nonzero(keep)
    pixels = np.stack([xs, ys], axis=-1).astype(np.int64)
    depth = depth_map.depth[ys, xs].astype(np.float64)
    points = back_project_camera(cam, pixels, depth) if len(pixels) else np.zeros((0, 3))
    return SparsePointSet(pixels, depth, points, depth_map.cost[ys, xs].astype(np.float32))


def triangle_planes(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Planes of (T, 3, 3) triangles as (T, 4) camera-facing coefficients plus a validity mask."""
    v0, v1, v2 = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n, axis=-1)
    scale = np.max(
        np.stack([np.linalg.norm(v1 - v0, axis=-1), np.linalg.norm(v2 - v0, axis=-1),
                  np.linalg.norm(v2 - v1, axis=-1)]),
        axis=0,
    )
    ok = (scale > 0) & (norm >= PARALLEL_TOL * scale * scale)
    n = np.where(ok[:, None], n / np.where(norm > 0, norm, 1.0)[:, None], 0.0)
    d = -np.einsum("ij,ij->i", n, v0)
    # camera at the origin sees the front side when d > 0
    sign = np.where(d < 0, -1.0, 1.0)
    coeffs = np.concatenate([n * sign[:, None], (d * sign)[:, None]], axis=-1)
    return coeffs, ok & (np.abs(d) > PARALLEL_TOL)


def delaunay_prior(sparse: SparsePointSet, cam: CameraModel, dims: tuple[int, int]) -> DepthNormalMap:
    """Per-pixel plane of the enclosing triangle; depth 0 outside the hull."""
    width, height = dims
    prior = DepthNormalMap.empty(width, height)
    if len(sparse) < 3:
        logger.info(f"Triangulation prior absent: {len(sparse)} sparse points")
        return prior
    try:
        tri = Delaunay(sparse.pixels.astype(np.float64))
    except QhullError:
        logger.info("Triangulation prior absent: sparse points are collinear")
        return prior

    coeffs, ok = triangle_planes(sparse.points[tri.simplices])
    ys, xs = np.mgrid[0:height, 0:width]
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)
    simplex = tri.find_simplex(pixels)
    inside = simplex >= 0
    inside[inside] = ok[simplex[inside]]

    idx = np.nonzero(inside)[0]
    plane = coeffs[simplex[idx]]
    depth = plane_depths(plane, pixels[idx], cam)
    good = np.isfinite(depth)
    idx, plane, depth = idx[good], plane[good], depth[good]

    prior.depth.ravel()[idx] = depth
    prior.normal.reshape(-1, 3)[idx] = plane[:, :3]
    logger.info(
        f"Triangulation prior: {len(tri.simplices)} triangles ({int((~ok).sum())} degenerate), "
        f"{len(idx)}/{width * height} pixels covered"
    )
    return prior
