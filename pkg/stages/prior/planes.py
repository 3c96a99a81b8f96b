"""Mask-guided plane prior: curvature filtering and RANSAC plane fitting per region."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from core.config import PriorParams
from core.errors import (
    DegenerateInputError,
    DegenerateNeighborhoodError,
    DimensionError,
    InputError,
    PlaneFitRejected,
)
from core.geometry import PARALLEL_TOL, CameraModel, FittedPlane, back_project_camera, plane_depths
from core.maps import DepthNormalMap
from core.scene_io import SegmentMask

logger = logging.getLogger(__name__)

# Eigenvalues below this fraction of the largest are numerical zero
EIGEN_RTOL = 1e-12
# Slack on the retention threshold so float noise on exact cases does not flip it
CURVATURE_SLACK = 1e-9
_CHUNK = 64


@dataclass(frozen=True)
class CurvatureEstimate:
    """Descending covariance eigenvalues and Cur = l1 / (l1 + l2 + l3)."""

    eigenvalues: tuple[float, float, float]
    curvature: float


def _eigen_curvature(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ev = np.linalg.eigvalsh(cov)[..., ::-1]
    lead = ev[..., :1]
    ev = np.where(ev < EIGEN_RTOL * lead, 0.0, ev)
    total = ev.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cur = np.where(ev[..., 0] > 0, ev[..., 0] / total, np.nan)
    return ev, cur


def pca_curvature(points, index: int, knn: int) -> CurvatureEstimate:
    """Curvature of the knn-neighbourhood of points[index], the query included."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < knn + 1:
        raise InputError(f"need {knn + 1} points for knn={knn}, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts[index], k=knn + 1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=0)
    cov = centered.T @ centered / len(nb)
    ev, cur = _eigen_curvature(cov)
    if not ev[0] > 0:
        raise DegenerateNeighborhoodError(f"neighbourhood of point {index} is a single location")
    return CurvatureEstimate(tuple(float(v) for v in ev), float(cur))


def curvature_batch(points, knn: int) -> np.ndarray:
    """Cur for every point at once; NaN for degenerate neighbourhoods."""
    pts = np.asarray(points, dtype=np.float64)
    k = min(knn + 1, len(pts))
    if k < 3:
        return np.full(len(pts), np.nan)
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    return _eigen_curvature(cov)[1]


def ransac_plane_fit(points, params: PriorParams, seed: int, region_id: int = 0) -> FittedPlane:
    """Best-consensus plane of minimal samples, refined by least squares over its inliers.

    Samples are drawn from a generator seeded by (seed, region_id).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points, got {n}")
    tol = params.ransac_inlier_tol
    if tol is None:
        tol = params.ransac_inlier_tol_rel * float(np.median(np.abs(pts[:, 2])))
    tol = max(tol, PARALLEL_TOL)

    rng = np.random.default_rng((seed, region_id))
    samples = rng.integers(0, n, size=(params.ransac_iters, 3))
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=-1)
    scale = np.max(np.stack([np.linalg.norm(b - a, axis=-1), np.linalg.norm(c - a, axis=-1),
                             np.linalg.norm(c - b, axis=-1)]), axis=0)
    valid = (scale > 0) & (norms >= PARALLEL_TOL * scale * scale)
    if not valid.any():
        raise DegenerateInputError("every minimal sample is degenerate")
    normals = normals[valid] / norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, a[valid])

    counts = np.empty(len(normals), np.int64)
    for start in range(0, len(normals), _CHUNK):
        dist = pts @ normals[start:start + _CHUNK].T + offsets[start:start + _CHUNK]
        counts[start:start + _CHUNK] = (np.abs(dist) <= tol).sum(axis=0)
    best = int(np.argmax(counts))
    inliers = np.abs(pts @ normals[best] + offsets[best]) <= tol

    # least-squares refinement over the consensus set
    sel = pts[inliers]
    centroid = sel.mean(axis=0)
    normal = np.linalg.svd(sel - centroid, full_matrices=False)[2][-1]
    offset = -float(normal @ centroid)
    residual = pts @ normal + offset
    inliers = np.abs(residual) <= tol
    count = int(inliers.sum())

    fraction = count / n
    if fraction < params.min_inlier_fraction:
        raise PlaneFitRejected(fraction, params.min_inlier_fraction)
    rms = float(np.sqrt(np.mean(residual[inliers] ** 2))) if count else 0.0
    plane = FittedPlane((*normal, offset), inlier_count=count, rms_residual=rms)
    return plane.facing_camera()


@dataclass
class RegionFit:
    """Outcome of one mask region."""

    region_id: int
    members: int
    fitted_points: int
    status: str
    inliers: int = 0
    rms: float = 0.0


def fit_region(members: np.ndarray, depth_map: DepthNormalMap, cam: CameraModel, params: PriorParams,
               seed: int, region_id: int) -> tuple[FittedPlane | None, RegionFit]:
    """Back-project confident members, drop curved points, then RANSAC."""
    xs, ys = members[:, 0], members[:, 1]
    depth = depth_map.depth[ys, xs].astype(np.float64)
    confident = (depth > 0) & (depth_map.cost[ys, xs] <= params.sam_cost_threshold)
    fit = RegionFit(region_id, len(members), 0, "skipped")
    if confident.sum() < 3:
        fit.status = "too few confident pixels"
        return None, fit

    points = back_project_camera(cam, members[confident], depth[confident])
    cur = curvature_batch(points, params.knn)
    flat = cur >= params.tau_lambda - CURVATURE_SLACK
    points = points[flat]
    fit.fitted_points = len(points)
    if len(points) < 3:
        fit.status = "too few flat points"
        return None, fit

    try:
        plane = ransac_plane_fit(points, params, seed, region_id)
    except PlaneFitRejected as e:
        fit.status = f"rejected ({e})"
        return None, fit
    except DegenerateInputError:
        fit.status = "degenerate"
        return None, fit
    if plane.offset <= PARALLEL_TOL:
        fit.status = "plane through the camera centre"
        return None, fit
    fit.status, fit.inliers, fit.rms = "accepted", plane.inlier_count, plane.rms_residual
    return plane, fit


def build_sam_prior(mask: SegmentMask, depth_map: DepthNormalMap, cam: CameraModel, params: PriorParams,
                    seed: int) -> tuple[DepthNormalMap, list[RegionFit]]:
    """One fitted plane per accepted region, assigned to every member pixel."""
    if (mask.width, mask.height) != (depth_map.width, depth_map.height):
        raise DimensionError(f"mask {mask.width}x{mask.height} != map {depth_map.width}x{depth_map.height}")
    prior = DepthNormalMap.empty(depth_map.width, depth_map.height)
    fits = []
    for region_id in mask.region_ids:
        members = mask.region_index[region_id]
        plane, fit = fit_region(members, depth_map, cam, params, seed, region_id)
        fits.append(fit)
        if plane is None:
            logger.debug(f"Region {region_id}: {fit.status}")
            continue
        depth = plane_depths(np.array(plane.coeffs), members.astype(np.float64), cam)
        ok = np.isfinite(depth)
        xs, ys = members[ok, 0], members[ok, 1]
        prior.depth[ys, xs] = depth[ok]
        prior.normal[ys, xs] = plane.normal
        logger.debug(
            f"Region {region_id}: plane {np.round(plane.coeffs, 4).tolist()}, "
            f"{plane.inlier_count}/{fit.fitted_points} inliers, {int(ok.sum())}/{len(members)} pixels"
        )
    accepted = sum(f.status == "accepted" for f in fits)
    logger.info(f"Mask prior: {accepted}/{len(fits)} regions fitted")
    return prior, fits
