"""Geometric consistency: truncated reprojection error and the epipolar adaptive-threshold cost."""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from core.config import ConsistencyParams
from core.errors import DomainError
from core.geometry import (
    CameraModel,
    EpipolarLine,
    back_project,
    epipolar_line,
    normal_similarity,
    project,
    relative_pose,
)
from core.maps import COST_MAX

from stages.depth import kernels
from stages.depth.patchmatch import MatchingViews, intrinsics

# |a| or |b| below this makes c/a or c/b undefined
_AXIS_EPS = 1e-12


@dataclass(frozen=True)
class EpipolarGeoContext:
    """Distances of one reference pixel against its cycle through a source view."""

    p: tuple[float, float]
    p_H: tuple[float, float]
    line: EpipolarLine
    dist_p: float
    dist_H: float

    def __post_init__(self):
        if self.dist_p < 0 or self.dist_H < 0:
            raise DomainError("distances must be >= 0")


def _lookup_depth(src_depth: np.ndarray, u: float, v: float) -> float:
    h, w = src_depth.shape
    return float(kernels.bilinear_depth(np.ascontiguousarray(src_depth, dtype=np.float64), w, h, u, v))


def reprojection_cost(ref: CameraModel, src: CameraModel, pixel, depth_ref: float, src_depth: np.ndarray,
                      params: ConsistencyParams) -> float:
    """min(|p - p'|, tau_geo) for the ref -> src -> ref cycle; tau_geo when occluded."""
    if not depth_ref > 0:
        raise DomainError(f"depth must be > 0, got {depth_ref}")
    R_rel, t_rel = relative_pose(ref, src)
    h, w = src_depth.shape
    err = kernels.reprojection_error(
        float(pixel[0]), float(pixel[1]), float(depth_ref), intrinsics(ref), intrinsics(src), R_rel, t_rel,
        np.ascontiguousarray(src_depth, dtype=np.float64), w, h,
    )
    return float(min(err, params.tau_geo))


def epipolar_context(ref: CameraModel, src: CameraModel, pixel, depth_ref: float, src_depth: np.ndarray,
                     zero_tol: float = 0.0) -> EpipolarGeoContext | None:
    """Match q of p in src, its back-projection p_H and the epipolar line of q; None when occluded.

    Distances below `zero_tol` pixels are reported as exactly 0.
    """
    p = np.array([float(pixel[0]), float(pixel[1])])
    q, q_depth = project(src, back_project(ref, p, depth_ref))
    if not q_depth > 0:
        return None
    d_src = _lookup_depth(src_depth, q[0], q[1])
    if d_src <= 0:
        return None
    p_H, h_depth = project(ref, back_project(src, q, d_src))
    if not h_depth > 0:
        return None
    line = epipolar_line(ref, src, q)
    dist_p = line.distance(p)
    dist_H = float(np.hypot(*(p_H - p)))
    return EpipolarGeoContext(
        p=(float(p[0]), float(p[1])),
        p_H=(float(p_H[0]), float(p_H[1])),
        line=line,
        dist_p=0.0 if dist_p < zero_tol else dist_p,
        dist_H=0.0 if dist_H < zero_tol else dist_H,
    )


@njit(cache=True)
def _threshold(dist_p, dist_H, a, b, c, x1, y1, x2, y2):
    if dist_p != 0.0:
        return dist_p
    if abs(a) < _AXIS_EPS or abs(b) < _AXIS_EPS:
        return dist_H
    ca = c / a
    cb = c / b
    num = ca * (x2 - x1) - ca * (y2 - y1)
    return abs(num / math.sqrt(ca * ca + cb * cb + dist_H) * dist_H)


@njit(cache=True)
def _geo_cost(dist_H, dist_sta, v_sim, omega_geo):
    if dist_sta == 0.0:
        cost = 1.0 - v_sim if dist_H == 0.0 else COST_MAX
    elif dist_H < omega_geo * dist_sta:
        cost = dist_H / dist_sta + (1.0 - v_sim)
    else:
        cost = COST_MAX
    return min(COST_MAX, max(0.0, cost))


def adaptive_threshold(ctx: EpipolarGeoContext) -> float:
    """D_sta: D_p off the line, otherwise the printed on-line expression (magnitude)."""
    line = ctx.line
    return float(_threshold(ctx.dist_p, ctx.dist_H, line.a, line.b, line.c, *ctx.p, *ctx.p_H))


def epipolar_geo_cost(ctx: EpipolarGeoContext, n_p, n_q, params: ConsistencyParams) -> float:
    """Piecewise epipolar cost in [0, 2]."""
    v_sim = normal_similarity(n_p, n_q)
    return float(_geo_cost(ctx.dist_H, adaptive_threshold(ctx), v_sim, params.omega_geo))


@njit(cache=True, parallel=True)
def _epipolar_cost_map(cand_depth, cand_normal, src_dims, src_K, R_rel, t_rel, rK,
                       geo_depth, geo_normal, omega_geo, zero_tol, out):
    K, H, W = cand_depth.shape
    nv = src_K.shape[0]
    for y in prange(H):
        for x in range(W):
            for c in range(K):
                D = cand_depth[c, y, x]
                if D <= 0:
                    out[c, y, x] = np.nan
                    continue
                total = 0.0
                for j in range(nv):
                    total += _view_epipolar_cost(
                        x, y, D, cand_normal[c, y, x], src_dims[j, 0], src_dims[j, 1], src_K[j],
                        R_rel[j], t_rel[j], rK, geo_depth[j], geo_normal[j], omega_geo, zero_tol,
                    )
                out[c, y, x] = total / nv


@njit(cache=True)
def _view_epipolar_cost(x, y, D, n_p, sw, sh, sK, R, t, rK, sdepth, snormal, omega_geo, zero_tol):
    X0 = (x - rK[2]) / rK[0] * D
    X1 = (y - rK[3]) / rK[1] * D
    X2 = D
    Y0 = R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]
    Y1 = R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]
    Y2 = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
    if Y2 <= 0:
        return COST_MAX
    qu = sK[0] * Y0 / Y2 + sK[2]
    qv = sK[1] * Y1 / Y2 + sK[3]
    ds = kernels.bilinear_depth(sdepth, sw, sh, qu, qv)
    if ds <= 0:
        return COST_MAX

    # q's ray in the reference frame: direction R^T K_s^-1 q, through the source centre -R^T t
    r0 = (qu - sK[2]) / sK[0]
    r1 = (qv - sK[3]) / sK[1]
    d0 = R[0, 0] * r0 + R[1, 0] * r1 + R[2, 0]
    d1 = R[0, 1] * r0 + R[1, 1] * r1 + R[2, 1]
    d2 = R[0, 2] * r0 + R[1, 2] * r1 + R[2, 2]
    c0 = -(R[0, 0] * t[0] + R[1, 0] * t[1] + R[2, 0] * t[2])
    c1 = -(R[0, 1] * t[0] + R[1, 1] * t[1] + R[2, 1] * t[2])
    c2 = -(R[0, 2] * t[0] + R[1, 2] * t[1] + R[2, 2] * t[2])

    # p_H: the point at source depth ds on that ray
    B0 = c0 + d0 * ds
    B1 = c1 + d1 * ds
    B2 = c2 + d2 * ds
    if B2 <= 0:
        return COST_MAX
    x2 = rK[0] * B0 / B2 + rK[2]
    y2 = rK[1] * B1 / B2 + rK[3]

    # epipolar line = epipole x vanishing point, both in homogeneous reference pixels
    e0 = rK[0] * c0 + rK[2] * c2
    e1 = rK[1] * c1 + rK[3] * c2
    e2 = c2
    v0 = rK[0] * d0 + rK[2] * d2
    v1 = rK[1] * d1 + rK[3] * d2
    v2 = d2
    la = e1 * v2 - e2 * v1
    lb = e2 * v0 - e0 * v2
    lc = e0 * v1 - e1 * v0
    norm = math.sqrt(la * la + lb * lb)
    if norm < 1e-12:
        return COST_MAX
    la /= norm
    lb /= norm
    lc /= norm

    dist_p = abs(la * x + lb * y + lc)
    dist_H = math.sqrt((x2 - x) ** 2 + (y2 - y) ** 2)
    if dist_p < zero_tol:
        dist_p = 0.0
    if dist_H < zero_tol:
        dist_H = 0.0
    dist_sta = _threshold(dist_p, dist_H, la, lb, lc, float(x), float(y), x2, y2)

    # source normal at the nearest pixel, rotated into the reference frame
    iu = min(max(int(qu + 0.5), 0), sw - 1)
    iv = min(max(int(qv + 0.5), 0), sh - 1)
    s0 = snormal[iv, iu, 0]
    s1 = snormal[iv, iu, 1]
    s2 = snormal[iv, iu, 2]
    n0 = R[0, 0] * s0 + R[1, 0] * s1 + R[2, 0] * s2
    n1 = R[0, 1] * s0 + R[1, 1] * s1 + R[2, 1] * s2
    n2 = R[0, 2] * s0 + R[1, 2] * s1 + R[2, 2] * s2
    norms = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2) * math.sqrt(
        n_p[0] * n_p[0] + n_p[1] * n_p[1] + n_p[2] * n_p[2])
    if norms < 1e-12:
        return COST_MAX
    v_sim = min(1.0, max(-1.0, (n0 * n_p[0] + n1 * n_p[1] + n2 * n_p[2]) / norms))
    return _geo_cost(dist_H, dist_sta, v_sim, omega_geo)


def epipolar_cost_maps(views: MatchingViews, depth: np.ndarray, normal: np.ndarray,
                       params: ConsistencyParams) -> np.ndarray:
    """Mean epipolar cost over source views for K candidate maps; NaN where depth <= 0."""
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    normal = np.ascontiguousarray(normal, dtype=np.float64)
    if depth.ndim == 2:
        depth, normal = depth[None], normal[None]
    out = np.empty(depth.shape, np.float64)
    _epipolar_cost_map(depth, normal, views.src_dims, views.src_K, views.R_rel, views.t_rel, views.ref_K,
                       views.geo_depth.astype(np.float64), views.geo_normal.astype(np.float64),
                       params.omega_geo, params.zero_tol, out)
    return out


def reprojection_cost_maps(views: MatchingViews, depth: np.ndarray, params: ConsistencyParams) -> np.ndarray:
    """Truncated reprojection error mapped onto [0, 2] and averaged over source views."""
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        depth = depth[None]
    out = np.empty(depth.shape, np.float64)
    per_view = np.empty((views.n_views,) + depth.shape[1:], np.float64)
    geo = views.geo_depth.astype(np.float64)
    for c in range(depth.shape[0]):
        kernels.reprojection_map(depth[c], views.src_dims, views.src_K, views.R_rel, views.t_rel,
                                 views.ref_K, geo, params.tau_geo, per_view)
        out[c] = np.where(depth[c] > 0, COST_MAX * per_view.mean(axis=0) / params.tau_geo, np.nan)
    return out
