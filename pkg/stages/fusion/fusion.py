"""Consistency-checked fusion of per-view depth maps into one point cloud."""
import logging
import math

import numpy as np
from numba import njit

from core.config import FusionParams
from core.errors import DimensionError, InputError
from core.geometry import CameraModel
from core.maps import DepthNormalMap, PointCloud
from core.scene_io import ImageBuffer

logger = logging.getLogger(__name__)


@njit(cache=True)
def _to_world(K, R, t, x, y, d):
    c0 = (x - K[2]) / K[0] * d - t[0]
    c1 = (y - K[3]) / K[1] * d - t[1]
    c2 = d - t[2]
    return (
        R[0, 0] * c0 + R[1, 0] * c1 + R[2, 0] * c2,
        R[0, 1] * c0 + R[1, 1] * c1 + R[2, 1] * c2,
        R[0, 2] * c0 + R[1, 2] * c1 + R[2, 2] * c2,
    )


@njit(cache=True)
def _to_pixel(K, R, t, X0, X1, X2):
    z = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
    if z <= 0:
        return -1.0, -1.0, z
    u = K[0] * (R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]) / z + K[2]
    v = K[1] * (R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]) / z + K[3]
    return u, v, z


@njit(cache=True)
def fuse_kernel(depth, normal, dims, K, R, t, min_consistent, tol_rel, tol_px,
                consumed, out_pos, out_nrm, out_src):
    """Views in order, pixels in raster order; returns the number of points written."""
    V = depth.shape[0]
    hit_v = np.empty(V, np.int64)
    hit_x = np.empty(V, np.int64)
    hit_y = np.empty(V, np.int64)
    count = 0
    for i in range(V):
        w, h = dims[i, 0], dims[i, 1]
        for y in range(h):
            for x in range(w):
                d = depth[i, y, x]
                if consumed[i, y, x] or d <= 0:
                    continue
                X0, X1, X2 = _to_world(K[i], R[i], t[i], float(x), float(y), d)
                s0, s1, s2 = X0, X1, X2
                n = normal[i, y, x]
                m0 = R[i, 0, 0] * n[0] + R[i, 1, 0] * n[1] + R[i, 2, 0] * n[2]
                m1 = R[i, 0, 1] * n[0] + R[i, 1, 1] * n[1] + R[i, 2, 1] * n[2]
                m2 = R[i, 0, 2] * n[0] + R[i, 1, 2] * n[1] + R[i, 2, 2] * n[2]
                hits = 0
                for j in range(V):
                    if j == i:
                        continue
                    u, v, z = _to_pixel(K[j], R[j], t[j], X0, X1, X2)
                    if z <= 0:
                        continue
                    ix = int(math.floor(u + 0.5))
                    iy = int(math.floor(v + 0.5))
                    if ix < 0 or iy < 0 or ix >= dims[j, 0] or iy >= dims[j, 1]:
                        continue
                    dj = depth[j, iy, ix]
                    if consumed[j, iy, ix] or dj <= 0 or abs(z - dj) / dj > tol_rel:
                        continue
                    Y0, Y1, Y2 = _to_world(K[j], R[j], t[j], float(ix), float(iy), dj)
                    u2, v2, z2 = _to_pixel(K[i], R[i], t[i], Y0, Y1, Y2)
                    if z2 <= 0 or math.sqrt((u2 - x) ** 2 + (v2 - y) ** 2) > tol_px:
                        continue
                    hit_v[hits] = j
                    hit_x[hits] = ix
                    hit_y[hits] = iy
                    hits += 1
                    s0 += Y0
                    s1 += Y1
                    s2 += Y2
                    nj = normal[j, iy, ix]
                    m0 += R[j, 0, 0] * nj[0] + R[j, 1, 0] * nj[1] + R[j, 2, 0] * nj[2]
                    m1 += R[j, 0, 1] * nj[0] + R[j, 1, 1] * nj[1] + R[j, 2, 1] * nj[2]
                    m2 += R[j, 0, 2] * nj[0] + R[j, 1, 2] * nj[1] + R[j, 2, 2] * nj[2]
                if hits < min_consistent:
                    continue

                out_pos[count, 0] = s0 / (hits + 1)
                out_pos[count, 1] = s1 / (hits + 1)
                out_pos[count, 2] = s2 / (hits + 1)
                norm = math.sqrt(m0 * m0 + m1 * m1 + m2 * m2)
                if norm < 1e-12:
                    # no usable normal: point back along the viewing ray
                    m0 = -R[i, 2, 0]
                    m1 = -R[i, 2, 1]
                    m2 = -R[i, 2, 2]
                    norm = 1.0
                out_nrm[count, 0] = m0 / norm
                out_nrm[count, 1] = m1 / norm
                out_nrm[count, 2] = m2 / norm
                out_src[count, 0] = i
                out_src[count, 1] = x
                out_src[count, 2] = y
                consumed[i, y, x] = True
                for k in range(hits):
                    consumed[hit_v[k], hit_y[k], hit_x[k]] = True
                count += 1
    return count


def fuse(depth_maps: dict[int, DepthNormalMap], cams: dict[int, CameraModel], params: FusionParams,
         images: dict[int, ImageBuffer] | None = None) -> PointCloud:
    """One point per pixel that agrees with at least `min_consistent` other views.

    Points are the mean of the agreeing back-projections; every pixel is used at
    most once. Colours come from `images` when given, otherwise mid gray.
    """
    ids = sorted(depth_maps)
    if len(ids) < 2:
        raise InputError(f"fusion needs at least 2 views, got {len(ids)}")
    missing = [i for i in ids if i not in cams]
    if missing:
        raise InputError(f"no camera for views {missing}")

    h_max = max(depth_maps[i].height for i in ids)
    w_max = max(depth_maps[i].width for i in ids)
    depth = np.zeros((len(ids), h_max, w_max), np.float64)
    normal = np.zeros((len(ids), h_max, w_max, 3), np.float64)
    dims = np.zeros((len(ids), 2), np.int64)
    for k, i in enumerate(ids):
        m = depth_maps[i]
        if images is not None and i in images and (images[i].height, images[i].width) != m.shape:
            raise DimensionError(f"view {i}: image and depth map dimensions differ")
        depth[k, : m.height, : m.width] = m.depth
        normal[k, : m.height, : m.width] = m.normal
        dims[k] = (m.width, m.height)
    K = np.stack([[cams[i].fx, cams[i].fy, cams[i].cx, cams[i].cy] for i in ids]).astype(np.float64)
    R = np.stack([cams[i].R for i in ids])
    t = np.stack([cams[i].t for i in ids])

    capacity = int((depth > 0).sum())
    positions = np.empty((capacity, 3), np.float64)
    normals = np.empty((capacity, 3), np.float64)
    sources = np.empty((capacity, 3), np.int64)
    consumed = np.zeros(depth.shape, np.bool_)
    n = fuse_kernel(depth, normal, dims, K, R, t, params.min_consistent, params.tol_rel, params.tol_px,
                    consumed, positions, normals, sources)

    colors = np.full((n, 3), 128, np.uint8)
    if images is not None:
        for k, i in enumerate(ids):
            if i not in images:
                continue
            sel = sources[:n, 0] == k
            colors[sel] = images[i].rgb8()[sources[:n][sel, 2], sources[:n][sel, 1]]
    logger.info(f"Fused {n} points from {len(ids)} views ({capacity} candidate pixels)")
    return PointCloud(positions[:n], normals[:n], colors)
