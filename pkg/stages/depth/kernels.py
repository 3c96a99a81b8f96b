"""Numba kernels for plane-hypothesis matching.

Every kernel writes into caller-provided arrays and loops rows with `prange`.
Pixels only read shared inputs, so results do not depend on the thread count.

Camera intrinsics travel as (fx, fy, cx, cy) float64 vectors; the pose of a
source view relative to the reference as (R_rel, t_rel), mapping reference
camera coordinates to source camera coordinates.
"""
import math

import numpy as np
from numba import njit, prange

COST_MAX = 2.0
VAR_EPS = 1e-7
N_CANDIDATES = 12

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def uniform(seed, iteration, x, y, k):
    """Counter-based uniform in [0, 1) keyed by (seed, iteration, x, y, k)."""
    z = _mix(np.uint64(seed) + _GOLDEN)
    z = _mix(z + _GOLDEN + np.uint64(iteration))
    z = _mix(z + _GOLDEN + np.uint64(x))
    z = _mix(z + _GOLDEN + np.uint64(y))
    z = _mix(z + _GOLDEN + np.uint64(k))
    return float(z >> np.uint64(11)) * _TO_UNIT


@njit(cache=True)
def bilinear(img, w, h, u, v):
    """Bilinear sample; NaN outside [0, w-1] x [0, h-1]."""
    if not (u >= 0.0 and v >= 0.0 and u <= w - 1 and v <= h - 1):
        return np.nan
    x0 = int(u)
    y0 = int(v)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax = u - x0
    ay = v - y0
    top = (1.0 - ax) * img[y0, x0] + ax * img[y0, x1]
    bottom = (1.0 - ax) * img[y1, x0] + ax * img[y1, x1]
    return (1.0 - ay) * top + ay * bottom


@njit(cache=True)
def bilinear_depth(depth, w, h, u, v):
    """Bilinear depth lookup; -1 when out of bounds or any corner lacks depth."""
    if not (u >= 0.0 and v >= 0.0 and u <= w - 1 and v <= h - 1):
        return -1.0
    x0 = int(u)
    y0 = int(v)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    d00 = depth[y0, x0]
    d01 = depth[y0, x1]
    d10 = depth[y1, x0]
    d11 = depth[y1, x1]
    if d00 <= 0 or d01 <= 0 or d10 <= 0 or d11 <= 0:
        return -1.0
    ax = u - x0
    ay = v - y0
    return (1.0 - ay) * ((1.0 - ax) * d00 + ax * d01) + ay * ((1.0 - ax) * d10 + ax * d11)


@njit(cache=True)
def random_normal(rx, ry, rz, u1, u2):
    """Uniform unit normal flipped to face a viewing ray."""
    z = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = math.sqrt(max(0.0, 1.0 - z * z))
    nx = s * math.cos(phi)
    ny = s * math.sin(phi)
    if nx * rx + ny * ry + z * rz > 0:
        return -nx, -ny, -z
    return nx, ny, z


@njit(cache=True, parallel=True)
def random_init(depth, normal, ref_K, d_min, d_max, seed):
    """Uniform depths in [d_min, d_max] and camera-facing normals."""
    H, W = depth.shape
    for y in prange(H):
        for x in range(W):
            rx = (x - ref_K[2]) / ref_K[0]
            ry = (y - ref_K[3]) / ref_K[1]
            depth[y, x] = d_min + (d_max - d_min) * uniform(seed, 0, x, y, 0)
            nx, ny, nz = random_normal(rx, ry, 1.0, uniform(seed, 0, x, y, 1), uniform(seed, 0, x, y, 2))
            normal[y, x, 0] = nx
            normal[y, x, 1] = ny
            normal[y, x, 2] = nz


@njit(cache=True)
def reference_patch(ref, x, y, radius, step, sigma_spatial, sigma_color, ox, oy, wts, rvals):
    """Fill sample offsets, bilateral weights and intensities; returns the sample count.

    Samples falling outside the reference image are dropped.
    """
    h, w = ref.shape
    center = ref[y, x]
    k = radius // step
    n = 0
    for dy in range(-k, k + 1):
        for dx in range(-k, k + 1):
            qx = x + dx * step
            qy = y + dy * step
            if qx < 0 or qy < 0 or qx >= w or qy >= h:
                continue
            val = ref[qy, qx]
            ds2 = float((dx * step) ** 2 + (dy * step) ** 2)
            dc = val - center
            wts[n] = math.exp(-ds2 / (2.0 * sigma_spatial ** 2)) * math.exp(-dc * dc / (2.0 * sigma_color ** 2))
            ox[n] = dx * step
            oy[n] = dy * step
            rvals[n] = val
            n += 1
    return n


@njit(cache=True)
def patch_moments(n, wts, rvals):
    """(weight sum, weighted mean, weighted variance) of the reference samples."""
    wsum = 0.0
    s = 0.0
    ss = 0.0
    for i in range(n):
        wsum += wts[i]
        s += wts[i] * rvals[i]
        ss += wts[i] * rvals[i] * rvals[i]
    mean = s / wsum
    return wsum, mean, ss / wsum - mean * mean


@njit(cache=True)
def view_cost(n, px, py, ox, oy, wts, rvals, wsum, rmean, rvar,
              src, sw, sh, sK, R, t, rK, D, nx, ny, nz):
    """1 - bilateral NCC between the reference patch and its plane-induced warp into one source.

    Returns COST_MAX when the warp leaves the source image, crosses behind either
    camera or either patch has (near) zero variance.
    """
    if rvar < VAR_EPS:
        return COST_MAX
    rpx = (px - rK[2]) / rK[0]
    rpy = (py - rK[3]) / rK[1]
    ndotp = nx * rpx + ny * rpy + nz
    if ndotp >= 0:
        return COST_MAX
    # n . X = n . X_p for every point X on the plane
    nX = ndotp * D
    s_sum = 0.0
    ss = 0.0
    rs = 0.0
    for i in range(n):
        rqx = (px + ox[i] - rK[2]) / rK[0]
        rqy = (py + oy[i] - rK[3]) / rK[1]
        nq = nx * rqx + ny * rqy + nz
        if nq >= 0:
            return COST_MAX
        tq = nX / nq
        X0 = rqx * tq
        X1 = rqy * tq
        X2 = tq
        Y0 = R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]
        Y1 = R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]
        Y2 = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
        if Y2 <= 0:
            return COST_MAX
        val = bilinear(src, sw, sh, sK[0] * Y0 / Y2 + sK[2], sK[1] * Y1 / Y2 + sK[3])
        if np.isnan(val):
            return COST_MAX
        wi = wts[i]
        s_sum += wi * val
        ss += wi * val * val
        rs += wi * rvals[i] * val
    smean = s_sum / wsum
    svar = ss / wsum - smean * smean
    if svar < VAR_EPS:
        return COST_MAX
    ncc = (rs / wsum - rmean * smean) / math.sqrt(rvar * svar)
    return min(COST_MAX, max(0.0, 1.0 - ncc))


@njit(cache=True)
def reprojection_error(px, py, D, rK, sK, R, t, sdepth, sw, sh):
    """Pixel distance of the ref -> src -> ref depth cycle; inf when the cycle breaks."""
    X0 = (px - rK[2]) / rK[0] * D
    X1 = (py - rK[3]) / rK[1] * D
    X2 = D
    Y0 = R[0, 0] * X0 + R[0, 1] * X1 + R[0, 2] * X2 + t[0]
    Y1 = R[1, 0] * X0 + R[1, 1] * X1 + R[1, 2] * X2 + t[1]
    Y2 = R[2, 0] * X0 + R[2, 1] * X1 + R[2, 2] * X2 + t[2]
    if Y2 <= 0:
        return np.inf
    u = sK[0] * Y0 / Y2 + sK[2]
    v = sK[1] * Y1 / Y2 + sK[3]
    ds = bilinear_depth(sdepth, sw, sh, u, v)
    if ds <= 0:
        return np.inf
    # back into the source frame, then into the reference frame with R^T (Y - t)
    Z0 = (u - sK[2]) / sK[0] * ds - t[0]
    Z1 = (v - sK[3]) / sK[1] * ds - t[1]
    Z2 = ds - t[2]
    B0 = R[0, 0] * Z0 + R[1, 0] * Z1 + R[2, 0] * Z2
    B1 = R[0, 1] * Z0 + R[1, 1] * Z1 + R[2, 1] * Z2
    B2 = R[0, 2] * Z0 + R[1, 2] * Z1 + R[2, 2] * Z2
    if B2 <= 0:
        return np.inf
    du = rK[0] * B0 / B2 + rK[2] - px
    dv = rK[1] * B1 / B2 + rK[3] - py
    return math.sqrt(du * du + dv * dv)


@njit(cache=True)
def aggregate_views(m, valid, nc, nv, view_scale, out):
    """Weighted mean over views with w_j = exp(-min_c m[c, j] / scale).

    Views whose best cost sits at the cap get zero weight; with no usable view
    every valid candidate costs COST_MAX. Invalid candidates get +inf.
    """
    wsum = 0.0
    weights = np.zeros(nv)
    for j in range(nv):
        best = COST_MAX
        for c in range(nc):
            if valid[c] and m[c, j] < best:
                best = m[c, j]
        if best < COST_MAX:
            weights[j] = math.exp(-best / view_scale)
            wsum += weights[j]
    for c in range(nc):
        if not valid[c]:
            out[c] = np.inf
        elif wsum <= 0:
            out[c] = COST_MAX
        else:
            s = 0.0
            for j in range(nv):
                s += weights[j] * m[c, j]
            out[c] = s / wsum


@njit(cache=True)
def _transfer(depth, normal, sx, sy, x, y, rK, d_min, d_max, cd, cn, valid, k):
    """Candidate k = plane of pixel (sx, sy) evaluated on the ray of (x, y)."""
    H, W = depth.shape
    valid[k] = False
    if sx < 0 or sy < 0 or sx >= W or sy >= H:
        return
    D = depth[sy, sx]
    if D <= 0:
        return
    nx = normal[sy, sx, 0]
    ny = normal[sy, sx, 1]
    nz = normal[sy, sx, 2]
    ns = nx * (sx - rK[2]) / rK[0] + ny * (sy - rK[3]) / rK[1] + nz
    np_ = nx * (x - rK[2]) / rK[0] + ny * (y - rK[3]) / rK[1] + nz
    if np_ >= -1e-12:
        return
    Dp = D * ns / np_
    if Dp < d_min or Dp > d_max:
        return
    cd[k] = Dp
    cn[k, 0] = nx
    cn[k, 1] = ny
    cn[k, 2] = nz
    valid[k] = True


@njit(cache=True, parallel=True)
def checkerboard_phase(parity, iteration, seed,
                       ref, src, src_dims, src_K, R_rel, t_rel, rK, d_min, d_max,
                       radius, step, sigma_spatial, sigma_color, view_scale, stride, perturb,
                       use_geo, geo_depth, alpha_geo, tau_geo, anchor_tol, rescore_incumbent,
                       depth_in, normal_in, cost_in, depth_out, normal_out, cost_out, ph_out):
    """One red (parity 0) or black (parity 1) half-sweep.

    Reads only the *_in snapshot and writes pixels with (x + y) % 2 == parity.
    Candidates: incumbent, 4 axial neighbours, 4 diagonal neighbours at
    (+-stride, +-stride), depth-perturbed, normal-perturbed and random. The best
    candidate replaces the incumbent only when strictly cheaper than the stored
    cost (or the freshly re-scored incumbent when `rescore_incumbent`).
    With `use_geo` each candidate adds alpha_geo * sum_j min(reprojection_j, tau_geo).
    A re-scored incumbent that reprojects within `anchor_tol` in some view and in
    every other view either as well or beyond tau_geo is geometrically settled
    and kept as is.
    """
    H, W = depth_in.shape
    nv = src.shape[0]
    kmax = (2 * (radius // step) + 1) ** 2
    for y in prange(H):
        ox = np.empty(kmax, np.int64)
        oy = np.empty(kmax, np.int64)
        wts = np.empty(kmax)
        rvals = np.empty(kmax)
        cd = np.empty(N_CANDIDATES)
        cn = np.empty((N_CANDIDATES, 3))
        valid = np.zeros(N_CANDIDATES, np.bool_)
        m = np.empty((N_CANDIDATES, nv))
        costs = np.empty(N_CANDIDATES)
        for x in range((y + parity) % 2, W, 2):
            rx = (x - rK[2]) / rK[0]
            ry = (y - rK[3]) / rK[1]
            D0 = depth_in[y, x]

            cd[0] = D0
            cn[0, 0] = normal_in[y, x, 0]
            cn[0, 1] = normal_in[y, x, 1]
            cn[0, 2] = normal_in[y, x, 2]
            valid[0] = True
            _transfer(depth_in, normal_in, x - 1, y, x, y, rK, d_min, d_max, cd, cn, valid, 1)
            _transfer(depth_in, normal_in, x + 1, y, x, y, rK, d_min, d_max, cd, cn, valid, 2)
            _transfer(depth_in, normal_in, x, y - 1, x, y, rK, d_min, d_max, cd, cn, valid, 3)
            _transfer(depth_in, normal_in, x, y + 1, x, y, rK, d_min, d_max, cd, cn, valid, 4)
            _transfer(depth_in, normal_in, x - stride, y - stride, x, y, rK, d_min, d_max, cd, cn, valid, 5)
            _transfer(depth_in, normal_in, x + stride, y - stride, x, y, rK, d_min, d_max, cd, cn, valid, 6)
            _transfer(depth_in, normal_in, x - stride, y + stride, x, y, rK, d_min, d_max, cd, cn, valid, 7)
            _transfer(depth_in, normal_in, x + stride, y + stride, x, y, rK, d_min, d_max, cd, cn, valid, 8)

            # refinement: perturbations shrink with the iteration
            scale = perturb * 0.5 ** iteration
            Dp = D0 * (1.0 + scale * (2.0 * uniform(seed, iteration, x, y, 0) - 1.0))
            cd[9] = min(d_max, max(d_min, Dp))
            cn[9, 0] = cn[0, 0]
            cn[9, 1] = cn[0, 1]
            cn[9, 2] = cn[0, 2]
            valid[9] = True

            px_ = cn[0, 0] + scale * (2.0 * uniform(seed, iteration, x, y, 1) - 1.0)
            py_ = cn[0, 1] + scale * (2.0 * uniform(seed, iteration, x, y, 2) - 1.0)
            pz_ = cn[0, 2] + scale * (2.0 * uniform(seed, iteration, x, y, 3) - 1.0)
            norm = math.sqrt(px_ * px_ + py_ * py_ + pz_ * pz_)
            valid[10] = norm > 1e-12 and (px_ * rx + py_ * ry + pz_) < 0
            if valid[10]:
                cd[10] = D0
                cn[10, 0] = px_ / norm
                cn[10, 1] = py_ / norm
                cn[10, 2] = pz_ / norm

            cd[11] = d_min + (d_max - d_min) * uniform(seed, iteration, x, y, 4)
            rn0, rn1, rn2 = random_normal(rx, ry, 1.0, uniform(seed, iteration, x, y, 5),
                                          uniform(seed, iteration, x, y, 6))
            cn[11, 0] = rn0
            cn[11, 1] = rn1
            cn[11, 2] = rn2
            valid[11] = True

            n = reference_patch(ref, x, y, radius, step, sigma_spatial, sigma_color, ox, oy, wts, rvals)
            wsum, rmean, rvar = patch_moments(n, wts, rvals)
            for c in range(N_CANDIDATES):
                if not valid[c]:
                    continue
                for j in range(nv):
                    m[c, j] = view_cost(n, x, y, ox, oy, wts, rvals, wsum, rmean, rvar,
                                        src[j], src_dims[j, 0], src_dims[j, 1], src_K[j],
                                        R_rel[j], t_rel[j], rK, cd[c], cn[c, 0], cn[c, 1], cn[c, 2])
            aggregate_views(m, valid, N_CANDIDATES, nv, view_scale, costs)

            best = 0
            best_ph = costs[0]
            best_total = costs[0]
            threshold = cost_in[y, x]
            settled = False
            for c in range(N_CANDIDATES):
                if not valid[c]:
                    continue
                total = costs[c]
                if use_geo:
                    g = 0.0
                    agree = 0
                    conflict = 0
                    for j in range(nv):
                        e = reprojection_error(x, y, cd[c], rK, src_K[j], R_rel[j], t_rel[j],
                                               geo_depth[j], src_dims[j, 0], src_dims[j, 1])
                        g += min(e, tau_geo)
                        if e <= anchor_tol:
                            agree += 1
                        elif e < tau_geo:
                            conflict += 1
                    total += alpha_geo * g
                    if c == 0 and rescore_incumbent:
                        settled = agree > 0 and conflict == 0
                if c == 0:
                    best_ph = costs[0]
                    best_total = total
                    if rescore_incumbent:
                        threshold = total
                elif total < best_total and not settled:
                    best = c
                    best_ph = costs[c]
                    best_total = total

            if best_total < threshold or (rescore_incumbent and best == 0):
                depth_out[y, x] = cd[best]
                normal_out[y, x, 0] = cn[best, 0]
                normal_out[y, x, 1] = cn[best, 1]
                normal_out[y, x, 2] = cn[best, 2]
                cost_out[y, x] = best_total
                ph_out[y, x] = best_ph


@njit(cache=True, parallel=True)
def score_candidates(cand_depth, cand_normal, ref, src, src_dims, src_K, R_rel, t_rel, rK,
                     radius, step, sigma_spatial, sigma_color, view_scale, out):
    """Photometric cost of K per-pixel hypotheses sharing per-pixel view weights.

    A candidate with depth <= 0 is absent and gets NaN.
    """
    K, H, W = cand_depth.shape
    nv = src.shape[0]
    kmax = (2 * (radius // step) + 1) ** 2
    for y in prange(H):
        ox = np.empty(kmax, np.int64)
        oy = np.empty(kmax, np.int64)
        wts = np.empty(kmax)
        rvals = np.empty(kmax)
        valid = np.zeros(K, np.bool_)
        m = np.empty((K, nv))
        costs = np.empty(K)
        for x in range(W):
            any_valid = False
            for c in range(K):
                valid[c] = cand_depth[c, y, x] > 0
                any_valid = any_valid or valid[c]
            if not any_valid:
                for c in range(K):
                    out[c, y, x] = np.nan
                continue
            n = reference_patch(ref, x, y, radius, step, sigma_spatial, sigma_color, ox, oy, wts, rvals)
            wsum, rmean, rvar = patch_moments(n, wts, rvals)
            for c in range(K):
                if not valid[c]:
                    continue
                for j in range(nv):
                    m[c, j] = view_cost(n, x, y, ox, oy, wts, rvals, wsum, rmean, rvar,
                                        src[j], src_dims[j, 0], src_dims[j, 1], src_K[j],
                                        R_rel[j], t_rel[j], rK, cand_depth[c, y, x],
                                        cand_normal[c, y, x, 0], cand_normal[c, y, x, 1],
                                        cand_normal[c, y, x, 2])
            aggregate_views(m, valid, K, nv, view_scale, costs)
            for c in range(K):
                out[c, y, x] = costs[c] if valid[c] else np.nan


@njit(cache=True, parallel=True)
def reprojection_map(depth, src_dims, src_K, R_rel, t_rel, rK, geo_depth, tau_geo, out):
    """Per-pixel, per-source truncated reprojection error; tau_geo where depth is absent."""
    H, W = depth.shape
    nv = src_K.shape[0]
    for y in prange(H):
        for x in range(W):
            for j in range(nv):
                if depth[y, x] <= 0:
                    out[j, y, x] = tau_geo
                else:
                    e = reprojection_error(x, y, depth[y, x], rK, src_K[j], R_rel[j], t_rel[j],
                                           geo_depth[j], src_dims[j, 0], src_dims[j, 1])
                    out[j, y, x] = min(e, tau_geo)
