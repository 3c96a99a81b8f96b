"""Raster-order global information aggregation over the prior candidate set."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from core.config import PipelineConfig
from core.errors import DimensionError, InputError
from core.maps import COST_MAX, DepthNormalMap

from stages.depth.patchmatch import MatchingViews, score_hypotheses
from stages.prior.candidates import Choice, PriorCandidateSet
from .consistency import epipolar_cost_maps, reprojection_cost_maps
from .costs import SELECTION_ORDER, HypothesisUpdateContext, baseline_cost_array

logger = logging.getLogger(__name__)

# Already-visited neighbours in raster order: left, top-left, top, top-right
NEIGHBOR_OFFSETS = ((-1, 0), (-1, -1), (0, -1), (1, -1))


@dataclass
class AggregationState:
    """Per-pixel L_agg of the winner, raster progress and the selection labels.

    `cost_ph` and `cost_geo` keep the (3, H, W) candidate costs of the last
    pass, indexed by Choice, NaN where a candidate is absent.
    """

    L: np.ndarray
    visited: np.ndarray
    choice: np.ndarray
    cost_ph: np.ndarray
    cost_geo: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def counts(self) -> dict[str, int]:
        return {c.name: int((self.choice == c).sum()) for c in Choice}


@njit(cache=True)
def _smooth(values, n):
    if n == 0:
        return 0.0
    total = 0.0
    low = values[0]
    for i in range(n):
        total += values[i]
        if values[i] < low:
            low = values[i]
    if total == 0.0:
        return 0.0
    return low / total


@njit(cache=True)
def raster_aggregate(cost_ph, cost_geo, alpha_geo, P1, P2, L, choice, visited):
    """Single-threaded recurrence; each pixel sees the final L of its visited neighbours."""
    K, H, W = cost_ph.shape
    nb = np.empty(4)
    penalties = np.array([P2, P1, 0.0])
    for y in range(H):
        for x in range(W):
            n = 0
            if x > 0:
                nb[n] = L[y, x - 1]
                n += 1
            if y > 0:
                if x > 0:
                    nb[n] = L[y - 1, x - 1]
                    n += 1
                nb[n] = L[y - 1, x]
                n += 1
                if x + 1 < W:
                    nb[n] = L[y - 1, x + 1]
                    n += 1
            smooth = _smooth(nb, n)

            best = -1
            best_total = np.inf
            best_L = 0.0
            for c in range(K - 1, -1, -1):
                ph = cost_ph[c, y, x]
                if np.isnan(ph):
                    continue
                geo = cost_geo[c, y, x]
                if np.isnan(geo):
                    geo = COST_MAX
                value = ph + alpha_geo * geo + smooth
                total = value + penalties[c]
                if total < best_total:
                    best = c
                    best_total = total
                    best_L = value
            if best < 0:
                best = 0
                best_L = COST_MAX + alpha_geo * COST_MAX + smooth
            L[y, x] = best_L
            choice[y, x] = best
            visited[y, x] = True


def baseline_select(depth: np.ndarray, normal: np.ndarray, cost_ph: np.ndarray, cost_geo: np.ndarray,
                    config: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmin of the planar-prior baseline cost over the candidates.

    The prior plane of a pixel is its mask plane, else its triangulation plane,
    else the candidate itself.
    """
    alpha = config.aggregation.alpha_geo
    cost_mph = cost_ph + alpha * np.nan_to_num(cost_geo, nan=COST_MAX)
    present = depth > 0
    prior_depth = np.where(present[Choice.SAM], depth[Choice.SAM],
                           np.where(present[Choice.TRI], depth[Choice.TRI], np.nan))
    prior_normal = np.where(present[Choice.SAM][..., None], normal[Choice.SAM],
                            np.where(present[Choice.TRI][..., None], normal[Choice.TRI], np.nan))

    best = np.full(depth.shape[1:], int(Choice.RAW), np.uint8)
    best_cost = np.full(depth.shape[1:], np.inf)
    for c in SELECTION_ORDER:
        own = np.isnan(prior_depth)
        d_p = np.where(own, depth[c], prior_depth)
        n_p = np.where(own[..., None], normal[c], prior_normal)
        with np.errstate(invalid="ignore", divide="ignore"):
            cost = baseline_cost_array(cost_mph[c], depth[c], normal[c], d_p, n_p, config.baseline)
        cost = np.where(present[c] & np.isfinite(cost_mph[c]), cost, np.inf)
        better = cost < best_cost
        best[better] = c
        best_cost[better] = cost[better]
    return best, np.take_along_axis(cost_mph, best[None].astype(np.int64), axis=0)[0]


def _geometric_costs(views: MatchingViews, depth: np.ndarray, normal: np.ndarray,
                     config: PipelineConfig) -> np.ndarray:
    if config.enable_gcec:
        return epipolar_cost_maps(views, depth, normal, config.consistency)
    return reprojection_cost_maps(views, depth, config.consistency)


def gather(candidates: PriorCandidateSet, choice: np.ndarray, cost_ph: np.ndarray) -> DepthNormalMap:
    """Winning hypothesis and its photometric cost at every pixel."""
    depth, normal = candidates.stacked()
    idx = choice[None].astype(np.int64)
    won_depth = np.take_along_axis(depth, idx, axis=0)[0]
    won_normal = np.take_along_axis(normal, idx[..., None], axis=0)[0]
    won_cost = np.take_along_axis(cost_ph, idx, axis=0)[0]
    return DepthNormalMap(won_depth, won_normal, np.nan_to_num(won_cost, nan=COST_MAX))


def sequential_pass(views: MatchingViews, candidates: PriorCandidateSet,
                    config: PipelineConfig) -> tuple[DepthNormalMap, AggregationState]:
    """Select one hypothesis per pixel from {SAM, TRI, RAW}.

    Candidates are scored up front (photometric cost for the candidate's plane
    and the geometric cost against the source views' current maps); the
    recurrence itself then only combines numbers. Later iterations feed the
    selected map back in as the raw candidate.
    """
    if candidates.shape != views.shape:
        raise DimensionError(f"candidate set {candidates.shape} != reference {views.shape}")
    if views.geo_depth is None:
        raise InputError("aggregation needs the source views' depth maps")
    params = config.aggregation
    height, width = candidates.shape

    state = None
    updated = candidates.raw
    for it in range(params.iterations):
        if it:
            candidates = PriorCandidateSet(updated, candidates.tri, candidates.sam)
        depth, normal = candidates.stacked()
        cost_ph = score_hypotheses(views, depth, normal, config.patchmatch)
        cost_geo = _geometric_costs(views, depth, normal, config)

        L = np.zeros((height, width), np.float64)
        choice = np.zeros((height, width), np.uint8)
        visited = np.zeros((height, width), np.bool_)
        if config.enable_gia:
            raster_aggregate(cost_ph, cost_geo, params.alpha_geo, params.P1, params.P2, L, choice, visited)
        else:
            choice, L = baseline_select(depth, normal, cost_ph, cost_geo, config)
            visited[:] = True
        state = AggregationState(L, visited, choice, cost_ph, cost_geo)
        updated = gather(candidates, choice, cost_ph)
        logger.debug(f"aggregation pass {it + 1}: selections {state.counts()}, mean L {L.mean():.4f}")
    return updated, state


def pixel_context(state: AggregationState, candidates: PriorCandidateSet, updated: DepthNormalMap,
                  x: int, y: int, views: MatchingViews | None = None) -> HypothesisUpdateContext:
    """What the update of (x, y) conditioned on, rebuilt from a finished pass."""
    height, width = state.shape
    if not (0 <= x < width and 0 <= y < height):
        raise InputError(f"pixel ({x}, {y}) outside the {width}x{height} map")
    choice = Choice(int(state.choice[y, x]))
    prior_map = {Choice.SAM: candidates.sam, Choice.TRI: candidates.tri}.get(choice)

    theta_n, L_n = [], []
    for dx, dy in NEIGHBOR_OFFSETS:
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny:
            hyp = updated.hypothesis(nx, ny)
            if hyp is not None:
                theta_n.append(hyp)
            L_n.append(float(state.L[ny, nx]))

    theta_i = candidates.maps()[choice].hypothesis(x, y)
    cost_geo = float(state.cost_geo[choice, y, x])
    return HypothesisUpdateContext(
        pixel=(x, y),
        choice=choice,
        theta_i=theta_i,
        theta_p=prior_map.hypothesis(x, y) if prior_map is not None else None,
        cost_ph=float(state.cost_ph[choice, y, x]),
        cost_geo=COST_MAX if math.isnan(cost_geo) else cost_geo,
        theta_n=theta_n,
        L_n=L_n,
        V_src=_visible_in(views, x, y, theta_i.depth) if views is not None and theta_i is not None else [],
    )


def _visible_in(views: MatchingViews, x: int, y: int, depth: float) -> list[bool]:
    cam = views.camera
    X = np.array([(x - cam.cx) / cam.fx * depth, (y - cam.cy) / cam.fy * depth, depth])
    flags = []
    for j in range(views.n_views):
        Y = views.R_rel[j] @ X + views.t_rel[j]
        if Y[2] <= 0:
            flags.append(False)
            continue
        fx, fy, cx, cy = views.src_K[j]
        u, v = fx * Y[0] / Y[2] + cx, fy * Y[1] / Y[2] + cy
        w, h = views.src_dims[j]
        flags.append(bool(0 <= u <= w - 1 and 0 <= v <= h - 1))
    return flags
