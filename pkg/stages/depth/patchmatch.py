"""PatchMatch depth and normal estimation for one reference view."""
import logging
from dataclasses import dataclass

import numpy as np

from core.config import ConsistencyParams, PatchMatchConfig
from core.errors import DimensionError, InputError
from core.geometry import CameraModel, PlaneHypothesis, relative_pose
from core.maps import COST_MAX, DepthNormalMap
from core.scene_io import SceneBundle, View

from . import kernels

logger = logging.getLogger(__name__)

# RNG iteration slots; photometric sweeps use 1..iterations
GEOMETRIC_SLOT = 1000


def intrinsics(cam: CameraModel) -> np.ndarray:
    return np.array([cam.fx, cam.fy, cam.cx, cam.cy], dtype=np.float64)


def view_seed(seed: int, ref_index: int, stream: int = 0) -> int:
    """Per-reference seed so views draw independent streams.

    `stream` is `PatchMatchConfig.rng_seed`; 0 leaves the pipeline seed as is.
    """
    base = (seed * 1_000_003 + ref_index) % (1 << 63)
    return base ^ ((stream * 0x9E3779B97F4A7C15) % (1 << 63))


@dataclass
class MatchingViews:
    """Reference image plus source images and poses packed for the kernels."""

    ref: np.ndarray
    camera: CameraModel
    src: np.ndarray
    src_dims: np.ndarray
    src_K: np.ndarray
    R_rel: np.ndarray
    t_rel: np.ndarray
    src_indices: list[int]
    # Current depth of every source view, for geometric terms
    geo_depth: np.ndarray | None = None
    geo_normal: np.ndarray | None = None

    @property
    def ref_K(self) -> np.ndarray:
        return intrinsics(self.camera)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ref.shape

    @property
    def n_views(self) -> int:
        return self.src.shape[0]

    @classmethod
    def from_views(cls, ref: View, sources: list[View], src_indices: list[int] | None = None,
                   src_maps: list[DepthNormalMap] | None = None) -> "MatchingViews":
        if not sources:
            raise InputError("at least one source view is required")
        h_max = max(v.image.height for v in sources)
        w_max = max(v.image.width for v in sources)
        src = np.zeros((len(sources), h_max, w_max), np.float32)
        dims = np.zeros((len(sources), 2), np.int64)
        poses = [relative_pose(ref.camera, v.camera) for v in sources]
        for j, v in enumerate(sources):
            src[j, : v.image.height, : v.image.width] = v.image.gray()
            dims[j] = (v.image.width, v.image.height)

        geo_depth = geo_normal = None
        if src_maps is not None:
            geo_depth = np.zeros((len(sources), h_max, w_max), np.float32)
            geo_normal = np.zeros((len(sources), h_max, w_max, 3), np.float32)
            for j, (v, m) in enumerate(zip(sources, src_maps)):
                if m.shape != (v.image.height, v.image.width):
                    raise DimensionError(f"source map {m.shape} does not match its image")
                geo_depth[j, : m.height, : m.width] = m.depth
                geo_normal[j, : m.height, : m.width] = m.normal

        return cls(
            ref=np.ascontiguousarray(ref.image.gray(), dtype=np.float32),
            camera=ref.camera,
            src=src,
            src_dims=dims,
            src_K=np.stack([intrinsics(v.camera) for v in sources]),
            R_rel=np.stack([p[0] for p in poses]),
            t_rel=np.stack([p[1] for p in poses]),
            src_indices=list(src_indices if src_indices is not None else range(len(sources))),
            geo_depth=geo_depth,
            geo_normal=geo_normal,
        )

    @classmethod
    def from_bundle(cls, bundle: SceneBundle, maps: dict[int, DepthNormalMap] | None = None) -> "MatchingViews":
        """Pack the bundle's reference against its source list."""
        indices = bundle.neighbor_indices
        src_maps = [maps[i] for i in indices] if maps is not None else None
        return cls.from_views(bundle.reference, bundle.sources, indices, src_maps)


def random_init(cam: CameraModel, dims: tuple[int, int], seed: int) -> DepthNormalMap:
    """Random per-pixel hypotheses; cost is left at the cap until scored."""
    width, height = dims
    depth = np.empty((height, width), np.float64)
    normal = np.empty((height, width, 3), np.float64)
    kernels.random_init(depth, normal, intrinsics(cam), cam.d_min, cam.d_max, seed)
    return DepthNormalMap(depth, normal, np.full((height, width), COST_MAX))


def score_hypotheses(views: MatchingViews, depth: np.ndarray, normal: np.ndarray,
                     cfg: PatchMatchConfig) -> np.ndarray:
    """Photometric cost of K candidate maps, shape (K, H, W); NaN where depth <= 0.

    View weights are shared by all candidates of a pixel.
    """
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    normal = np.ascontiguousarray(normal, dtype=np.float64)
    if depth.ndim == 2:
        depth, normal = depth[None], normal[None]
    if depth.shape[1:] != views.shape:
        raise DimensionError(f"candidate maps {depth.shape[1:]} != reference {views.shape}")
    out = np.empty(depth.shape, np.float64)
    kernels.score_candidates(
        depth, normal, views.ref, views.src, views.src_dims, views.src_K, views.R_rel, views.t_rel,
        views.ref_K, cfg.patch_radius, cfg.patch_step, cfg.ncc_sigma_spatial, cfg.ncc_sigma_color,
        cfg.view_weight_scale, out,
    )
    return out


def score_map(views: MatchingViews, depth_map: DepthNormalMap, cfg: PatchMatchConfig) -> DepthNormalMap:
    """Same hypotheses, costs recomputed; pixels without depth keep the cap."""
    cost = score_hypotheses(views, depth_map.depth, depth_map.normal, cfg)[0]
    return DepthNormalMap(depth_map.depth, depth_map.normal, np.nan_to_num(cost, nan=COST_MAX))


def photometric_cost(ref: View, src: View, pixel, hyp: PlaneHypothesis, cfg: PatchMatchConfig) -> float:
    """m_j = 1 - bilateral NCC of the reference patch at `pixel` against `src`."""
    x, y = int(pixel[0]), int(pixel[1])
    gray = np.ascontiguousarray(ref.image.gray(), dtype=np.float64)
    if not (0 <= x < ref.image.width and 0 <= y < ref.image.height):
        raise InputError(f"pixel ({x}, {y}) outside the reference image")
    kmax = (2 * (cfg.patch_radius // cfg.patch_step) + 1) ** 2
    ox, oy = np.empty(kmax, np.int64), np.empty(kmax, np.int64)
    wts, rvals = np.empty(kmax), np.empty(kmax)
    n = kernels.reference_patch(gray, x, y, cfg.patch_radius, cfg.patch_step,
                                cfg.ncc_sigma_spatial, cfg.ncc_sigma_color, ox, oy, wts, rvals)
    wsum, rmean, rvar = kernels.patch_moments(n, wts, rvals)
    R_rel, t_rel = relative_pose(ref.camera, src.camera)
    n_vec = hyp.n
    return float(
        kernels.view_cost(
            n, x, y, ox, oy, wts, rvals, wsum, rmean, rvar,
            np.ascontiguousarray(src.image.gray(), dtype=np.float64), src.image.width, src.image.height,
            intrinsics(src.camera), R_rel, t_rel, intrinsics(ref.camera), hyp.depth,
            n_vec[0], n_vec[1], n_vec[2],
        )
    )


def view_weights(best_costs, scale: float = 0.3) -> np.ndarray:
    """w_j = exp(-m_best / scale); views whose best cost is capped get 0."""
    m = np.asarray(best_costs, dtype=np.float64)
    return np.where(m < COST_MAX, np.exp(-m / scale), 0.0)


def multi_view_cost(costs, weights) -> float:
    """Cost_ph = sum_j w_j m_j / sum_j w_j; the cap when no view carries weight."""
    m = np.asarray(costs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if m.shape != w.shape:
        raise DimensionError(f"{m.shape} costs vs {w.shape} weights")
    if np.any(w < 0):
        raise InputError("view weights must be >= 0")
    total = w.sum()
    if total <= 0:
        return COST_MAX
    return float((w * m).sum() / total)


def checkerboard_iteration(
    depth_map: DepthNormalMap,
    views: MatchingViews,
    cfg: PatchMatchConfig,
    iteration: int,
    seed: int,
    geometric: ConsistencyParams | None = None,
    total_cost: np.ndarray | None = None,
) -> tuple[DepthNormalMap, np.ndarray]:
    """Red then black phase. Returns the map (photometric costs) and the optimised cost.

    With `geometric` the optimised cost adds the truncated reprojection term and the
    incumbent is re-scored first, since the source depth maps may have changed. An
    incumbent that reprojects within `zero_tol` wherever it is observed is kept.
    """
    use_geo = geometric is not None
    if use_geo and views.geo_depth is None:
        raise InputError("geometric refinement needs source depth maps")
    geo_depth = views.geo_depth if use_geo else np.zeros((views.n_views, 1, 1), np.float32)
    alpha = geometric.alpha_geo if use_geo else 0.0
    tau = geometric.tau_geo if use_geo else 0.0
    anchor = geometric.zero_tol if use_geo else -1.0

    depth = depth_map.depth.astype(np.float64)
    normal = depth_map.normal.astype(np.float64)
    cost = (total_cost if total_cost is not None else depth_map.cost).astype(np.float64)
    ph = depth_map.cost.astype(np.float64)
    cam = views.camera
    for parity in (0, 1):
        depth_out, normal_out, cost_out, ph_out = depth.copy(), normal.copy(), cost.copy(), ph.copy()
        kernels.checkerboard_phase(
            parity, iteration, seed,
            views.ref, views.src, views.src_dims, views.src_K, views.R_rel, views.t_rel, views.ref_K,
            cam.d_min, cam.d_max,
            cfg.patch_radius, cfg.patch_step, cfg.ncc_sigma_spatial, cfg.ncc_sigma_color,
            cfg.view_weight_scale, cfg.propagation_stride, cfg.perturbation_fraction,
            use_geo, geo_depth, alpha, tau, anchor, use_geo,
            depth, normal, cost, depth_out, normal_out, cost_out, ph_out,
        )
        depth, normal, cost, ph = depth_out, normal_out, cost_out, ph_out
    return DepthNormalMap(depth, normal, ph), cost


def propagate_refine(
    depth_map: DepthNormalMap, views: MatchingViews, cfg: PatchMatchConfig, iteration: int = 1, seed: int = 0
) -> DepthNormalMap:
    """One photometric PatchMatch iteration; per-pixel cost never increases."""
    updated, _ = checkerboard_iteration(depth_map, views, cfg, iteration, seed)
    return updated


def estimate_depth(views: MatchingViews, cfg: PatchMatchConfig, seed: int) -> DepthNormalMap:
    """Random initialisation followed by `cfg.iterations` PatchMatch iterations."""
    height, width = views.shape
    depth_map = score_map(views, random_init(views.camera, (width, height), seed), cfg)
    logger.debug(f"init: mean cost {depth_map.cost.mean():.4f}")
    for it in range(1, cfg.iterations + 1):
        depth_map = propagate_refine(depth_map, views, cfg, it, seed)
        logger.debug(f"iteration {it}: mean cost {depth_map.cost.mean():.4f}")
    return depth_map


def estimate_view(bundle: SceneBundle, cfg: PatchMatchConfig, seed: int) -> DepthNormalMap:
    """Raw depth for the bundle's reference view."""
    views = MatchingViews.from_bundle(bundle)
    return estimate_depth(views, cfg, view_seed(seed, bundle.reference_index, cfg.rng_seed))
