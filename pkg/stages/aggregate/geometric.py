"""Final PatchMatch pass with the truncated reprojection term."""
import logging

import numpy as np

from core.config import PipelineConfig
from core.errors import InputError
from core.maps import DepthNormalMap
from core.scene_io import SceneBundle

from stages.depth.patchmatch import GEOMETRIC_SLOT, MatchingViews, checkerboard_iteration, view_seed

logger = logging.getLogger(__name__)


def geometric_sweep(maps: dict[int, DepthNormalMap], bundle: SceneBundle, config: PipelineConfig,
                    sweep: int) -> tuple[dict[int, DepthNormalMap], dict[int, np.ndarray]]:
    """One iteration for every reference view against a frozen snapshot of all maps.

    Returns the updated maps and their combined (photometric + geometric) costs.
    """
    updated, totals = {}, {}
    for ref in sorted(maps):
        views = MatchingViews.from_bundle(bundle.with_reference(ref), maps)
        updated[ref], totals[ref] = checkerboard_iteration(
            maps[ref], views, config.patchmatch, GEOMETRIC_SLOT + sweep,
            view_seed(config.seed, ref, config.patchmatch.rng_seed), geometric=config.consistency,
        )
    return updated, totals


def final_geometric_pass(bundle: SceneBundle, maps: dict[int, DepthNormalMap],
                         config: PipelineConfig) -> dict[int, DepthNormalMap]:
    """`patchmatch.geometric_iterations` sweeps; each view reads the others' maps from the previous sweep."""
    missing = [i for i in bundle.reference_ids if i not in maps]
    if missing:
        raise InputError(f"no depth map for views {missing}")
    for sweep in range(config.patchmatch.geometric_iterations):
        maps, totals = geometric_sweep(maps, bundle, config, sweep)
        mean = np.mean([t.mean() for t in totals.values()])
        logger.debug(f"geometric sweep {sweep + 1}: mean combined cost {mean:.4f}")
    return maps
