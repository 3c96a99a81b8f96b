"""Point cloud and depth map evaluation against ground truth."""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from core.errors import DimensionError, InputError, MetricsUndefinedError
from core.maps import DepthNormalMap, PointCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CloudMetrics:
    """Percentages in [0, 100] at tolerance `tau` (scene units)."""

    completeness: float
    accuracy: float
    f1: float
    tau: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def f1_score(accuracy: float, completeness: float) -> float:
    total = accuracy + completeness
    return 2.0 * accuracy * completeness / total if total > 0 else 0.0


def _within(query: np.ndarray, reference: np.ndarray, tau: float) -> np.ndarray:
    dist, _ = cKDTree(reference).query(query, k=1, distance_upper_bound=tau * (1 + 1e-12))
    return dist <= tau


def evaluate_cloud(est: PointCloud, gt: PointCloud, tau: float) -> CloudMetrics:
    """Nearest-neighbour accuracy and completeness in both directions."""
    if not tau > 0:
        raise InputError(f"tau must be > 0, got {tau}")
    if len(gt) == 0:
        raise MetricsUndefinedError("ground truth cloud is empty")
    if len(est) == 0:
        return CloudMetrics(0.0, 0.0, 0.0, tau)
    accuracy = 100.0 * float(_within(est.positions, gt.positions, tau).mean())
    completeness = 100.0 * float(_within(gt.positions, est.positions, tau).mean())
    return CloudMetrics(completeness, accuracy, f1_score(accuracy, completeness), tau)


def evaluate_depth(est: DepthNormalMap, gt_depth: np.ndarray, rel_threshold: float,
                   region: np.ndarray | None = None) -> tuple[float, float]:
    """(fraction of pixels within `rel_threshold` relative error, mean absolute relative error).

    Only pixels with ground truth count; `region` narrows them further. Pixels
    without an estimate count as misses with relative error 1.
    """
    gt = np.asarray(gt_depth, dtype=np.float64)
    if gt.shape != est.shape:
        raise DimensionError(f"estimate {est.shape} != ground truth {gt.shape}")
    valid = gt > 0
    if region is not None:
        if region.shape != gt.shape:
            raise DimensionError(f"region {region.shape} != ground truth {gt.shape}")
        valid &= region.astype(bool)
    if not valid.any():
        raise MetricsUndefinedError("no pixel with ground truth depth")
    d = est.depth.astype(np.float64)[valid]
    g = gt[valid]
    rel = np.where(d > 0, np.abs(d - g) / g, 1.0)
    return float((rel <= rel_threshold).mean()), float(rel.mean())


def format_report(values: dict[str, float]) -> str:
    """Flat `key=value` lines in key order."""
    return "".join(f"{key}={value}\n" for key, value in sorted(values.items()))
