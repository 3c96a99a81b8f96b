"""Per-pixel prior candidate set."""
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from core.errors import DimensionError
from core.geometry import PlaneHypothesis
from core.maps import DepthNormalMap


class Choice(IntEnum):
    """Candidate source; the values double as selection-label pixels."""

    RAW = 0
    TRI = 1
    SAM = 2


@dataclass
class PriorCandidateSet:
    """Raw hypotheses plus optional triangulation and mask-plane priors."""

    raw: DepthNormalMap
    tri: DepthNormalMap
    sam: DepthNormalMap

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape

    def maps(self) -> dict[Choice, DepthNormalMap]:
        return {Choice.RAW: self.raw, Choice.TRI: self.tri, Choice.SAM: self.sam}

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(3, H, W) depths and (3, H, W, 3) normals ordered by Choice; depth 0 = absent."""
        order = [self.raw, self.tri, self.sam]
        return np.stack([m.depth for m in order]), np.stack([m.normal for m in order])

    def at(self, x: int, y: int) -> dict[Choice, PlaneHypothesis | None]:
        return {choice: m.hypothesis(x, y) for choice, m in self.maps().items()}

    def coverage(self) -> dict[str, int]:
        return {choice.name: int(m.reliable.sum()) for choice, m in self.maps().items()}


def assemble_candidates(raw: DepthNormalMap, tri: DepthNormalMap | None = None,
                        sam: DepthNormalMap | None = None) -> PriorCandidateSet:
    """Absent priors become all-empty maps; dimensions must agree."""
    for name, prior in (("triangulation", tri), ("mask", sam)):
        if prior is not None and prior.shape != raw.shape:
            raise DimensionError(f"{name} prior {prior.shape} != raw map {raw.shape}")
    return PriorCandidateSet(
        raw=raw,
        tri=tri if tri is not None else DepthNormalMap.empty(raw.width, raw.height),
        sam=sam if sam is not None else DepthNormalMap.empty(raw.width, raw.height),
    )
