"""Dense artifact types passed between stages."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantViolation
from .geometry import CameraModel, PlaneHypothesis

COST_MAX = 2.0


@dataclass
class DepthNormalMap:
    """Per-pixel plane hypotheses with matching costs.

    A pixel without a hypothesis has depth 0; `reliable` marks the others.
    Prior maps use the same type with cost 0.
    """

    depth: np.ndarray
    normal: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float32)
        self.normal = np.ascontiguousarray(self.normal, dtype=np.float32)
        self.cost = np.ascontiguousarray(self.cost, dtype=np.float32)
        if self.depth.ndim != 2:
            raise DimensionError(f"depth must be 2-D, got shape {self.depth.shape}")
        if self.normal.shape != self.depth.shape + (3,):
            raise DimensionError(f"normal shape {self.normal.shape} != {self.depth.shape + (3,)}")
        if self.cost.shape != self.depth.shape:
            raise DimensionError(f"cost shape {self.cost.shape} != {self.depth.shape}")

    @classmethod
    def empty(cls, width: int, height: int, cost: float = 0.0) -> "DepthNormalMap":
        return cls(
            np.zeros((height, width), np.float32),
            np.zeros((height, width, 3), np.float32),
            np.full((height, width), cost, np.float32),
        )

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def reliable(self) -> np.ndarray:
        return self.depth > 0

    def hypothesis(self, x: int, y: int) -> PlaneHypothesis | None:
        if self.depth[y, x] <= 0:
            return None
        n = self.normal[y, x].astype(np.float64)
        return PlaneHypothesis(float(self.depth[y, x]), tuple(n / np.linalg.norm(n)))

    def copy(self) -> "DepthNormalMap":
        return DepthNormalMap(self.depth.copy(), self.normal.copy(), self.cost.copy())

    def same_shape(self, other: "DepthNormalMap") -> bool:
        return self.shape == other.shape

    def validate(self, cam: CameraModel, tol: float = 1e-5) -> None:
        """Check the hypothesis invariants on every reliable pixel."""
        ok = self.reliable
        if not np.all(np.isfinite(self.depth)) or not np.all(np.isfinite(self.normal)):
            raise InvariantViolation("non-finite values in depth/normal map")
        if np.any((self.cost < 0) | (self.cost > COST_MAX + tol)):
            raise InvariantViolation("cost outside [0, 2]")
        d = self.depth[ok].astype(np.float64)
        if np.any(d < cam.d_min * (1 - tol)) or np.any(d > cam.d_max * (1 + tol)):
            raise InvariantViolation("depth outside the camera depth range")
        n = self.normal[ok].astype(np.float64)
        if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > tol):
            raise InvariantViolation("non-unit normal")
        ys, xs = np.nonzero(ok)
        rays = cam.ray(np.stack([xs, ys], axis=-1))
        if np.any(np.einsum("ij,ij->i", n, rays) > tol):
            raise InvariantViolation("normal facing away from the camera")


@dataclass
class PointCloud:
    """World-frame points with unit normals and 8-bit colours."""

    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        n = len(self.positions)
        if len(self.normals) != n or len(self.colors) != n:
            raise DimensionError("positions, normals and colors must have the same length")

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), np.uint8))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concatenate(cls, clouds: list["PointCloud"]) -> "PointCloud":
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.normals for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
        )
