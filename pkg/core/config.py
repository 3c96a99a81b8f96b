"""Configuration management for the reconstruction stages."""
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass
class PatchMatchConfig:
    """PatchMatch engine settings."""

    patch_radius: int = 5
    patch_step: int = 2
    ncc_sigma_spatial: float = 5.0
    ncc_sigma_color: float = 0.1
    iterations: int = 6
    perturbation_fraction: float = 0.1
    # Extra PatchMatch stream selector mixed into every per-view seed
    rng_seed: int = 0

    # View weight w_j = exp(-m_best / view_weight_scale)
    view_weight_scale: float = 0.3
    # Diagonal propagation samples sit at (+-stride, +-stride)
    propagation_stride: int = 4
    # Iterations of the final pass with geometric consistency
    geometric_iterations: int = 2

    def __post_init__(self):
        _require(self.patch_radius >= 1, "patch_radius must be >= 1")
        _require(1 <= self.patch_step <= self.patch_radius, "patch_step must be in [1, patch_radius]")
        _require(self.iterations >= 1, "iterations must be >= 1")
        _require(self.ncc_sigma_spatial > 0 and self.ncc_sigma_color > 0, "NCC sigmas must be > 0")
        _require(0.0 <= self.perturbation_fraction <= 1.0, "perturbation_fraction must be in [0, 1]")
        _require(self.view_weight_scale > 0, "view_weight_scale must be > 0")
        _require(self.propagation_stride >= 1, "propagation_stride must be >= 1")
        _require(self.geometric_iterations >= 0, "geometric_iterations must be >= 0")
        _require(self.rng_seed >= 0, "rng_seed must be >= 0")


@dataclass
class PriorParams:
    """Prior candidate generation settings."""

    sparsify_cost_threshold: float = 0.3
    tau_lambda: float = 0.5
    knn: int = 20
    ransac_iters: int = 512
    # Absolute inlier tolerance in scene units; None derives it from the region depth
    ransac_inlier_tol: float | None = None
    ransac_inlier_tol_rel: float = 0.005
    min_inlier_fraction: float = 0.5
    # Raw photometric cost a mask member needs to enter the plane fit
    sam_cost_threshold: float = 0.6

    def __post_init__(self):
        _require(1.0 / 3.0 < self.tau_lambda <= 1.0, "tau_lambda must be in (1/3, 1]")
        _require(self.knn >= 4, "knn must be >= 4")
        _require(self.ransac_iters >= 1, "ransac_iters must be >= 1")
        _require(self.ransac_inlier_tol is None or self.ransac_inlier_tol > 0, "ransac_inlier_tol must be > 0")
        _require(self.ransac_inlier_tol_rel > 0, "ransac_inlier_tol_rel must be > 0")
        _require(0.0 <= self.min_inlier_fraction <= 1.0, "min_inlier_fraction must be in [0, 1]")


@dataclass
class ConsistencyParams:
    """Geometric consistency settings."""

    tau_geo: float = 3.0
    omega_geo: float = 5.0
    alpha_geo: float = 0.1
    # Pixel distances below this count as exactly zero
    zero_tol: float = 1e-2

    def __post_init__(self):
        _require(self.tau_geo > 0, "tau_geo must be > 0")
        _require(self.omega_geo > 0, "omega_geo must be > 0")
        _require(self.alpha_geo >= 0, "alpha_geo must be >= 0")
        _require(self.zero_tol >= 0, "zero_tol must be >= 0")


@dataclass
class AggregationParams:
    """Global information aggregation settings."""

    alpha_geo: float = 0.1
    P1: float = 0.2
    P2: float = 0.66
    iterations: int = 1

    def __post_init__(self):
        _require(self.P1 < self.P2, "P1 must be < P2")
        _require(self.alpha_geo >= 0, "alpha_geo must be >= 0")
        _require(self.iterations >= 1, "iterations must be >= 1")


@dataclass
class BaselineAggParams:
    """Planar-prior aggregation used when global aggregation is disabled."""

    alpha: float = 4.0
    gamma: float = 0.5
    lambda_d: float = 0.25
    lambda_n: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            _require(getattr(self, f.name) > 0, f"{f.name} must be > 0")


@dataclass
class FusionParams:
    """Depth map fusion and evaluation settings."""

    min_consistent: int = 2
    tol_rel: float = 0.01
    tol_px: float = 2.0
    eval_tau: float = 0.05
    depth_rel_threshold: float = 0.01

    def __post_init__(self):
        _require(self.min_consistent >= 0, "min_consistent must be >= 0")
        _require(self.tol_rel > 0 and self.tol_px > 0, "fusion tolerances must be > 0")
        _require(self.eval_tau > 0, "eval_tau must be > 0")
        _require(self.depth_rel_threshold > 0, "depth_rel_threshold must be > 0")


_BLOCKS = {
    "patchmatch": PatchMatchConfig,
    "prior": PriorParams,
    "consistency": ConsistencyParams,
    "aggregation": AggregationParams,
    "baseline": BaselineAggParams,
    "fusion": FusionParams,
}


@dataclass
class PipelineConfig:
    """Top-level configuration for every stage."""

    # Ablation toggles
    enable_tp: bool = True
    enable_sp: bool = True
    enable_gcec: bool = True
    enable_gia: bool = True

    seed: int = 0
    workers: int = 1

    # Output
    output_dir: str = "output"
    verbose: bool = False

    # Caching
    cache_enabled: bool = True
    cache_dir: str = ".cache"
    cache_ttl: int = 0  # seconds, 0 = never expires

    patchmatch: PatchMatchConfig = field(default_factory=PatchMatchConfig)
    prior: PriorParams = field(default_factory=PriorParams)
    consistency: ConsistencyParams = field(default_factory=ConsistencyParams)
    aggregation: AggregationParams = field(default_factory=AggregationParams)
    baseline: BaselineAggParams = field(default_factory=BaselineAggParams)
    fusion: FusionParams = field(default_factory=FusionParams)

    def __post_init__(self):
        _require(self.workers >= 1, "workers must be >= 1")
        _require(self.seed >= 0, "seed must be >= 0")
        _require(self.cache_ttl >= 0, "cache_ttl must be >= 0")
        for name, block in _BLOCKS.items():
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, _build(block, value, name))

    @property
    def toggles(self) -> dict[str, bool]:
        return {
            "TP": self.enable_tp,
            "SP": self.enable_sp,
            "GCEC": self.enable_gcec,
            "GIA": self.enable_gia,
        }

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        return _build(cls, data, "")

    @classmethod
    def from_yaml(cls, path: str | Path) -> "PipelineConfig":
        """Load config from YAML file."""
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)

    @classmethod
    def from_key_values(cls, path: str | Path) -> "PipelineConfig":
        """Load config from a plain-text key=value file."""
        return cls.from_dict(parse_key_values(Path(path).read_text(), source=path))

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if path.suffix in (".yaml", ".yml"):
            return cls.from_yaml(path)
        return cls.from_key_values(path)

    @classmethod
    def from_env(cls, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Overlay MVS_* environment variables on a config."""
        config = base or cls()
        env = {}
        if "MVS_SEED" in os.environ:
            env["seed"] = int(os.environ["MVS_SEED"])
        if "MVS_WORKERS" in os.environ:
            env["workers"] = int(os.environ["MVS_WORKERS"])
        if "MVS_OUTPUT_DIR" in os.environ:
            env["output_dir"] = os.environ["MVS_OUTPUT_DIR"]
        if "MVS_CACHE_DIR" in os.environ:
            env["cache_dir"] = os.environ["MVS_CACHE_DIR"]
        if os.getenv("MVS_VERBOSE", "").lower() == "true":
            env["verbose"] = True
        if os.getenv("MVS_NO_CACHE", "").lower() == "true":
            env["cache_enabled"] = False
        return config.override(env)

    def override(self, values: dict[str, Any]) -> "PipelineConfig":
        """Return a copy with dotted-key overrides applied (`prior.tau_lambda`)."""
        data = self.to_dict()
        for key, value in values.items():
            _set_dotted(data, key, value)
        return self.from_dict(data)

    def to_yaml(self, path: str | Path) -> None:
        """Save config to YAML file."""
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, default_flow_style=False, sort_keys=True)


def parse_key_values(text: str, source: str | Path = "<string>") -> dict[str, Any]:
    """Parse `key = value` lines into a nested dict; values are YAML scalars."""
    from .errors import SceneParseError

    data: dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneParseError(source, line_no, f"expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise SceneParseError(source, line_no, "empty key")
        try:
            parsed = yaml.safe_load(value) if value else None
        except yaml.YAMLError as e:
            raise SceneParseError(source, line_no, f"bad value {value!r}: {e}") from e
        _set_dotted(data, key, parsed)
    return data


def _set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {part} is not a parameter block")
    node[parts[-1]] = value


def _build(cls, data: dict[str, Any], prefix: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        where = f" in {prefix}" if prefix else ""
        raise ConfigError(f"unknown config keys{where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        block = _BLOCKS.get(name) if cls is PipelineConfig else None
        if block is not None and isinstance(value, dict):
            kwargs[name] = _build(block, value, name)
        elif block is not None and is_dataclass(value):
            kwargs[name] = replace(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e
