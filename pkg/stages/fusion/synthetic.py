"""Ray-traced plane scenes with analytic ground truth.

Planes are `n . X + d = 0` in world coordinates with `n` facing the cameras.
Textures are functions of the world point, so every view sees the same
surface pattern.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from core.config import parse_key_values
from core.errors import ConfigError, InputError, VisibilityError
from core.geometry import PARALLEL_TOL, CameraModel, look_at
from core.maps import PointCloud
from core.scene_io import (
    ImageBuffer,
    SceneBundle,
    SegmentMask,
    View,
    read_depth,
    read_ply,
    save_scene,
    write_depth,
    write_ply,
)

logger = logging.getLogger(__name__)

TEXTURES = ("noise", "checker", "flat")
GT_DIR = "gt"

_HASH_X = np.uint64(0x9E3779B97F4A7C15)
_HASH_Y = np.uint64(0xC2B2AE3D27D4EB4F)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass
class PlaneSpec:
    """One scene plane and its surface appearance."""

    normal: tuple[float, float, float]
    offset: float
    texture: str = "noise"
    # World size of one texture cell
    texture_scale: float = 0.05
    albedo: float = 0.5
    contrast: float = 0.8
    # Intensity change per world unit along the plane, for flat planes
    shading: float = 0.0
    # Amplitude of low-contrast noise on flat planes
    weak_texture: float = 0.0
    # Axis-aligned bounds (xmin, xmax, ymin, ymax, zmin, zmax); None = unbounded
    extent: tuple[float, ...] | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or np.linalg.norm(n) < PARALLEL_TOL:
            raise ConfigError(f"plane normal must be a non-zero 3-vector, got {self.normal}")
        norm = float(np.linalg.norm(n))
        self.normal = tuple(float(v) for v in n / norm)
        self.offset = float(self.offset) / norm
        if self.texture not in TEXTURES:
            raise ConfigError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        if self.texture_scale <= 0:
            raise ConfigError("texture_scale must be > 0")
        if self.extent is not None:
            self.extent = tuple(float(v) for v in self.extent)
            if len(self.extent) != 6:
                raise ConfigError("extent needs 6 values")

    @property
    def textureless(self) -> bool:
        return self.texture == "flat"

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Two orthonormal in-plane axes."""
        n = np.array(self.normal)
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(helper, n)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)


def _default_planes() -> list[PlaneSpec]:
    return [
        # weakly textured, shaded back wall
        PlaneSpec((0.0, 0.0, -1.0), 5.0, texture="flat", albedo=0.55, shading=0.05, weak_texture=0.04,
                  texture_scale=0.08),
        # textured floor one unit below the cameras
        PlaneSpec((0.0, -1.0, 0.0), 1.0, texture="noise", texture_scale=0.05),
    ]


@dataclass
class SyntheticSceneSpec:
    """Plane list, camera ring and image settings of a synthetic scene.

    Camera 0 sits at `center` and looks at `target`; the others are spread on
    a ring of `ring_radius` around it in the camera's image plane.
    """

    planes: list[PlaneSpec] = field(default_factory=_default_planes)
    n_cameras: int = 5
    ring_radius: float = 0.4
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    target: tuple[float, float, float] = (0.0, 0.4, 5.0)
    width: int = 320
    height: int = 240
    fx: float = 280.0
    seed: int = 0
    image_noise: float = 0.0
    # Warn when the reference view's textureless share falls below this
    textureless_fraction: float | None = None
    depth_margin: float = 0.2

    def __post_init__(self):
        if self.n_cameras < 2:
            raise ConfigError("a scene needs at least 2 cameras")
        if not self.planes:
            raise ConfigError("a scene needs at least one plane")
        if self.width < 8 or self.height < 8 or self.fx <= 0:
            raise ConfigError("image dimensions must be >= 8 and fx > 0")
        if self.image_noise < 0 or not 0 <= self.depth_margin < 1:
            raise ConfigError("image_noise must be >= 0 and depth_margin in [0, 1)")
        self.planes = [p if isinstance(p, PlaneSpec) else PlaneSpec(**p) for p in self.planes]

    @classmethod
    def from_key_values(cls, path: str | Path) -> "SyntheticSceneSpec":
        """`key = value` file; planes as `plane.<i>.<field> = value`."""
        data = parse_key_values(Path(path).read_text(), source=path)
        planes = data.pop("plane", None)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        if planes is not None:
            if not isinstance(planes, dict):
                raise ConfigError("plane entries must be written as plane.<index>.<field>")
            try:
                data["planes"] = [PlaneSpec(**planes[k]) for k in sorted(planes, key=int)]
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad plane entry: {e}") from e
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def camera_rig(spec: SyntheticSceneSpec) -> list[CameraModel]:
    """Camera 0 at the centre, the rest evenly spaced on the ring."""
    center = np.asarray(spec.center, dtype=np.float64)
    target = np.asarray(spec.target, dtype=np.float64)
    base = look_at(center, target, 0.1, 100.0, spec.fx, spec.fx, (spec.width - 1) / 2, (spec.height - 1) / 2)
    right, down = base.R[0], base.R[1]
    centers = [center]
    for k in range(spec.n_cameras - 1):
        phi = 2.0 * math.pi * k / (spec.n_cameras - 1)
        centers.append(center + spec.ring_radius * (math.cos(phi) * right + math.sin(phi) * down))
    return [
        look_at(c, target, 0.1, 100.0, spec.fx, spec.fx, (spec.width - 1) / 2, (spec.height - 1) / 2)
        for c in centers
    ]


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    z = ix.astype(np.int64).astype(np.uint64) * _HASH_X
    z ^= iy.astype(np.int64).astype(np.uint64) * _HASH_Y
    z ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1); cells are unit-sized."""
    iu, iv = np.floor(u), np.floor(v)
    fu, fv = u - iu, v - iv
    fu, fv = fu * fu * (3 - 2 * fu), fv * fv * (3 - 2 * fv)
    c00 = _hash01(iu, iv, seed)
    c10 = _hash01(iu + 1, iv, seed)
    c01 = _hash01(iu, iv + 1, seed)
    c11 = _hash01(iu + 1, iv + 1, seed)
    return (c00 * (1 - fu) + c10 * fu) * (1 - fv) + (c01 * (1 - fu) + c11 * fu) * fv


def shade(plane: PlaneSpec, points: np.ndarray, seed: int) -> np.ndarray:
    """Intensity of world points lying on `plane`."""
    u_axis, v_axis = plane.basis()
    u = points @ u_axis
    v = points @ v_axis
    s = plane.texture_scale
    if plane.texture == "noise":
        pattern = 0.7 * value_noise(u / s, v / s, seed) + 0.3 * value_noise(2 * u / s, 2 * v / s, seed + 1)
        values = plane.albedo + plane.contrast * (pattern - 0.5)
    elif plane.texture == "checker":
        parity = (np.floor(u / s) + np.floor(v / s)) % 2
        values = plane.albedo + plane.contrast * (parity - 0.5)
    else:
        values = plane.albedo + plane.shading * u
        if plane.weak_texture > 0:
            values = values + plane.weak_texture * (value_noise(u / s, v / s, seed) - 0.5) * 2
    return np.clip(values, 0.0, 1.0)


def trace(cam: CameraModel, planes: list[PlaneSpec], dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest plane hit per pixel: (camera depth, plane index or -1)."""
    width, height = dims
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    rays = cam.ray(np.stack([xs, ys], axis=-1))
    dirs = rays @ cam.R
    origin = cam.center
    depth = np.full((height, width), np.inf)
    label = np.full((height, width), -1, np.int64)
    for k, plane in enumerate(planes):
        n = np.array(plane.normal)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            hit = -(n @ origin + plane.offset) / denom
        ok = (np.abs(denom) > PARALLEL_TOL) & (hit > 0)
        if plane.extent is not None:
            pts = origin + dirs * np.where(ok, hit, 0.0)[..., None]
            lo, hi = np.array(plane.extent[0::2]), np.array(plane.extent[1::2])
            ok &= np.all((pts >= lo - 1e-9) & (pts <= hi + 1e-9), axis=-1)
        closer = ok & (hit < depth)
        depth[closer] = hit[closer]
        label[closer] = k
    depth[label < 0] = 0.0
    return depth, label


def _check_visibility(cams: list[CameraModel], planes: list[PlaneSpec]) -> None:
    for k, plane in enumerate(planes):
        for i, cam in enumerate(cams):
            if np.array(plane.normal) @ cam.center + plane.offset <= 0:
                raise VisibilityError(f"camera {i} is behind plane {k} (the plane faces away from it)")


def synth_scene(spec: SyntheticSceneSpec) -> tuple[SceneBundle, dict[int, np.ndarray], PointCloud,
                                                  dict[int, SegmentMask]]:
    """Render the scene; returns the bundle, GT depth per view, the GT cloud and GT masks.

    The masks label every textureless plane with its index + 1 and also ride on
    the bundle's views as segmentation.
    """
    cams = camera_rig(spec)
    _check_visibility(cams, spec.planes)
    dims = (spec.width, spec.height)

    views, gt_depth, gt_masks, clouds = [], {}, {}, []
    for i, cam in enumerate(cams):
        depth, label = trace(cam, spec.planes, dims)
        hit = label >= 0
        if not hit.any():
            raise VisibilityError(f"camera {i} sees no plane")
        ys, xs = np.nonzero(hit)
        points = cam.ray(np.stack([xs, ys], axis=-1)) * depth[hit][:, None]
        world = (points - cam.t) @ cam.R

        image = np.zeros(depth.shape)
        normals = np.zeros((len(world), 3))
        for k, plane in enumerate(spec.planes):
            sel = label[hit] == k
            image[ys[sel], xs[sel]] = shade(plane, world[sel], spec.seed * 7919 + k)
            normals[sel] = plane.normal
        if spec.image_noise > 0:
            rng = np.random.default_rng((spec.seed, i))
            image = np.clip(image + rng.normal(0.0, spec.image_noise, image.shape), 0.0, 1.0)

        textureless = np.zeros(depth.shape, np.int64)
        for k, plane in enumerate(spec.planes):
            if plane.textureless:
                textureless[label == k] = k + 1
        mask = SegmentMask(textureless)

        valid = depth[hit]
        camera = CameraModel(
            cam.fx, cam.fy, cam.cx, cam.cy, cam.R, cam.t,
            (1 - spec.depth_margin) * float(valid.min()), (1 + spec.depth_margin) * float(valid.max()),
        )
        views.append(View(ImageBuffer(image), camera, mask))
        gt_depth[i] = depth
        gt_masks[i] = mask
        gray = np.round(image[hit] * 255).astype(np.uint8)
        clouds.append(PointCloud(world, normals, np.repeat(gray[:, None], 3, axis=1)))

    fraction = float((gt_masks[0].labels > 0).mean())
    if spec.textureless_fraction is not None and fraction < spec.textureless_fraction:
        logger.warning(f"Textureless share {fraction:.2f} below the requested {spec.textureless_fraction:.2f}")
    logger.info(f"Rendered {len(views)} views {spec.width}x{spec.height}, textureless share {fraction:.2f}")

    n = len(views)
    pairs = {i: [j for j in range(n) if j != i] for i in range(n)}
    return SceneBundle(views, 0, pairs), gt_depth, PointCloud.concatenate(clouds), gt_masks


def save_ground_truth(gt_depth: dict[int, np.ndarray], gt_cloud: PointCloud, scene_dir: str | Path) -> Path:
    root = Path(scene_dir) / GT_DIR
    root.mkdir(parents=True, exist_ok=True)
    for i, depth in gt_depth.items():
        write_depth(depth, root / f"depth_{i:03d}.dmb")
    write_ply(gt_cloud, root / "cloud.ply")
    return root


def save_synthetic_scene(bundle: SceneBundle, gt_depth: dict[int, np.ndarray], gt_cloud: PointCloud,
                         scene_dir: str | Path) -> Path:
    """Scene directory readable by `load_scene`, plus `gt/`."""
    root = save_scene(bundle, scene_dir)
    save_ground_truth(gt_depth, gt_cloud, root)
    return root


def load_ground_truth(scene_dir: str | Path) -> tuple[dict[int, np.ndarray], PointCloud | None]:
    """GT depth maps and cloud if the scene has them; empty/None otherwise."""
    root = Path(scene_dir) / GT_DIR
    if not root.is_dir():
        return {}, None
    depths = {}
    for path in sorted(root.glob("depth_*.dmb")):
        try:
            depths[int(path.stem.split("_", 1)[1])] = read_depth(path)
        except ValueError as e:
            raise InputError(f"{path}: not a depth_<id>.dmb file") from e
    cloud_path = root / "cloud.ply"
    return depths, read_ply(cloud_path) if cloud_path.exists() else None
