"""Scene and artifact I/O.

Scene directory layout::

    images/<id>.png|pgm|ppm   one image per view, stem is the integer view id
    masks/<id>.png|pgm        optional 16-bit label images (0 = background)
    cams.txt                  one block per view (see `parse_cams`)
    pair.txt                  `<ref>: <src> <src> ...` per line

Binary maps are little-endian: 4-byte magic, u32 width, u32 height, then
row-major float32 payload (DMB1: depth, NMB1: 3 floats per pixel, CMB1: cost).
"""
import logging
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionError,
    FormatError,
    InputError,
    PointCloudError,
    SceneParseError,
    TruncatedFileError,
)
from .geometry import CameraModel
from .maps import DepthNormalMap, PointCloud

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
DEPTH_MAGIC = b"DMB1"
NORMAL_MAGIC = b"NMB1"
COST_MAGIC = b"CMB1"
_HEADER = struct.Struct("<4sII")

_PLY_VERTEX = np.dtype(
    [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ]
)


@dataclass
class ImageBuffer:
    """Row-major intensities in [0, 1], shape (H, W) or (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim == 3 and self.data.shape[2] == 1:
            self.data = self.data[:, :, 0]
        if self.data.ndim not in (2, 3) or (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise DimensionError(f"image must be (H, W) or (H, W, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)) or self.data.min(initial=0) < 0 or self.data.max(initial=0) > 1:
            raise InputError("image values must be finite and in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data
        return (self.data @ np.array([0.299, 0.587, 0.114], np.float32)).astype(np.float32)

    def rgb8(self) -> np.ndarray:
        """(H, W, 3) uint8 colours."""
        rgb = self.data if self.channels == 3 else np.repeat(self.data[:, :, None], 3, axis=2)
        return np.round(rgb * 255.0).astype(np.uint8)


@dataclass
class SegmentMask:
    """Multi-label mask: 0 is background, k > 0 is region k."""

    labels: np.ndarray
    region_index: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got {self.labels.shape}")
        if self.labels.min(initial=0) < 0:
            raise InputError("mask labels must be >= 0")
        ys, xs = np.nonzero(self.labels)
        ids = self.labels[ys, xs]
        order = np.argsort(ids, kind="stable")
        ids, coords = ids[order], np.stack([xs, ys], axis=-1)[order]
        unique, starts = np.unique(ids, return_index=True)
        bounds = list(starts[1:]) + [len(ids)]
        self.region_index = {int(k): coords[s:e] for k, s, e in zip(unique, starts, bounds)}

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def region_ids(self) -> list[int]:
        return sorted(self.region_index)


@dataclass
class View:
    """One calibrated image with its optional segmentation."""

    image: ImageBuffer
    camera: CameraModel
    mask: SegmentMask | None = None

    def __post_init__(self):
        if self.mask is not None and (self.mask.width, self.mask.height) != (self.image.width, self.image.height):
            raise DimensionError(
                f"mask {self.mask.width}x{self.mask.height} != image {self.image.width}x{self.image.height}"
            )

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.width, self.image.height


@dataclass
class SceneBundle:
    """Views, the reference being reconstructed and per-reference source lists."""

    views: list[View]
    reference_index: int
    pairs: dict[int, list[int]]

    def __post_init__(self):
        n = len(self.views)
        if not 0 <= self.reference_index < n:
            raise InputError(f"reference index {self.reference_index} outside [0, {n})")
        for ref, srcs in self.pairs.items():
            if not 0 <= ref < n:
                raise InputError(f"pair list references unknown view {ref}")
            if not srcs:
                raise InputError(f"view {ref} has no source views")
            for s in srcs:
                if not 0 <= s < n or s == ref:
                    raise InputError(f"invalid source view {s} for reference {ref}")
        if self.reference_index not in self.pairs:
            raise InputError(f"reference {self.reference_index} has no pair list")

    @property
    def reference(self) -> View:
        return self.views[self.reference_index]

    @property
    def neighbor_indices(self) -> list[int]:
        return self.pairs[self.reference_index]

    @property
    def sources(self) -> list[View]:
        return [self.views[i] for i in self.neighbor_indices]

    @property
    def reference_ids(self) -> list[int]:
        return sorted(self.pairs)

    @property
    def has_masks(self) -> bool:
        return any(v.mask is not None for v in self.views)

    def with_reference(self, index: int) -> "SceneBundle":
        return replace(self, reference_index=index)


# --- images and masks -------------------------------------------------------

@contextmanager
def _opened_image(path: str | Path) -> Iterator[Image.Image]:
    try:
        img = Image.open(path)
    except FileNotFoundError as e:
        raise InputError(f"missing image {path}") from e
    except (UnidentifiedImageError, OSError) as e:
        raise FormatError(f"{path}: unreadable image ({e})") from e
    with img:
        try:
            img.load()
        except OSError as e:
            raise TruncatedFileError(f"{path}: {e}") from e
        yield img


def read_image(path: str | Path) -> ImageBuffer:
    """Load a PGM/PPM/PNG image as intensities in [0, 1]."""
    with _opened_image(path) as img:
        if img.mode in ("I;16", "I;16B", "I;16L", "I"):
            data = np.array(img, dtype=np.float64) / 65535.0
        elif img.mode == "F":
            data = np.array(img, dtype=np.float64)
        elif img.mode == "L":
            data = np.array(img, dtype=np.float64) / 255.0
        else:
            data = np.array(img.convert("RGB"), dtype=np.float64) / 255.0
    if not np.isfinite(data).all() or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
        raise FormatError(f"{path}: samples outside the representable range [0, 1]")
    return ImageBuffer(data)


def write_image(image: ImageBuffer, path: str | Path) -> None:
    """Save as 8-bit gray or RGB."""
    Image.fromarray(np.round(image.data * 255.0).astype(np.uint8)).save(path)


def read_mask(path: str | Path) -> SegmentMask:
    with _opened_image(path) as img:
        if img.mode not in ("L", "I", "I;16", "I;16B", "I;16L"):
            raise FormatError(f"{path}: mask must be a grayscale label image, got mode {img.mode}")
        return SegmentMask(np.array(img, dtype=np.int64))


def write_mask(mask: SegmentMask, path: str | Path) -> None:
    """Save as a 16-bit label image."""
    if mask.labels.max(initial=0) > 65535:
        raise InputError("mask labels exceed the 16-bit range")
    Image.fromarray(mask.labels.astype(np.uint16)).save(path)


def write_label_image(labels: np.ndarray, path: str | Path) -> None:
    """Save small non-negative labels as an 8-bit image."""
    Image.fromarray(np.asarray(labels, dtype=np.uint8)).save(path)


# --- text files ---------------------------------------------------------------

def _numbers(path, line_no: int, line: str, count: int, what: str) -> list[float]:
    parts = line.split()
    if len(parts) != count:
        raise SceneParseError(path, line_no, f"{what}: expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise SceneParseError(path, line_no, f"{what}: {e}") from e


def _content_lines(text: str) -> list[tuple[int, str]]:
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((line_no, line))
    return out


def parse_cams(text: str, path: str | Path = "cams.txt") -> dict[int, CameraModel]:
    """Parse camera blocks of five lines each.

    view id / fx fy cx cy / R (9 row-major) / t (3) / d_min d_max
    """
    lines = _content_lines(text)
    if len(lines) % 5 != 0:
        last = lines[-1][0] if lines else 0
        raise SceneParseError(path, last, f"incomplete camera block ({len(lines) % 5} of 5 lines)")
    cams: dict[int, CameraModel] = {}
    for start in range(0, len(lines), 5):
        (n0, l0), (n1, l1), (n2, l2), (n3, l3), (n4, l4) = lines[start:start + 5]
        try:
            view_id = int(l0)
        except ValueError as e:
            raise SceneParseError(path, n0, f"view id: {e}") from e
        if view_id in cams:
            raise SceneParseError(path, n0, f"duplicate view id {view_id}")
        fx, fy, cx, cy = _numbers(path, n1, l1, 4, "intrinsics")
        R = _numbers(path, n2, l2, 9, "rotation")
        t = _numbers(path, n3, l3, 3, "translation")
        d_min, d_max = _numbers(path, n4, l4, 2, "depth range")
        try:
            cams[view_id] = CameraModel(fx, fy, cx, cy, np.reshape(R, (3, 3)), t, d_min, d_max)
        except InputError as e:
            raise SceneParseError(path, n0, f"camera {view_id}: {e}") from e
    return cams


def format_cams(cams: dict[int, CameraModel]) -> str:
    def fmt(values) -> str:
        return " ".join(repr(float(v)) for v in values)

    blocks = []
    for view_id in sorted(cams):
        c = cams[view_id]
        blocks.append(
            "\n".join(
                [
                    str(view_id),
                    fmt([c.fx, c.fy, c.cx, c.cy]),
                    fmt(c.R.ravel()),
                    fmt(c.t),
                    fmt([c.d_min, c.d_max]),
                ]
            )
        )
    return "\n\n".join(blocks) + "\n"


def parse_pairs(text: str, path: str | Path = "pair.txt") -> tuple[int, dict[int, list[int]]]:
    """Parse `<ref>: <src> ...` lines; the first reference listed is the default."""
    pairs: dict[int, list[int]] = {}
    first = None
    for line_no, line in _content_lines(text):
        if ":" not in line:
            raise SceneParseError(path, line_no, "expected '<ref>: <src> ...'")
        head, tail = line.split(":", 1)
        try:
            ref = int(head)
            srcs = [int(s) for s in tail.split()]
        except ValueError as e:
            raise SceneParseError(path, line_no, str(e)) from e
        if ref in pairs:
            raise SceneParseError(path, line_no, f"duplicate reference {ref}")
        if not srcs:
            raise SceneParseError(path, line_no, f"reference {ref} lists no source views")
        pairs[ref] = srcs
        first = ref if first is None else first
    if first is None:
        raise SceneParseError(path, 1, "no pair lines")
    return first, pairs


def format_pairs(pairs: dict[int, list[int]], reference_index: int = 0) -> str:
    order = [reference_index] + [r for r in sorted(pairs) if r != reference_index]
    return "".join(f"{r}: {' '.join(str(s) for s in pairs[r])}\n" for r in order if r in pairs)


def _indexed_files(directory: Path) -> dict[int, Path]:
    files: dict[int, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            files[int(path.stem)] = path
        except ValueError:
            logger.debug(f"Ignoring {path.name}: stem is not a view id")
    return files


def load_scene(dir_path: str | Path) -> SceneBundle:
    """Load and validate a scene directory."""
    root = Path(dir_path)
    cams_path, pair_path, images_dir = root / "cams.txt", root / "pair.txt", root / "images"
    for required in (cams_path, pair_path, images_dir):
        if not required.exists():
            raise InputError(f"scene is missing {required}")

    cams = parse_cams(cams_path.read_text(), cams_path)
    reference, pairs = parse_pairs(pair_path.read_text(), pair_path)
    images = _indexed_files(images_dir)
    masks = _indexed_files(root / "masks") if (root / "masks").is_dir() else {}

    ids = sorted(cams)
    if ids != list(range(len(ids))):
        raise InputError(f"view ids must be 0..{len(ids) - 1}, got {ids}")
    views = []
    for view_id in ids:
        if view_id not in images:
            raise InputError(f"no image for view {view_id}")
        image = read_image(images[view_id])
        mask = read_mask(masks[view_id]) if view_id in masks else None
        views.append(View(image, cams[view_id], mask))

    bundle = SceneBundle(views, reference, pairs)
    logger.info(
        f"Loaded scene {root.name}: {len(views)} views, reference {reference}, "
        f"{sum(v.mask is not None for v in views)} masks"
    )
    return bundle


def save_scene(bundle: SceneBundle, dir_path: str | Path) -> Path:
    """Write a bundle in the layout `load_scene` reads."""
    root = Path(dir_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "cams.txt").write_text(format_cams({i: v.camera for i, v in enumerate(bundle.views)}))
    (root / "pair.txt").write_text(format_pairs(bundle.pairs, bundle.reference_index))
    for i, view in enumerate(bundle.views):
        write_image(view.image, root / "images" / f"{i:03d}.png")
        if view.mask is not None:
            (root / "masks").mkdir(exist_ok=True)
            write_mask(view.mask, root / "masks" / f"{i:03d}.png")
    return root


# --- binary maps --------------------------------------------------------------

def _write_binary(path: Path, magic: bytes, array: np.ndarray) -> None:
    height, width = array.shape[:2]
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, width, height))
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as e:
        raise InputError(f"missing {path}") from e
    except IsADirectoryError as e:
        raise InputError(f"{path} is a directory") from e


def _read_binary(path: Path, magic: bytes, channels: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header needs {_HEADER.size}")
    found, width, height = _HEADER.unpack_from(raw)
    if found != magic:
        raise FormatError(f"{path}: magic {found!r}, expected {magic!r}")
    expected = width * height * channels * 4
    payload = len(raw) - _HEADER.size
    if payload < expected:
        raise TruncatedFileError(f"{path}: header claims {width}x{height}, payload has {payload // 4} floats")
    if payload > expected:
        raise FormatError(f"{path}: {payload - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return data.reshape(shape)


def write_depth(depth: np.ndarray, path: str | Path) -> None:
    _write_binary(Path(path), DEPTH_MAGIC, depth)


def read_depth(path: str | Path) -> np.ndarray:
    return _read_binary(Path(path), DEPTH_MAGIC, 1)


def write_normals(normal: np.ndarray, path: str | Path) -> None:
    _write_binary(Path(path), NORMAL_MAGIC, normal)


def read_normals(path: str | Path) -> np.ndarray:
    return _read_binary(Path(path), NORMAL_MAGIC, 3)


def write_costs(cost: np.ndarray, path: str | Path) -> None:
    _write_binary(Path(path), COST_MAGIC, cost)


def read_costs(path: str | Path) -> np.ndarray:
    return _read_binary(Path(path), COST_MAGIC, 1)


def map_paths(path: str | Path) -> tuple[Path, Path, Path]:
    """`<base>.dmb`, `<base>.nmb`, `<base>.cmb` for a base path."""
    base = Path(path)
    if base.suffix in (".dmb", ".nmb", ".cmb"):
        base = base.with_suffix("")
    return base.with_suffix(".dmb"), base.with_suffix(".nmb"), base.with_suffix(".cmb")


def write_depth_map(depth_map: DepthNormalMap, path: str | Path) -> Path:
    depth_path, normal_path, cost_path = map_paths(path)
    depth_path.parent.mkdir(parents=True, exist_ok=True)
    write_depth(depth_map.depth, depth_path)
    write_normals(depth_map.normal, normal_path)
    write_costs(depth_map.cost, cost_path)
    return depth_path


def read_depth_map(path: str | Path) -> DepthNormalMap:
    depth_path, normal_path, cost_path = map_paths(path)
    depth = read_depth(depth_path)
    normal = read_normals(normal_path)
    cost = read_costs(cost_path)
    if normal.shape[:2] != depth.shape or cost.shape != depth.shape:
        raise DimensionError(f"{depth_path.with_suffix('')}: depth/normal/cost dimensions differ")
    return DepthNormalMap(depth, normal, cost)


# --- point clouds -------------------------------------------------------------

def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """Binary little-endian PLY with position, normal and colour per vertex."""
    finite = np.isfinite(cloud.positions).all(axis=1) & np.isfinite(cloud.normals).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise PointCloudError(bad, f"non-finite coordinate {cloud.positions[bad].tolist()}")

    vertices = np.empty(len(cloud), dtype=_PLY_VERTEX)
    for i, name in enumerate(("x", "y", "z")):
        vertices[name] = cloud.positions[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        vertices[name] = cloud.normals[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        vertices[name] = cloud.colors[:, i]

    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {len(cloud)}",
            *(f"property float {n}" for n in ("x", "y", "z", "nx", "ny", "nz")),
            *(f"property uchar {n}" for n in ("red", "green", "blue")),
            "end_header",
        ]
    )
    with open(path, "wb") as f:
        f.write((header + "\n").encode("ascii"))
        f.write(vertices.tobytes())


def read_ply(path: str | Path) -> PointCloud:
    """Read a PLY written by `write_ply`."""
    raw = _read_bytes(path)
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    counts = [line.split()[-1] for line in header if line.startswith("element vertex")]
    if len(counts) != 1:
        raise FormatError(f"{path}: missing vertex element")
    count = int(counts[0])
    props = [line.split()[-1] for line in header if line.startswith("property")]
    if props != list(_PLY_VERTEX.names):
        raise FormatError(f"{path}: unsupported vertex layout {props}")
    payload = raw[end + len(marker):]
    if len(payload) < count * _PLY_VERTEX.itemsize:
        raise TruncatedFileError(f"{path}: {count} vertices declared, payload too short")
    v = np.frombuffer(payload, dtype=_PLY_VERTEX, count=count)
    return PointCloud(
        np.stack([v["x"], v["y"], v["z"]], axis=-1),
        np.stack([v["nx"], v["ny"], v["nz"]], axis=-1),
        np.stack([v["red"], v["green"], v["blue"]], axis=-1),
    )
