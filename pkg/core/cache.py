"""Content-addressed cache for stage artifacts."""
import hashlib
import json
import logging
import shutil
import time
from pathlib import Path
from typing import Any

import numpy as np

from .maps import DepthNormalMap
from .scene_io import SceneBundle, read_depth_map, write_depth_map

logger = logging.getLogger(__name__)


def scene_fingerprint(bundle: SceneBundle) -> str:
    """Hash of every input that influences reconstruction."""
    h = hashlib.sha256()
    for view in bundle.views:
        h.update(np.ascontiguousarray(view.image.data).tobytes())
        h.update(str(view.image.data.shape).encode())
        c = view.camera
        h.update(np.array([c.fx, c.fy, c.cx, c.cy, c.d_min, c.d_max]).tobytes())
        h.update(c.R.tobytes())
        h.update(c.t.tobytes())
        if view.mask is not None:
            h.update(view.mask.labels.tobytes())
    h.update(json.dumps({str(k): v for k, v in sorted(bundle.pairs.items())}).encode())
    return h.hexdigest()


class ArtifactCache:
    """Directory-per-key cache of depth map sets."""

    def __init__(self, cache_dir: str | Path | None, ttl: int = 0):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.ttl = ttl
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(stage: str, params: dict[str, Any], seed: int, fingerprint: str) -> str:
        """Generate cache key from a stage request."""
        data = {"stage": stage, "params": params, "seed": seed, "scene": fingerprint}
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()

    def _entry(self, key: str) -> Path | None:
        if not self.cache_dir:
            return None
        entry = self.cache_dir / key
        meta = entry / "meta.json"
        if not meta.exists():
            return None
        data = json.loads(meta.read_text())
        if self.ttl and time.time() - data["timestamp"] > self.ttl:
            shutil.rmtree(entry, ignore_errors=True)
            return None
        return entry

    def load_maps(self, key: str) -> dict[int, DepthNormalMap] | None:
        """Cached maps by view index, or None on a miss."""
        entry = self._entry(key)
        if entry is None:
            return None
        meta = json.loads((entry / "meta.json").read_text())
        maps = {int(i): read_depth_map(entry / f"{int(i):03d}") for i in meta["views"]}
        logger.debug(f"Cache hit {key[:12]} ({len(maps)} maps)")
        return maps

    def store_maps(self, key: str, maps: dict[int, DepthNormalMap]) -> None:
        if not self.cache_dir:
            return
        entry = self.cache_dir / key
        entry.mkdir(parents=True, exist_ok=True)
        for i, depth_map in maps.items():
            write_depth_map(depth_map, entry / f"{i:03d}")
        # Written last so a partial entry never reads as a hit
        (entry / "meta.json").write_text(json.dumps({"views": sorted(maps), "timestamp": time.time()}))
