import time

import numpy as np

from conftest import small_spec
from core.cache import ArtifactCache, scene_fingerprint
from core.maps import DepthNormalMap
from stages.fusion.synthetic import synth_scene


def some_maps():
    m = DepthNormalMap(np.full((3, 4), 2.0), np.tile([0.0, 0.0, -1.0], (3, 4, 1)), np.full((3, 4), 0.5))
    return {0: m, 2: m.copy()}


def test_store_and_load(tmp_path):
    cache = ArtifactCache(tmp_path)
    key = ArtifactCache.key("depth", {"iterations": 3}, 0, "abc")
    assert cache.load_maps(key) is None
    cache.store_maps(key, some_maps())
    loaded = cache.load_maps(key)
    assert sorted(loaded) == [0, 2]
    np.testing.assert_array_equal(loaded[2].depth, 2.0)


def test_key_depends_on_every_input():
    base = ArtifactCache.key("depth", {"iterations": 3}, 0, "abc")
    assert base == ArtifactCache.key("depth", {"iterations": 3}, 0, "abc")
    assert base != ArtifactCache.key("depth", {"iterations": 4}, 0, "abc")
    assert base != ArtifactCache.key("depth", {"iterations": 3}, 1, "abc")
    assert base != ArtifactCache.key("depth", {"iterations": 3}, 0, "abd")


def test_expired_entry_is_a_miss(tmp_path, monkeypatch):
    cache = ArtifactCache(tmp_path, ttl=10)
    cache.store_maps("k", some_maps())
    now = time.time()
    monkeypatch.setattr(time, "time", lambda: now + 60)
    assert cache.load_maps("k") is None
    assert not (tmp_path / "k").exists()


def test_disabled_cache(tmp_path):
    cache = ArtifactCache(None)
    cache.store_maps("k", some_maps())
    assert cache.load_maps("k") is None
    assert not any(tmp_path.iterdir())


def test_fingerprint_tracks_images(small_scene):
    bundle, _, _ = small_scene
    assert scene_fingerprint(bundle) == scene_fingerprint(bundle)
    other, _, _, _ = synth_scene(small_spec(seed=4))
    assert scene_fingerprint(bundle) != scene_fingerprint(other)
