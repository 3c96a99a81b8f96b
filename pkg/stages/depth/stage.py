"""Raw depth stage: PatchMatch for every reference view of a scene."""
import argparse
from dataclasses import asdict
from pathlib import Path

from core.base import BaseStage
from core.cache import scene_fingerprint
from core.maps import DepthNormalMap
from core.scene_io import SceneBundle, load_scene, read_depth_map, write_depth_map

from stages.options import add_common_arguments, build_config, require, run_cli
from .patchmatch import estimate_view

DEPTH_DIR = "depth"


def map_base(directory: str | Path, index: int) -> Path:
    return Path(directory) / f"{index:03d}"


def load_maps(directory: str | Path, indices: list[int]) -> dict[int, DepthNormalMap]:
    return {i: read_depth_map(map_base(directory, i)) for i in indices}


class DepthStage(BaseStage):
    """Runs PatchMatch for each reference view; results go through the artifact cache."""

    name = "depth"

    def run(self, bundle: SceneBundle, save: bool = True) -> dict[int, DepthNormalMap]:
        cfg = self.config.patchmatch
        key = self.cache.key("depth", asdict(cfg), self.config.seed, scene_fingerprint(bundle))
        maps = self.cache.load_maps(key)
        if maps is not None:
            self.logger.info(f"Raw depth loaded from cache ({len(maps)} views)")
        else:
            maps = {}
            for ref in bundle.reference_ids:
                with self.timed(f"depth view {ref}"):
                    maps[ref] = estimate_view(bundle.with_reference(ref), cfg, self.config.seed)
                self.logger.info(
                    f"View {ref}: {int((maps[ref].cost <= self.config.prior.sparsify_cost_threshold).sum())} "
                    f"confident pixels, mean cost {maps[ref].cost.mean():.3f}"
                )
            self.cache.store_maps(key, maps)

        if save:
            for ref, depth_map in maps.items():
                path = write_depth_map(depth_map, self.artifact_path(DEPTH_DIR, f"{ref:03d}"))
                self.logger.info(f"Saved: {path}")
        return maps


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Raw PatchMatch depth"))
    return run_cli(run_from_args, parser.parse_args(argv))


def run_from_args(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    config = build_config(args)
    stage = DepthStage(config)
    stage.run(load_scene(args.scene))
    stage.save_config()


if __name__ == "__main__":
    raise SystemExit(main())
