"""Prior stage: triangulation and mask-guided plane priors from raw depth."""
import argparse
from dataclasses import asdict, dataclass
from pathlib import Path

from core.base import BaseStage
from core.maps import DepthNormalMap
from core.scene_io import SceneBundle, load_scene, read_depth_map, write_depth_map

from stages.depth.stage import DEPTH_DIR, load_maps
from stages.options import add_common_arguments, build_config, require, run_cli
from .candidates import PriorCandidateSet, assemble_candidates
from .planes import RegionFit, build_sam_prior
from .triangulation import delaunay_prior, sparsify

PRIOR_DIR = "prior"


@dataclass
class ViewPriors:
    tri: DepthNormalMap | None
    sam: DepthNormalMap | None
    regions: list[RegionFit]

    def candidates(self, raw: DepthNormalMap) -> PriorCandidateSet:
        return assemble_candidates(raw, self.tri, self.sam)


def load_priors(directory, indices: list[int]) -> dict[int, ViewPriors]:
    """Priors saved by PriorStage; a missing file means the prior is absent."""
    out = {}
    for i in indices:
        maps = {}
        for kind in ("tri", "sam"):
            base = Path(directory) / f"{kind}_{i:03d}"
            maps[kind] = read_depth_map(base) if base.with_suffix(".dmb").exists() else None
        out[i] = ViewPriors(maps["tri"], maps["sam"], [])
    return out


class PriorStage(BaseStage):
    """Builds both priors for every reference view, honouring the TP/SP toggles."""

    name = "prior"

    def run(self, bundle: SceneBundle, raw_maps: dict[int, DepthNormalMap], save: bool = True) -> dict[int, ViewPriors]:
        params = self.config.prior
        use_sp = self.config.enable_sp
        if use_sp and not bundle.has_masks:
            self.logger.warning("Mask prior enabled but the scene has no masks; skipping it")
            use_sp = False

        priors = {}
        for ref in bundle.reference_ids:
            view = bundle.views[ref]
            raw = raw_maps[ref]
            tri = sam = None
            regions: list[RegionFit] = []
            with self.timed(f"prior view {ref}"):
                if self.config.enable_tp:
                    sparse = sparsify(raw, view.camera, params)
                    self.logger.info(f"View {ref}: {len(sparse)} sparse points")
                    tri = delaunay_prior(sparse, view.camera, view.dims)
                if use_sp and view.mask is not None:
                    sam, regions = build_sam_prior(view.mask, raw, view.camera, params, self.config.seed)
                    for fit in regions:
                        if fit.status != "accepted":
                            self.logger.info(f"View {ref} region {fit.region_id}: {fit.status}")
            priors[ref] = ViewPriors(tri, sam, regions)
            if save:
                self._save(ref, priors[ref])
        return priors

    def _save(self, ref: int, priors: ViewPriors) -> None:
        for kind, prior in (("tri", priors.tri), ("sam", priors.sam)):
            if prior is not None:
                path = write_depth_map(prior, self.artifact_path(PRIOR_DIR, f"{kind}_{ref:03d}"))
                self.logger.info(f"Saved: {path}")
        if priors.regions:
            self.save_json([asdict(r) for r in priors.regions], f"{PRIOR_DIR}/regions_{ref:03d}.json")


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Triangulation and mask plane priors"))
    return run_cli(run_from_args, parser.parse_args(argv))


def run_from_args(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    config = build_config(args)
    bundle = load_scene(args.scene)
    stage = PriorStage(config)
    stage.run(bundle, load_maps(stage.output_dir / DEPTH_DIR, bundle.reference_ids))
    stage.save_config()


if __name__ == "__main__":
    raise SystemExit(main())
