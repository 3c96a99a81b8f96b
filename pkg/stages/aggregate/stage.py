"""Aggregation stage: candidate selection per view, then the geometric refinement pass."""
import argparse

from core.base import BaseStage
from core.maps import DepthNormalMap
from core.scene_io import SceneBundle, load_scene, write_costs, write_depth_map, write_label_image

from stages.depth.patchmatch import MatchingViews
from stages.depth.stage import DEPTH_DIR, load_maps
from stages.options import add_common_arguments, build_config, require, run_cli
from stages.prior.candidates import assemble_candidates
from stages.prior.stage import PRIOR_DIR, ViewPriors, load_priors
from .geometric import final_geometric_pass
from .sequential import AggregationState, sequential_pass

AGGREGATE_DIR = "aggregate"
FINAL_DIR = "final"


class AggregateStage(BaseStage):
    """Sequential aggregation for every reference view followed by the final geometric pass."""

    name = "aggregate"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.states: dict[int, AggregationState] = {}
        self.updated: dict[int, DepthNormalMap] = {}

    def run(self, bundle: SceneBundle, raw_maps: dict[int, DepthNormalMap],
            priors: dict[int, ViewPriors] | None = None, save: bool = True) -> dict[int, DepthNormalMap]:
        priors = priors or {}
        mode = "global aggregation" if self.config.enable_gia else "planar-prior baseline"
        self.logger.info(f"Selecting hypotheses with the {mode}")

        with self.timed("aggregation"):
            for ref in bundle.reference_ids:
                raw = raw_maps[ref]
                prior = priors.get(ref) or ViewPriors(None, None, [])
                candidates = assemble_candidates(
                    raw,
                    prior.tri if self.config.enable_tp else None,
                    prior.sam if self.config.enable_sp else None,
                )
                views = MatchingViews.from_bundle(bundle.with_reference(ref), raw_maps)
                self.updated[ref], self.states[ref] = sequential_pass(views, candidates, self.config)
                self.logger.info(f"View {ref}: selections {self.states[ref].counts()}")
                if save:
                    self._save_selection(ref)

        with self.timed("geometric pass"):
            final = final_geometric_pass(bundle, self.updated, self.config)
        if save:
            for ref, depth_map in final.items():
                path = write_depth_map(depth_map, self.artifact_path(FINAL_DIR, f"{ref:03d}"))
                self.logger.info(f"Saved: {path}")
        return final

    def _save_selection(self, ref: int) -> None:
        state = self.states[ref]
        path = write_depth_map(self.updated[ref], self.artifact_path(AGGREGATE_DIR, f"{ref:03d}"))
        self.logger.info(f"Saved: {path}")
        write_costs(state.L, self.artifact_path(AGGREGATE_DIR, f"L_{ref:03d}.cmb"))
        write_label_image(state.choice, self.artifact_path(AGGREGATE_DIR, f"selection_{ref:03d}.png"))


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Hypothesis aggregation and geometric pass"))
    return run_cli(run_from_args, parser.parse_args(argv))


def run_from_args(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    config = build_config(args)
    bundle = load_scene(args.scene)
    stage = AggregateStage(config)
    refs = bundle.reference_ids
    raw = load_maps(stage.output_dir / DEPTH_DIR, refs)
    stage.run(bundle, raw, load_priors(stage.output_dir / PRIOR_DIR, refs))
    stage.save_config()


if __name__ == "__main__":
    raise SystemExit(main())
