"""Synthetic scene, fusion and evaluation stages."""
import argparse
from pathlib import Path

import numpy as np

from core.base import BaseStage
from core.maps import DepthNormalMap, PointCloud
from core.scene_io import SceneBundle, load_scene, read_ply, write_ply

from stages.aggregate.stage import FINAL_DIR
from stages.depth.stage import load_maps
from stages.options import add_common_arguments, build_config, require, run_cli

from .fusion import fuse
from .metrics import evaluate_cloud, evaluate_depth, format_report
from .synthetic import SyntheticSceneSpec, load_ground_truth, save_synthetic_scene, synth_scene

CLOUD_FILE = "fused.ply"


class SynthStage(BaseStage):
    """Renders a synthetic scene with ground truth into the output directory."""

    name = "synth"

    def run(self, spec: SyntheticSceneSpec) -> Path:
        with self.timed("render"):
            bundle, gt_depth, gt_cloud, _ = synth_scene(spec)
        root = save_synthetic_scene(bundle, gt_depth, gt_cloud, self.output_dir)
        self.save_json(spec.to_dict(), "scene_spec.json")
        self.logger.info(f"Saved: {root} ({len(bundle.views)} views, {len(gt_cloud)} GT points)")
        return root


class FuseStage(BaseStage):
    """Fuses the final depth maps into `fused.ply`."""

    name = "fuse"

    def run(self, bundle: SceneBundle, maps: dict[int, DepthNormalMap], save: bool = True) -> PointCloud:
        cams = {i: bundle.views[i].camera for i in maps}
        images = {i: bundle.views[i].image for i in maps}
        with self.timed("fusion"):
            cloud = fuse(maps, cams, self.config.fusion, images)
        if save:
            path = self.artifact_path(CLOUD_FILE)
            write_ply(cloud, path)
            self.logger.info(f"Saved: {path}")
        return cloud


class EvalStage(BaseStage):
    """Cloud and depth metrics against the scene's ground truth, when it has any."""

    name = "eval"

    def run(self, scene_dir: str | Path, bundle: SceneBundle, cloud: PointCloud | None,
            maps: dict[int, DepthNormalMap], save: bool = True) -> dict[str, float]:
        params = self.config.fusion
        gt_depth, gt_cloud = load_ground_truth(scene_dir)
        metrics: dict[str, float] = {
            "fusion.min_consistent": params.min_consistent,
            "fusion.tol_rel": params.tol_rel,
            "fusion.tol_px": params.tol_px,
        }
        if gt_cloud is None and not gt_depth:
            self.logger.warning("Scene has no ground truth; nothing to evaluate")
            return metrics

        if gt_cloud is not None and cloud is not None:
            result = evaluate_cloud(cloud, gt_cloud, params.eval_tau)
            metrics.update(result.to_dict())
            self.logger.info(
                f"Cloud @ tau={result.tau}: accuracy {result.accuracy:.2f}, "
                f"completeness {result.completeness:.2f}, F1 {result.f1:.2f}"
            )
        metrics.update(self.depth_metrics(bundle, maps, gt_depth))
        if save:
            self.save_output(format_report(metrics), "metrics.txt")
            self.save_json(metrics, "metrics.json")
        return metrics

    def depth_metrics(self, bundle: SceneBundle, maps: dict[int, DepthNormalMap],
                      gt_depth: dict[int, np.ndarray]) -> dict[str, float]:
        """Pixel-weighted depth metrics over all views, and over the masked (textureless) regions."""
        threshold = self.config.fusion.depth_rel_threshold
        totals = {"depth": [0.0, 0.0, 0], "textureless": [0.0, 0.0, 0]}
        for i, est in maps.items():
            if i not in gt_depth:
                continue
            gt = gt_depth[i]
            regions = {"depth": None}
            mask = bundle.views[i].mask
            if mask is not None and (mask.labels > 0).any():
                regions["textureless"] = mask.labels > 0
            for key, region in regions.items():
                n = int(((gt > 0) if region is None else (gt > 0) & region).sum())
                if n == 0:
                    continue
                fraction, error = evaluate_depth(est, gt, threshold, region)
                totals[key][0] += fraction * n
                totals[key][1] += error * n
                totals[key][2] += n

        out = {}
        for key, (fraction, error, n) in totals.items():
            if n:
                out[f"{key}_fraction"] = fraction / n
                out[f"{key}_abs_rel"] = error / n
                self.logger.info(f"{key}: {100 * fraction / n:.2f}% within {threshold:.0%}")
        return out


def synth_main(argv: list[str] | None = None) -> int:
    """CLI entry point for scene rendering."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Render a synthetic plane scene"))
    parser.add_argument("--spec", help="Scene description (key=value file)")
    return run_cli(run_synth, parser.parse_args(argv))


def run_synth(args: argparse.Namespace) -> None:
    require(args, "out")
    config = build_config(args)
    spec = SyntheticSceneSpec.from_key_values(args.spec) if args.spec else SyntheticSceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    stage = SynthStage(config)
    stage.run(spec)
    stage.save_config()


def fuse_main(argv: list[str] | None = None) -> int:
    """CLI entry point for fusion."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Fuse final depth maps into a point cloud"))
    return run_cli(run_fuse, parser.parse_args(argv))


def run_fuse(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    config = build_config(args)
    bundle = load_scene(args.scene)
    stage = FuseStage(config)
    stage.run(bundle, load_maps(stage.output_dir / FINAL_DIR, bundle.reference_ids))
    stage.save_config()


def eval_main(argv: list[str] | None = None) -> int:
    """CLI entry point for evaluation."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Evaluate a reconstruction"))
    return run_cli(run_eval, parser.parse_args(argv))


def run_eval(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    config = build_config(args)
    bundle = load_scene(args.scene)
    stage = EvalStage(config)
    cloud_path = stage.output_dir / CLOUD_FILE
    cloud = read_ply(cloud_path) if cloud_path.exists() else None
    stage.run(args.scene, bundle, cloud, load_maps(stage.output_dir / FINAL_DIR, bundle.reference_ids))
    stage.save_config()


if __name__ == "__main__":
    raise SystemExit(fuse_main())
