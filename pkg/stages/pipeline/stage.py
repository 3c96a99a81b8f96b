"""Whole-pipeline and ablation stages."""
import argparse
from pathlib import Path

import pandas as pd

from core.base import BaseStage

from stages.options import add_common_arguments, build_config, require, run_cli

from .pipeline import ABLATION_ROWS, PipelineResult, ablation_report, run_ablation, run_pipeline


class PipelineStage(BaseStage):
    """Runs every stage on one scene into the output directory."""

    name = "pipeline"

    def run(self, scene_dir: str | Path) -> PipelineResult:
        with self.timed("pipeline"):
            result = run_pipeline(self.config.override({"output_dir": str(self.output_dir)}), scene_dir)
        metrics = result.metrics
        if "f1" in metrics:
            self.logger.info(f"F1 {metrics['f1']:.2f} @ tau={metrics['tau']}")
        return result


class AblationStage(BaseStage):
    """Runs the requested ablation rows and writes `ablation.md` and `ablation.csv`."""

    name = "ablation"

    def run(self, scene_dir: str | Path, rows: list[str] | None = None) -> pd.DataFrame:
        config = self.config.override({"output_dir": str(self.output_dir)})
        with self.timed("ablation"):
            df = run_ablation(config, scene_dir, rows)
        self.save_output(ablation_report(df, config, scene_dir), "ablation.md")
        path = self.artifact_path("ablation.csv")
        df.to_csv(path, index=False, float_format="%.6f")
        self.logger.info(f"Saved: {path}")
        return df


def pipeline_main(argv: list[str] | None = None) -> int:
    """CLI entry point for a full run."""
    parser = add_common_arguments(argparse.ArgumentParser(description="Full reconstruction pipeline"))
    return run_cli(run_pipeline_args, parser.parse_args(argv))


def run_pipeline_args(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    PipelineStage(build_config(args)).run(args.scene)


def add_ablation_arguments(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parser.add_argument("--rows", nargs="+", choices=list(ABLATION_ROWS), help="Rows to run (default: all)")
    return parser


def ablation_main(argv: list[str] | None = None) -> int:
    """CLI entry point for the ablation study."""
    parser = add_ablation_arguments(
        add_common_arguments(argparse.ArgumentParser(description="Ablation over the prior and aggregation toggles"))
    )
    return run_cli(run_ablation_args, parser.parse_args(argv))


def run_ablation_args(args: argparse.Namespace) -> None:
    require(args, "scene", "out")
    stage = AblationStage(build_config(args))
    stage.run(args.scene, args.rows)
    stage.save_config()


if __name__ == "__main__":
    raise SystemExit(pipeline_main())
