"""`python -m stages <command> [options]`: one subcommand per stage."""
import argparse
import sys
from typing import Callable

from stages.aggregate.stage import main as aggregate_main
from stages.depth.stage import main as depth_main
from stages.fusion.stage import eval_main, fuse_main, synth_main
from stages.pipeline.stage import ablation_main, pipeline_main
from stages.prior.stage import main as prior_main

COMMANDS: dict[str, tuple[Callable[[list[str] | None], int], str]] = {
    "synth": (synth_main, "render a synthetic scene with ground truth"),
    "depth": (depth_main, "raw PatchMatch depth for every reference view"),
    "prior": (prior_main, "triangulation and mask plane priors"),
    "aggregate": (aggregate_main, "hypothesis selection and geometric pass"),
    "fuse": (fuse_main, "fuse final depth maps into a point cloud"),
    "eval": (eval_main, "metrics against ground truth"),
    "pipeline": (pipeline_main, "every stage in order"),
    "ablation": (ablation_main, "pipeline once per ablation row"),
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = argparse.ArgumentParser(
        prog="stages",
        description="Plane-prior multi-view stereo",
        epilog="\n".join(f"  {name:<10} {help_}" for name, (_, help_) in COMMANDS.items()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("args", nargs=argparse.REMAINDER, help="options of the command (see <command> --help)")
    if not argv:
        parser.print_help()
        return 2
    args = parser.parse_args(argv[:1])
    handler, _ = COMMANDS[args.command]
    return handler(argv[1:])
