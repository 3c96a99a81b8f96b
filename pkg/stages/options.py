"""Command-line options shared by every stage entry point."""
import argparse
import logging
import sys
from typing import Any, Callable

from core.config import PipelineConfig
from core.errors import InputError, MVSError

logger = logging.getLogger(__name__)

# flag -> dotted config key
_VALUE_FLAGS = {
    "seed": "seed",
    "workers": "workers",
    "iters": "patchmatch.iterations",
    "tau_lambda": "prior.tau_lambda",
    "omega_geo": "consistency.omega_geo",
    "tau_geo": "consistency.tau_geo",
    "p1": "aggregation.P1",
    "p2": "aggregation.P2",
}


def add_common_arguments(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parser.add_argument("--scene", help="Scene directory (images/, cams.txt, pair.txt, optional masks/)")
    parser.add_argument("--out", "-o", help="Output directory")
    parser.add_argument("--config", "-c", help="Config file (.yaml or key=value text)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="Parallel threads; results do not depend on it")
    parser.add_argument("--iters", type=int, help="PatchMatch iterations for the raw depth stage")
    parser.add_argument("--no-tp", action="store_true", help="Disable the triangulation prior")
    parser.add_argument("--no-sp", action="store_true", help="Disable the mask-guided plane prior")
    parser.add_argument("--no-gcec", action="store_true", help="Use truncated reprojection instead of the epipolar cost")
    parser.add_argument("--no-gia", action="store_true", help="Select hypotheses with the planar-prior cost")
    parser.add_argument("--tau-lambda", type=float)
    parser.add_argument("--omega-geo", type=float)
    parser.add_argument("--tau-geo", type=float)
    parser.add_argument("--alpha-geo", type=float)
    parser.add_argument("--p1", type=float)
    parser.add_argument("--p2", type=float)
    parser.add_argument("--no-cache", action="store_true")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """defaults < config file < MVS_* environment < command-line flags."""
    config = PipelineConfig.from_file(args.config) if getattr(args, "config", None) else PipelineConfig()
    config = PipelineConfig.from_env(config)

    overrides: dict[str, Any] = {}
    for flag, key in _VALUE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "alpha_geo", None) is not None:
        overrides["consistency.alpha_geo"] = args.alpha_geo
        overrides["aggregation.alpha_geo"] = args.alpha_geo
    for toggle in ("tp", "sp", "gcec", "gia"):
        if getattr(args, f"no_{toggle}", False):
            overrides[f"enable_{toggle}"] = False
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "no_cache", False):
        overrides["cache_enabled"] = False
    if getattr(args, "verbose", False):
        overrides["verbose"] = True
    return config.override(overrides)


def require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n, None)]
    if missing:
        raise InputError(f"missing required option(s): {', '.join(missing)}")


def run_cli(handler: Callable[[argparse.Namespace], Any], args: argparse.Namespace) -> int:
    """Run a handler and map failures to exit codes (0 ok, 2 input, 3 internal)."""
    try:
        handler(args)
    except MVSError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.debug("Failure details", exc_info=True)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return MVSError.exit_code
    return 0
