"""
resetedit CLI - Main entry point
"""

import argparse
import asyncio
import inspect
import os
import sys
import traceback
from typing import NoReturn

# Add current directory to Python path
current_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, current_dir)

from cli.commands import (
    compare,
    dataset,
    diagnose,
    edit,
    generate,
    recover,
    train_codec,
    train_denoiser,
    train_injector,
    train_vae,
)
from cli.utils import exit_code_for, print_error, print_version


class ResetEditParser(argparse.ArgumentParser):
    """Argument parser that exits with 1 on usage errors"""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every command"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, default=None, help="Run seed")
    common.add_argument("--out", default="out", help="Output directory")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a config value (repeatable)",
    )
    common.add_argument(
        "--checkpoints",
        default=None,
        help="Checkpoint directory (default: <out>/checkpoints)",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Verbose output")
    common.add_argument("-q", "--quiet", action="store_true", help="Quiet output")
    return common


def create_parser() -> argparse.ArgumentParser:
    """Create the main argument parser"""
    parser = ResetEditParser(
        prog="resetedit",
        description="resetedit - Resettable starting latents for diffusion editing",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  resetedit dataset --out runs/data          Render the shape dataset
  resetedit train-vae --out runs/models      Train the pixel codec
  resetedit train-denoiser --out runs/models Train the toy denoiser
  resetedit train-codec --out runs/models    Train the residual codec
  resetedit train-injector --out runs/models Train injection / extraction
  resetedit generate --seed 7 --checkpoints runs/models/checkpoints --out runs/gen7
  resetedit recover runs/gen7 --checkpoints runs/models/checkpoints --out runs/rec7
  resetedit edit runs/rec7 --cond "blue square" --out runs/edit7
  resetedit diagnose --guidance 0 --out runs/diag
  resetedit compare --seeds 20 --out runs/compare
        """,
    )
    parser.add_argument("--version", action="store_true", help="Show version")

    common = common_options()
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Dataset command
    dataset_parser = subparsers.add_parser(
        "dataset", parents=[common], help="Render the synthetic dataset"
    )
    dataset_parser.add_argument("--samples", type=int, default=16, help="PNG previews")
    dataset_parser.set_defaults(func=dataset.run)

    # Training commands
    vae_parser = subparsers.add_parser(
        "train-vae", parents=[common], help="Train the pixel codec"
    )
    vae_parser.set_defaults(func=train_vae.run)

    denoiser_parser = subparsers.add_parser(
        "train-denoiser", parents=[common], help="Train the toy denoiser"
    )
    denoiser_parser.set_defaults(func=train_denoiser.run)

    codec_parser = subparsers.add_parser(
        "train-codec", parents=[common], help="Train the residual codec"
    )
    codec_parser.set_defaults(func=train_codec.run)

    injector_parser = subparsers.add_parser(
        "train-injector", parents=[common], help="Train the injector"
    )
    injector_parser.set_defaults(func=train_injector.run)

    # Generate command
    generate_parser = subparsers.add_parser(
        "generate", parents=[common], help="Generate an image carrying its residual"
    )
    generate_parser.add_argument("--cond", default="0", help="Class id or name")
    generate_parser.add_argument("--guidance", type=float, help="Guidance scale")
    generate_parser.add_argument(
        "--test-mode",
        action="store_true",
        help="Also store the ground-truth z_T and z_0",
    )
    generate_parser.set_defaults(func=generate.run)

    # Recover command
    recover_parser = subparsers.add_parser(
        "recover", parents=[common], help="Recover the starting latent of an image"
    )
    recover_parser.add_argument("source", help="Output directory of a generate run")
    recover_parser.set_defaults(func=recover.run)

    # Edit command
    edit_parser = subparsers.add_parser(
        "edit", parents=[common], help="Regenerate from a recovered latent"
    )
    edit_parser.add_argument("source", help="Output directory of a recover run")
    edit_parser.add_argument("--cond", help="New class id or name (default: original)")
    edit_parser.add_argument("--guidance", type=float, help="Edit guidance scale")
    edit_parser.set_defaults(func=edit.run)

    # Diagnose command
    diagnose_parser = subparsers.add_parser(
        "diagnose", parents=[common], help="Inversion error decomposition"
    )
    diagnose_parser.add_argument("--cond", default="0", help="Class id or name")
    diagnose_parser.add_argument("--guidance", type=float, help="Guidance scale")
    diagnose_parser.add_argument(
        "--denoiser",
        choices=diagnose.DENOISER_SOURCES,
        default="checkpoint",
        help="Noise predictor to analyse",
    )
    diagnose_parser.set_defaults(func=diagnose.run)

    # Compare command
    compare_parser = subparsers.add_parser(
        "compare", parents=[common], help="Compare against plain DDIM inversion"
    )
    compare_parser.add_argument("--seeds", type=int, default=20, help="Number of seeds")
    compare_parser.add_argument("--cond", default="0", help="Class id or name")
    compare_parser.add_argument("--guidance", type=float, help="Guidance scale")
    compare_parser.set_defaults(func=compare.run)

    return parser


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point"""
    parser = create_parser()
    args: argparse.Namespace = parser.parse_args(argv)

    if getattr(args, "version", False):
        print_version()
        return 0

    if hasattr(args, "func"):
        try:
            if inspect.iscoroutinefunction(args.func):
                return asyncio.run(args.func(args))
            else:
                return args.func(args)
        except KeyboardInterrupt:
            print("\nOperation cancelled by user")
            return 1
        except Exception as e:
            if getattr(args, "verbose", False):
                traceback.print_exc()
            print_error(str(e))
            return exit_code_for(e)
    else:
        parser.print_help()
        return 0


if __name__ == "__main__":
    sys.exit(main())
