"""
Diagnose command implementation
"""

import os

import torch

from core.config import Config
from core.dataset import parse_condition
from core.denoiser import LinearGaussianOracle, NoisePredictor, new_network_predictor
from core.diffusion_core import (
    GuidanceConfig,
    NoiseSchedule,
    schedule_table_tsv,
    trajectory_errors,
)
from core.models import DENOISER, checkpoint_path, load_denoiser
from core.random_state import make_generator
from core.reset_pipeline import draw_starting_latent

from ..utils import (
    checkpoints_dir,
    console,
    fail,
    finish_run,
    format_rows_table,
    load_run_config,
    prepare_output,
    print_success,
    reports_dir,
    write_text,
    write_tsv,
)

DENOISER_SOURCES: tuple[str, ...] = ("checkpoint", "random", "oracle")
STEP_ERROR_HEADER: tuple[str, ...] = ("t", "condition_drift", "estimation_error", "total")


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    cond: str
    guidance: float | None
    denoiser: str
    quiet: bool
    verbose: bool


def build_denoiser(
    source: str, config: Config, schedule: NoiseSchedule, seed: int, checkpoints: str
) -> NoisePredictor:
    latent_shape = config.geometry.latent_shape
    classes = config.dataset.num_classes
    if source == "checkpoint":
        return load_denoiser(checkpoint_path(checkpoints, DENOISER))
    if source == "random":
        return new_network_predictor(latent_shape, config.denoiser, classes, seed)

    # Per-class Gaussian data with random means; the null row is their average.
    means = torch.randn((classes, *latent_shape), generator=make_generator(seed))
    means = torch.cat([means, means.mean(dim=0, keepdim=True)])
    return LinearGaussianOracle(means, 0.25, schedule.alpha_table)


def run(args: Args) -> int:
    """Run diagnose command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        schedule = NoiseSchedule.from_config(config.schedule)
        denoiser = build_denoiser(args.denoiser, config, schedule, seed, checkpoints)
        cond = parse_condition(args.cond, config.dataset.num_classes)
        scale = config.pipeline.guidance if args.guidance is None else args.guidance

        z_T = draw_starting_latent(seed, config.geometry.latent_shape)
        reports = trajectory_errors(z_T, denoiser, cond, GuidanceConfig(scale), schedule)
        rows = [
            (
                report.t,
                report.rms()["condition_drift"],
                report.rms()["estimation_error"],
                report.rms()["total"],
            )
            for report in reports
        ]

        out = reports_dir(args.out)
        write_text(os.path.join(out, "schedule.tsv"), schedule_table_tsv(schedule))
        write_tsv(os.path.join(out, "step_errors.tsv"), STEP_ERROR_HEADER, rows)

        consumed = []
        if args.denoiser == "checkpoint":
            consumed.append(checkpoint_path(checkpoints, DENOISER))
        finish_run(
            args,
            "diagnose",
            config,
            {
                "cond": int(cond.id),  # type: ignore[arg-type]
                "guidance": float(scale),
                "denoiser": args.denoiser,
            },
            consumed=consumed,
        )

        if not args.quiet:
            console.print(
                format_rows_table(STEP_ERROR_HEADER, rows, f"Inversion error (w={scale})")
            )
            print_success(f"Wrote reports to {out}")
        return 0

    except Exception as e:
        return fail("Diagnosis", e, args.verbose)
