"""
Train-denoiser command implementation
"""

import os

import torch

from core.dataset import make_dataset
from core.denoiser import evaluate_denoiser_loss, train_denoiser
from core.diffusion_core import NoiseSchedule
from core.models import (
    DENOISER,
    PIXEL_CODEC,
    checkpoint_path,
    load_pixel_codec,
    save_model,
)
from core.pixel_codec import encode

from ..utils import (
    checkpoints_dir,
    console,
    fail,
    finish_run,
    format_report_table,
    load_run_config,
    prepare_output,
    print_info,
    print_success,
    reports_dir,
    run_with_progress,
    write_tsv,
)


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run train-denoiser command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        vae_dir = checkpoint_path(checkpoints, PIXEL_CODEC)
        pixel_codec = load_pixel_codec(vae_dir)
        data = make_dataset(
            config.dataset.num_images,
            config.dataset.num_classes,
            seed,
            config.geometry.image_size,
        )
        held_out = make_dataset(
            256, config.dataset.num_classes, seed + 1, config.geometry.image_size
        )
        latents = encode(data.images, pixel_codec)
        schedule = NoiseSchedule.from_config(config.schedule)

        if not args.quiet:
            print_info(f"Training denoiser on {len(data)} latents...")
        result = run_with_progress(
            "Training denoiser",
            args.quiet,
            lambda callback: train_denoiser(
                latents,
                data.labels,
                config.denoiser,
                schedule,
                config.dataset.num_classes,
                seed,
                progress_callback=callback,
            ),
        )

        target = checkpoint_path(checkpoints, DENOISER)
        save_model(
            target,
            DENOISER,
            result.predictor.model,
            config,
            extra={"latent_shape": list(config.geometry.latent_shape)},
        )

        with torch.no_grad():
            held_out_latents = encode(held_out.images, pixel_codec)
        report = {
            "final_loss": result.losses[-1] if result.losses else float("nan"),
            "held_out_loss": evaluate_denoiser_loss(
                result.predictor, held_out_latents, held_out.labels, schedule, seed
            ),
            "latent_std": float(latents.std()),
        }
        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "train_denoiser.tsv"),
            ("metric", "value"),
            list(report.items()),
        )
        write_tsv(
            os.path.join(reports, "denoiser_losses.tsv"),
            ("step", "loss"),
            list(enumerate(result.losses)),
        )

        finish_run(
            args, "train-denoiser", config, {"latents": len(data)}, consumed=[vae_dir]
        )

        if not args.quiet:
            console.print(format_report_table(report, "Denoiser"))
            print_success(f"Saved denoiser to {target}")
        return 0

    except Exception as e:
        return fail("Denoiser training", e, args.verbose)
