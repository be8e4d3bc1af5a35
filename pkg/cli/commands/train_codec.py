"""
Train-codec command implementation
"""

import os

from core.models import (
    DENOISER,
    RESIDUAL_CODEC,
    checkpoint_path,
    load_denoiser,
    save_model,
)
from core.residual_codec import reconstruction_mse, train_codec

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
    print_warning,
    reports_dir,
    run_with_progress,
    sample_training_latents,
    write_tsv,
)

# Starting-latent seeds for training data stay clear of generation seeds.
TRAIN_SEED_OFFSET: int = 1_000_000
HELD_OUT_SEED_OFFSET: int = 3_000_000
HELD_OUT_SAMPLES: int = 64


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run train-codec command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        denoiser_dir = checkpoint_path(checkpoints, DENOISER)
        denoiser = load_denoiser(denoiser_dir)

        _, residuals = sample_training_latents(
            config,
            denoiser,
            config.codec.num_samples,
            seed + TRAIN_SEED_OFFSET,
            args.quiet,
        )
        _, held_out = sample_training_latents(
            config, denoiser, HELD_OUT_SAMPLES, seed + HELD_OUT_SEED_OFFSET, True
        )

        if not args.quiet:
            print_info(f"Training residual codec on {residuals.shape[0]} residuals...")
        result = run_with_progress(
            "Training residual codec",
            args.quiet,
            lambda callback: train_codec(
                residuals, config.codec, seed, progress_callback=callback
            ),
        )

        target = checkpoint_path(checkpoints, RESIDUAL_CODEC)
        save_model(target, RESIDUAL_CODEC, result.codec, config)

        mse = reconstruction_mse(result.codec, held_out)
        variance = float(held_out.var())
        report = {
            "final_loss": result.losses[-1] if result.losses else float("nan"),
            "held_out_mse": mse,
            "residual_variance": variance,
            "mse_reduction": variance / mse if mse > 0 else float("inf"),
            "message_bits": config.message_bits,
        }
        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "train_codec.tsv"),
            ("metric", "value"),
            list(report.items()),
        )
        write_tsv(
            os.path.join(reports, "codec_losses.tsv"),
            ("step", "loss"),
            list(enumerate(result.losses)),
        )

        finish_run(
            args,
            "train-codec",
            config,
            {"samples": int(residuals.shape[0])},
            consumed=[denoiser_dir],
        )

        if not args.quiet:
            console.print(format_report_table(report, "Residual codec"))
            if report["mse_reduction"] < 10:
                print_warning(
                    "Codec reconstruction is less than 10x below the residual variance"
                )
            print_success(f"Saved residual codec to {target}")
        return 0

    except Exception as e:
        return fail("Residual codec training", e, args.verbose)
