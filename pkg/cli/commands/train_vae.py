"""
Train-vae command implementation
"""

import os

from core.dataset import make_dataset
from core.models import PIXEL_CODEC, checkpoint_path, save_model
from core.pixel_codec import reconstruction_mse, train_pixel_codec
from core.reset_pipeline import psnr_from_mse

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

HELD_OUT_IMAGES: int = 64


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run train-vae command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        geometry = config.geometry

        data = make_dataset(
            config.dataset.num_images,
            config.dataset.num_classes,
            seed,
            geometry.image_size,
        )
        held_out = make_dataset(
            HELD_OUT_IMAGES, config.dataset.num_classes, seed + 1, geometry.image_size
        )

        if not args.quiet:
            print_info(f"Training pixel codec on {len(data)} images...")
        result = run_with_progress(
            "Training pixel codec",
            args.quiet,
            lambda callback: train_pixel_codec(
                data.images,
                geometry.latent_shape,
                config.pixel_codec,
                seed,
                progress_callback=callback,
            ),
        )

        target = checkpoint_path(checkpoints_dir(args), PIXEL_CODEC)
        save_model(target, PIXEL_CODEC, result.codec, config)

        mse = reconstruction_mse(result.codec, held_out.images)
        report = {
            "final_loss": result.losses[-1] if result.losses else float("nan"),
            "held_out_mse": mse,
            "held_out_psnr": psnr_from_mse(mse),
            "latent_scale": float(result.codec.latent_scale),
        }
        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "train_vae.tsv"),
            ("metric", "value"),
            list(report.items()),
        )
        write_tsv(
            os.path.join(reports, "vae_losses.tsv"),
            ("step", "loss"),
            list(enumerate(result.losses)),
        )

        finish_run(args, "train-vae", config, {"images": len(data)})

        if not args.quiet:
            console.print(format_report_table(report, "Pixel codec"))
            print_success(f"Saved pixel codec to {target}")
        return 0

    except Exception as e:
        return fail("Pixel codec training", e, args.verbose)
