"""
Train-injector command implementation
"""

import os

import torch

from core.latent_injector import (
    IDENTITY_NOISE,
    NoiseLayer,
    evaluate_injector,
    random_messages,
    robustness_sweep,
    train_injector,
)
from core.models import (
    DENOISER,
    INJECTOR,
    PIXEL_CODEC,
    checkpoint_path,
    load_denoiser,
    load_pixel_codec,
    save_model,
)
from core.pixel_codec import decode
from core.random_state import make_generator
from core.reset_pipeline import metrics

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

TRAIN_SEED_OFFSET: int = 2_000_000
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
    """Run train-injector command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        denoiser_dir = checkpoint_path(checkpoints, DENOISER)
        vae_dir = checkpoint_path(checkpoints, PIXEL_CODEC)
        denoiser = load_denoiser(denoiser_dir)
        pixel_codec = load_pixel_codec(vae_dir)
        noise = NoiseLayer.from_config(config.noise)

        latents, _ = sample_training_latents(
            config,
            denoiser,
            config.injector.num_samples,
            seed + TRAIN_SEED_OFFSET,
            args.quiet,
        )
        held_out, _ = sample_training_latents(
            config, denoiser, HELD_OUT_SAMPLES, seed + HELD_OUT_SEED_OFFSET, True
        )

        if not args.quiet:
            print_info(
                f"Training injector on {latents.shape[0]} latents "
                f"({config.message_bits}-bit messages)..."
            )
        result = run_with_progress(
            "Training injector",
            args.quiet,
            lambda callback: train_injector(
                latents,
                config.message_bits,
                config.injector,
                noise,
                seed,
                progress_callback=callback,
            ),
        )
        injector = result.injector

        target = checkpoint_path(checkpoints, INJECTOR)
        save_model(target, INJECTOR, injector, config)

        noisy = evaluate_injector(injector, held_out, noise, seed)
        clean = evaluate_injector(injector, held_out, IDENTITY_NOISE, seed)
        with torch.no_grad():
            messages = random_messages(
                held_out.shape[0], config.message_bits, make_generator(seed)
            )
            injected = injector.embed(held_out, messages)
        image = metrics(decode(injected, pixel_codec), decode(held_out, pixel_codec))

        report = {
            "final_loss": result.losses[-1] if result.losses else float("nan"),
            "bit_accuracy_noise_layer": noisy.bit_accuracy,
            "bit_accuracy_clean": clean.bit_accuracy,
            "injection_mse": clean.injection_mse,
            "image_mse": image.mse,
            "image_psnr": image.psnr,
        }
        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "train_injector.tsv"),
            ("metric", "value"),
            list(report.items()),
        )
        write_tsv(
            os.path.join(reports, "injector_losses.tsv"),
            ("step", "loss"),
            list(enumerate(result.losses)),
        )
        write_tsv(
            os.path.join(reports, "robustness.tsv"),
            ("sigma", "bit_accuracy"),
            robustness_sweep(
                injector, held_out, filter_kernel=config.noise.filter_kernel, seed=seed
            ),
        )

        finish_run(
            args,
            "train-injector",
            config,
            {"samples": int(latents.shape[0]), "message_bits": config.message_bits},
            consumed=[denoiser_dir, vae_dir],
        )

        if not args.quiet:
            console.print(format_report_table(report, "Injector"))
            if clean.injection_mse > config.injector.mse_budget:
                print_warning(
                    f"Injection MSE {clean.injection_mse:.3g} exceeds the budget "
                    f"{config.injector.mse_budget:.3g}"
                )
            print_success(f"Saved injector to {target}")
        return 0

    except Exception as e:
        return fail("Injector training", e, args.verbose)
