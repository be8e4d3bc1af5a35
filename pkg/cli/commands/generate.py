"""
Generate command implementation
"""

import os

from core.dataset import class_name, parse_condition
from core.diffusion_core import GuidanceConfig
from core.models import MODEL_KINDS, checkpoint_path, load_bundle
from core.reset_pipeline import generate_with_embedding, metrics
from core.tensor_io import save_tensor

from ..utils import (
    artifacts_dir,
    checkpoints_dir,
    console,
    fail,
    finish_run,
    format_report_table,
    load_run_config,
    prepare_output,
    print_success,
    reports_dir,
    save_png,
    write_text,
    write_tsv,
)

# |X^m - decode(z_0)| is tiny; scale it into the visible range.
DIFFERENCE_GAIN: float = 10.0


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    cond: str
    guidance: float | None
    test_mode: bool
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run generate command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        models = load_bundle(checkpoints, config)
        cond = parse_condition(args.cond, config.dataset.num_classes)
        scale = config.pipeline.guidance if args.guidance is None else args.guidance
        record = generate_with_embedding(seed, cond, GuidanceConfig(scale), models)

        out = artifacts_dir(args.out)
        save_png(os.path.join(out, "image.png"), record.X_m)
        save_tensor(os.path.join(out, "image.rste"), record.X_m)
        save_png(os.path.join(out, "clean.png"), record.x_clean)
        difference = ((record.X_m - record.x_clean).abs() * DIFFERENCE_GAIN).clamp(0, 1)
        save_png(os.path.join(out, "difference.png"), difference)
        indices = record.m_r.storage_tensor(models.codec.codebook_size)
        save_tensor(os.path.join(out, "index_map.rste"), indices)
        write_text(os.path.join(out, "message.txt"), record.message.to_text() + "\n")
        if args.test_mode:
            save_tensor(os.path.join(out, "z_T.rste"), record.z_T)
            save_tensor(os.path.join(out, "z_0.rste"), record.z_0)

        injection = metrics(record.X_m, record.x_clean)
        report = {
            "seed": seed,
            "cond": int(cond.id),  # type: ignore[arg-type]
            "class": class_name(int(cond.id)),  # type: ignore[arg-type]
            "guidance": float(scale),
            "message": record.message.to_text(),
            "injection_mse": injection.mse,
            "injection_psnr": injection.psnr,
            "latent_delta_mse": metrics(record.z_0_m, record.z_0).mse,
        }
        write_tsv(
            os.path.join(reports_dir(args.out), "generation.tsv"),
            ("metric", "value"),
            list(report.items()),
        )

        finish_run(
            args,
            "generate",
            config,
            {
                "cond": int(cond.id),  # type: ignore[arg-type]
                "guidance": float(scale),
                "test_mode": bool(args.test_mode),
            },
            consumed=[checkpoint_path(checkpoints, kind) for kind in MODEL_KINDS],
        )

        if not args.quiet:
            console.print(format_report_table(report, "Generation"))
            print_success(f"Wrote {os.path.join(out, 'image.png')}")
        return 0

    except Exception as e:
        return fail("Generation", e, args.verbose)
