"""
Edit command implementation
"""

import os

import torch

from core.dataset import class_name, classify_image, parse_condition
from core.diffusion_core import Condition, GuidanceConfig
from core.models import MODEL_KINDS, checkpoint_path, load_bundle
from core.reset_pipeline import edit
from core.run_manifest import ARTIFACTS_DIR, REPORTS_DIR
from core.tensor_io import load_tensor, save_tensor

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
    read_tsv_report,
    reports_dir,
    save_png,
    write_tsv,
)


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    source: str
    cond: str | None
    guidance: float | None
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run edit command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        checkpoints = checkpoints_dir(args)
        models = load_bundle(checkpoints, config)

        recovery = read_tsv_report(os.path.join(args.source, REPORTS_DIR, "recovery.tsv"))
        z_T_star = torch.from_numpy(
            load_tensor(os.path.join(args.source, ARTIFACTS_DIR, "z_T_star.rste"))
        )

        # Without --cond the original condition is replayed.
        original = Condition(int(recovery["cond"]))
        cond = original
        if args.cond is not None:
            cond = parse_condition(args.cond, config.dataset.num_classes)

        if args.guidance is not None:
            scale = args.guidance
        elif config.pipeline.edit_guidance is not None:
            scale = config.pipeline.edit_guidance
        else:
            scale = float(recovery["guidance"])

        image = edit(z_T_star, cond, GuidanceConfig(scale), models)

        out = artifacts_dir(args.out)
        save_png(os.path.join(out, "edited.png"), image)
        save_tensor(os.path.join(out, "edited.rste"), image)

        predicted = classify_image(image)
        report = {
            "original_cond": int(original.id),  # type: ignore[arg-type]
            "cond": int(cond.id),  # type: ignore[arg-type]
            "class": class_name(int(cond.id)),  # type: ignore[arg-type]
            "guidance": float(scale),
            "predicted_class": "none" if predicted is None else class_name(predicted),
            "class_match": int(predicted == cond.id),
        }
        write_tsv(
            os.path.join(reports_dir(args.out), "edit.tsv"),
            ("metric", "value"),
            list(report.items()),
        )

        finish_run(
            args,
            "edit",
            config,
            {"cond": report["cond"], "guidance": report["guidance"]},
            consumed=[checkpoint_path(checkpoints, kind) for kind in MODEL_KINDS],
        )

        if not args.quiet:
            console.print(format_report_table(report, "Edit"))
            print_success(f"Wrote {os.path.join(out, 'edited.png')}")
        return 0

    except Exception as e:
        return fail("Edit", e, args.verbose)
