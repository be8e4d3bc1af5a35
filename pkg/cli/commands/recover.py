"""
Recover command implementation
"""

import os

import torch

from core.latent_injector import BitMessage, bit_accuracy
from core.models import MODEL_KINDS, checkpoint_path, load_bundle
from core.reset_pipeline import metrics, recover_starting_latent
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
    run_with_progress,
    write_tsv,
)


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    source: str
    quiet: bool
    verbose: bool


def _optional_tensor(path: str) -> torch.Tensor | None:
    if not os.path.exists(path):
        return None
    return torch.from_numpy(load_tensor(path))


def run(args: Args) -> int:
    """Run recover command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        checkpoints = checkpoints_dir(args)
        models = load_bundle(checkpoints, config)

        source_artifacts = os.path.join(args.source, ARTIFACTS_DIR)
        generation = read_tsv_report(
            os.path.join(args.source, REPORTS_DIR, "generation.tsv")
        )
        image = torch.from_numpy(load_tensor(os.path.join(source_artifacts, "image.rste")))

        recovery = run_with_progress(
            "Optimizing latent",
            args.quiet,
            lambda callback: recover_starting_latent(
                image,
                models,
                config.latent_opt,
                quantize_pixels=config.pipeline.quantize_pixels,
                progress_callback=callback,
            ),
        )

        report: dict[str, float | int | str] = {
            "cond": int(generation["cond"]),
            "guidance": float(generation["guidance"]),
            "extracted_message": recovery.m_extracted.to_text(),
            **recovery.diagnostics,
        }
        report["bit_accuracy"] = bit_accuracy(
            recovery.m_extracted, BitMessage.from_text(generation["message"])
        )

        z_T = _optional_tensor(os.path.join(source_artifacts, "z_T.rste"))
        z_0 = _optional_tensor(os.path.join(source_artifacts, "z_0.rste"))
        if z_T is not None:
            report["latent_mse"] = metrics(recovery.z_T_star, z_T).mse
        if z_0 is not None:
            report["injection_delta_mse"] = metrics(recovery.z_e_m_opt, z_0).mse
        if z_T is not None and z_0 is not None:
            report["residual_mse"] = metrics(
                recovery.z_e_r, z_T.double() - z_0.double()
            ).mse

        out = artifacts_dir(args.out)
        save_tensor(os.path.join(out, "z_T_star.rste"), recovery.z_T_star)
        save_tensor(os.path.join(out, "z_e_m.rste"), recovery.z_e_m_opt)

        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "recovery.tsv"),
            ("metric", "value"),
            list(report.items()),
        )
        write_tsv(
            os.path.join(reports, "latent_opt.tsv"),
            ("step", "loss"),
            list(enumerate(recovery.loss_history)),
        )

        finish_run(
            args,
            "recover",
            config,
            {"cond": report["cond"], "guidance": report["guidance"]},
            consumed=[checkpoint_path(checkpoints, kind) for kind in MODEL_KINDS],
        )

        if not args.quiet:
            console.print(format_report_table(report, "Recovery"))
            print_success(f"Wrote {os.path.join(out, 'z_T_star.rste')}")
        return 0

    except Exception as e:
        return fail("Recovery", e, args.verbose)
