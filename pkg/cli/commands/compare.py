"""
Compare command implementation
"""

import asyncio
import os
import statistics
from typing import Any

from core.dataset import parse_condition
from core.diffusion_core import Condition, GuidanceConfig
from core.models import MODEL_KINDS, checkpoint_path, load_bundle
from core.reset_pipeline import (
    BaselineComparison,
    ModelBundle,
    compare_baseline,
    generate_with_embedding,
    guidance_sweep,
)

from ..utils import (
    checkpoints_dir,
    console,
    fail,
    finish_run,
    format_rows_table,
    load_run_config,
    prepare_output,
    print_info,
    print_success,
    print_warning,
    reports_dir,
    write_tsv,
)

METHODS: tuple[str, ...] = ("resetedit", "resetedit_no_opt", "ddim_inversion")


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    checkpoints: str | None
    seeds: int
    cond: str
    guidance: float | None
    quiet: bool
    verbose: bool


def compare_seed(
    seed: int, cond: Condition, scale: float, models: ModelBundle, config: Any
) -> BaselineComparison:
    record = generate_with_embedding(seed, cond, GuidanceConfig(scale), models)
    return compare_baseline(
        record, models, config.latent_opt, config.pipeline.quantize_pixels
    )


async def run(args: Args) -> int:
    """Run compare command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        seed = int(args.seed)  # type: ignore[arg-type]
        checkpoints = checkpoints_dir(args)

        models = load_bundle(checkpoints, config)
        cond = parse_condition(args.cond, config.dataset.num_classes)
        scale = config.pipeline.guidance if args.guidance is None else args.guidance
        seeds = list(range(seed, seed + args.seeds))

        if not args.quiet:
            print_info(f"Comparing {len(seeds)} seeds at w={scale}...")
        results: list[BaselineComparison] = await asyncio.gather(
            *[
                asyncio.to_thread(compare_seed, s, cond, scale, models, config)
                for s in seeds
            ]
        )

        rows = [
            (result.seed, method, report.latent_mse, report.replay_mse)
            for result in results
            for method in METHODS
            for report in [result.by_method(method)]
        ]

        # Per-step errors exist only for the inversion baseline; t runs T..1.
        step_rows = []
        for result in results:
            steps = result.by_method("ddim_inversion").step_error_rms
            for position, rms in enumerate(steps):
                step_rows.append((result.seed, len(steps) - position, rms))

        summary = []
        for method in METHODS:
            latent = [r.by_method(method).latent_mse for r in results]
            replay = [r.by_method(method).replay_mse for r in results]
            summary.append(
                (method, statistics.median(latent), statistics.median(replay))
            )

        sweep = guidance_sweep(seed, cond, config.pipeline.guidance_sweep, models)
        sweep_rows = [
            (
                w,
                int(step["t"]),
                step["condition_drift"],
                step["estimation_error"],
                step["total"],
            )
            for w, steps in sweep.items()
            for step in steps
        ]
        drift_by_w = [
            (w, statistics.median([step["condition_drift"] for step in steps]))
            for w, steps in sweep.items()
        ]

        reports = reports_dir(args.out)
        write_tsv(
            os.path.join(reports, "comparison.tsv"),
            ("seed", "method", "latent_mse", "replay_mse"),
            rows,
        )
        write_tsv(
            os.path.join(reports, "inversion_steps.tsv"),
            ("seed", "t", "total_rms"),
            step_rows,
        )
        write_tsv(
            os.path.join(reports, "summary.tsv"),
            ("method", "median_latent_mse", "median_replay_mse"),
            summary,
        )
        write_tsv(
            os.path.join(reports, "guidance_sweep.tsv"),
            ("w", "t", "condition_drift", "estimation_error", "total"),
            sweep_rows,
        )

        finish_run(
            args,
            "compare",
            config,
            {
                "cond": int(cond.id),  # type: ignore[arg-type]
                "guidance": float(scale),
                "seeds": len(seeds),
            },
            consumed=[checkpoint_path(checkpoints, kind) for kind in MODEL_KINDS],
        )

        if not args.quiet:
            console.print(
                format_rows_table(
                    ("method", "median latent MSE", "median replay MSE"),
                    summary,
                    "Starting-latent recovery",
                )
            )
            console.print(
                format_rows_table(
                    ("w", "median drift RMS"), drift_by_w, "Condition drift by guidance"
                )
            )
            medians = {method: latent for method, latent, _ in summary}
            if medians["resetedit"] > medians["resetedit_no_opt"]:
                print_warning("Latent refinement made the recovered latents worse")
            reset, ddim = medians["resetedit"], medians["ddim_inversion"]
            if reset >= ddim:
                print_warning("Recovered latents are not closer than DDIM inversion")
            print_success(f"Wrote reports to {reports}")
        return 0

    except Exception as e:
        return fail("Comparison", e, args.verbose)
