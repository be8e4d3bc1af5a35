"""
Dataset command implementation
"""

import os

import torch

from core.dataset import class_name, make_dataset
from core.tensor_io import save_tensor

from ..utils import (
    artifacts_dir,
    console,
    fail,
    finish_run,
    format_rows_table,
    load_run_config,
    prepare_output,
    print_success,
    reports_dir,
    save_png,
    write_tsv,
)


class Args:
    config: str | None
    seed: int | None
    out: str
    overrides: list[str]
    samples: int
    quiet: bool
    verbose: bool


def run(args: Args) -> int:
    """Run dataset command"""
    try:
        config = load_run_config(args)
        prepare_output(args.out)
        data = make_dataset(
            config.dataset.num_images,
            config.dataset.num_classes,
            int(args.seed),  # type: ignore[arg-type]
            config.geometry.image_size,
        )

        out = artifacts_dir(args.out)
        save_tensor(os.path.join(out, "images.rste"), data.images)
        save_tensor(os.path.join(out, "labels.rste"), data.labels.to(torch.uint8))

        previews = os.path.join(out, "previews")
        os.makedirs(previews, exist_ok=True)
        for i in range(min(args.samples, len(data))):
            save_png(os.path.join(previews, f"{i:04d}.png"), data.images[i])

        counts = torch.bincount(data.labels, minlength=config.dataset.num_classes)
        rows = [
            (c, class_name(c), int(counts[c]))
            for c in range(config.dataset.num_classes)
        ]
        write_tsv(
            os.path.join(reports_dir(args.out), "classes.tsv"),
            ("class", "name", "count"),
            rows,
        )

        finish_run(args, "dataset", config, {"num_images": len(data)})

        if not args.quiet:
            console.print(format_rows_table(("class", "name", "count"), rows, "Classes"))
            print_success(f"Wrote {len(data)} images to {out}")
        return 0

    except Exception as e:
        return fail("Dataset", e, args.verbose)
