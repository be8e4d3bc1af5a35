"""
CLI utility functions
"""

import os
import traceback
from importlib.metadata import PackageNotFoundError, version
from typing import Any, Callable, Sequence

import numpy as np
import torch
from PIL import Image
from rich.console import Console
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
)
from rich.table import Table

from core.checkpoint import checkpoint_digest
from core.config import Config, load_config
from core.diffusion_core import Condition, GuidanceConfig, NoiseSchedule
from core.errors import OptimizationError, TrainingDivergedError
from core.pixel_codec import to_uint8
from core.reset_pipeline import sample_latents
from core.run_manifest import (
    ARTIFACTS_DIR,
    CHECKPOINTS_DIR,
    REPORTS_DIR,
    RunManifest,
    digest_tree,
    setup_run_directory,
    write_manifest,
)
from core.tensor_io import atomic_write

console: Console = Console()

ACCENT_COLOR: str = "#7aa2f7"
HIGHLIGHT_COLOR: str = "#9ece6a"
SELECTION_COLOR: str = "#bb9af7"
SECTION_COLOR: str = "#e0af68"
ERROR_COLOR: str = "#f7768e"

EXIT_OK: int = 0
EXIT_ERROR: int = 1
EXIT_DIVERGED: int = 2


def print_version() -> None:
    """Print resetedit version"""
    try:
        __version__: str = version("resetedit")
    except PackageNotFoundError:
        __version__ = "0.1.0"
    console.print(
        f"resetedit {__version__}", style=f"bold {ACCENT_COLOR}", highlight=False
    )
    console.print("Resettable starting latents for diffusion editing", highlight=False)


def print_success(message: str) -> None:
    """Print success message"""
    console.print(f"[bold {HIGHLIGHT_COLOR}]SUCCESS[/] {message}", highlight=False)


def print_error(message: str) -> None:
    """Print error message"""
    console.print(f"[bold {ERROR_COLOR}]ERROR[/] {message}", highlight=False)


def print_warning(message: str) -> None:
    """Print warning message"""
    console.print(f"[bold {SECTION_COLOR}]WARNING[/] {message}", highlight=False)


def print_info(message: str) -> None:
    """Print info message"""
    console.print(f"[bold {ACCENT_COLOR}]INFO[/] {message}", highlight=False)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (TrainingDivergedError, OptimizationError)):
        return EXIT_DIVERGED
    return EXIT_ERROR


def fail(action: str, error: Exception, verbose: bool = False) -> int:
    """Report a failed command and return its exit code"""
    if verbose:
        console.print(traceback.format_exc(), highlight=False)
    print_error(f"{action} failed: {error}")
    return exit_code_for(error)


def create_progress() -> Progress:
    """Create a rich progress bar"""
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(
            bar_width=40,
            style="grey70",
            complete_style=SELECTION_COLOR,
            finished_style=SELECTION_COLOR,
        ),
        TextColumn(
            f"[{SELECTION_COLOR}][progress.percentage]{{task.percentage:>3.0f}}%[/]"
        ),
        console=console,
    )


def run_with_progress(
    description: str, quiet: bool, work: Callable[[Callable[[int], None] | None], Any]
) -> Any:
    """Call ``work(progress_callback)`` under a progress bar unless quiet"""
    if quiet:
        return work(None)

    with create_progress() as progress:
        task_id = progress.add_task(description, total=100)

        def callback(percent: int) -> None:
            progress.update(task_id, completed=percent)

        return work(callback)


# Run directories


def load_run_config(args: Any) -> Config:
    config = load_config(args.config, list(args.overrides or []))
    if args.seed is None:
        args.seed = config.seed
    return config


def artifacts_dir(out_dir: str) -> str:
    return os.path.join(out_dir, ARTIFACTS_DIR)


def reports_dir(out_dir: str) -> str:
    return os.path.join(out_dir, REPORTS_DIR)


def checkpoints_dir(args: Any) -> str:
    if getattr(args, "checkpoints", None):
        return str(args.checkpoints)
    return os.path.join(args.out, CHECKPOINTS_DIR)


def prepare_output(out_dir: str) -> None:
    setup_run_directory(out_dir)


def finish_run(
    args: Any,
    command: str,
    config: Config,
    params: dict[str, Any],
    consumed: Sequence[str] = (),
) -> None:
    """Write the run manifest for ``args.out``"""
    checkpoints: dict[str, str] = {}
    for directory in consumed:
        name = os.path.basename(os.path.normpath(directory))
        for rel, digest in checkpoint_digest(directory).items():
            checkpoints[f"{name}/{rel}"] = digest

    manifest: RunManifest = {
        "command": command,
        "seed": int(args.seed),
        "config_digest": config.digest(),
        "params": params,
        "checkpoints": checkpoints,
        "artifacts": digest_tree(args.out),
    }
    write_manifest(args.out, manifest)


def write_text(path: str, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def write_tsv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_cell(value) for value in row))
    write_text(path, "\n".join(lines) + "\n")


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def read_tsv_report(path: str) -> dict[str, str]:
    """Read a two-column key/value report"""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        next(f, None)
        for line in f:
            key, _, value = line.rstrip("\n").partition("\t")
            if key:
                values[key] = value
    return values


def save_png(path: str, image: torch.Tensor) -> None:
    """Write a [3, H, W] image in [0, 1] as 8-bit RGB PNG"""
    pixels = to_uint8(image.detach().cpu()).permute(1, 2, 0).numpy()
    tmp = path + ".tmp"
    try:
        Image.fromarray(np.ascontiguousarray(pixels)).save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise IOError(f"Error writing {path}") from e


# Tables


def format_report_table(values: dict[str, Any], title: str = "Report") -> Table:
    """Format key/value diagnostics as a rich table"""
    table: Table = Table(
        title=f"[bold {ACCENT_COLOR}]{title}[/]", border_style=ACCENT_COLOR
    )
    table.add_column("Metric", style="bold white")
    table.add_column("Value", style=SECTION_COLOR)
    for key, value in values.items():
        table.add_row(key, _cell(value))
    return table


def format_rows_table(
    header: Sequence[str], rows: Sequence[Sequence[Any]], title: str
) -> Table:
    """Format tabular rows as a rich table"""
    table: Table = Table(
        title=f"[bold {ACCENT_COLOR}]{title}[/]", border_style=ACCENT_COLOR
    )
    for position, name in enumerate(header):
        table.add_column(name, style="bold white" if position == 0 else SECTION_COLOR)
    for row in rows:
        table.add_row(*(_cell(value) for value in row))
    return table


def sample_training_latents(
    config: Config,
    denoiser: Any,
    count: int,
    seed: int,
    quiet: bool,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(z_0, z_T - z_0) pairs from seeded generations cycling through the classes"""
    classes = config.dataset.num_classes
    conditions = [Condition(i % classes) for i in range(count)]
    return run_with_progress(
        "Sampling latents",
        quiet,
        lambda callback: sample_latents(
            denoiser,
            NoiseSchedule.from_config(config.schedule),
            config.geometry.latent_shape,
            conditions,
            GuidanceConfig(config.pipeline.guidance),
            seed,
            progress_callback=callback,
        ),
    )
