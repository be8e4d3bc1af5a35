"""
Procedural coloured-shape images, one class per (shape, colour) pair.
"""

from dataclasses import dataclass

import torch

from .diffusion_core import Condition
from .errors import ConfigError
from .random_state import make_generator

SHAPES: tuple[str, ...] = ("square", "circle", "triangle")
COLOURS: dict[str, tuple[float, float, float]] = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.90, 0.85, 0.15),
}
BACKGROUND: float = 0.45
MAX_CLASSES: int = len(SHAPES) * len(COLOURS)

# Shape-major so the first classes cover every colour of a square.
CLASS_NAMES: tuple[str, ...] = tuple(
    f"{colour} {shape}" for shape in SHAPES for colour in COLOURS
)


@dataclass
class SyntheticDataset:
    images: torch.Tensor
    labels: torch.Tensor

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, index: int) -> tuple[torch.Tensor, Condition]:
        return self.images[index], Condition(int(self.labels[index]))

    @property
    def conditions(self) -> list[Condition]:
        return [Condition(int(label)) for label in self.labels]


def class_name(class_id: int) -> str:
    if not 0 <= class_id < MAX_CLASSES:
        raise ConfigError(f"Class id {class_id} outside [0, {MAX_CLASSES})")
    return CLASS_NAMES[class_id]


def class_id(name: str) -> int:
    normalized = " ".join(name.replace("_", " ").replace("-", " ").lower().split())
    if normalized not in CLASS_NAMES:
        raise ConfigError(f"Unknown class '{name}'")
    return CLASS_NAMES.index(normalized)


def parse_condition(text: str, num_classes: int) -> Condition:
    """Accept either a class id or a class name such as ``"red square"``."""
    value = int(text) if text.strip().isdigit() else class_id(text)
    if not 0 <= value < num_classes:
        raise ConfigError(f"Class {text!r} outside the {num_classes} trained classes")
    return Condition(value)


def shape_mask(shape: str, size: int, cx: float, cy: float, half: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float32) + 0.5
    ys, xs = torch.meshgrid(coords, coords, indexing="ij")
    dx, dy = xs - cx, ys - cy

    if shape == "square":
        return (dx.abs() <= half) & (dy.abs() <= half)
    if shape == "circle":
        return dx.pow(2) + dy.pow(2) <= half**2
    if shape == "triangle":
        # Apex up; width grows linearly from the apex to the base.
        depth = (dy + half) / (2 * half)
        return (depth >= 0) & (depth <= 1) & (dx.abs() <= depth * half)
    raise ConfigError(f"Unknown shape '{shape}'")


def render(class_index: int, size: int, cx: float, cy: float, half: float) -> torch.Tensor:
    colour, shape = class_name(class_index).split(" ")
    image = torch.full((3, size, size), BACKGROUND)
    mask = shape_mask(shape, size, cx, cy, half)
    for channel, value in enumerate(COLOURS[colour]):
        image[channel][mask] = value
    return image


def make_dataset(
    n_images: int, num_classes: int, seed: int = 0, image_size: int = 32
) -> SyntheticDataset:
    if num_classes < 1:
        raise ConfigError("Dataset needs at least one class")
    if not 2 <= num_classes <= MAX_CLASSES:
        raise ConfigError(f"num_classes must lie in [2, {MAX_CLASSES}]")
    if n_images < 1:
        raise ConfigError("Dataset needs at least one image")

    generator = make_generator(seed)
    labels = torch.arange(n_images) % num_classes
    labels = labels[torch.randperm(n_images, generator=generator)]

    scale = image_size / 32
    lo, hi = 6.0 * scale, 10.0 * scale
    images = torch.empty(n_images, 3, image_size, image_size)
    for i in range(n_images):
        u = torch.rand(3, generator=generator)
        half = float(lo + (hi - lo) * u[0])
        cx = float(half + (image_size - 2 * half) * u[1])
        cy = float(half + (image_size - 2 * half) * u[2])
        images[i] = render(int(labels[i]), image_size, cx, cy, half)

    return SyntheticDataset(images=images, labels=labels)


def classify_image(image: torch.Tensor) -> int | None:
    """
    Rule-based classifier: nearest palette colour of the foreground and a
    fill-ratio test for the shape. Returns None when nothing stands out
    from the background.
    """
    foreground = (image - BACKGROUND).abs().amax(dim=0) > 0.2
    count = int(foreground.sum())
    if count == 0:
        return None

    mean = image[:, foreground].mean(dim=1)
    palette = torch.tensor(list(COLOURS.values()))
    colour = list(COLOURS)[int(torch.argmin((palette - mean).pow(2).sum(dim=1)))]

    ys, xs = torch.nonzero(foreground, as_tuple=True)
    box = (int(ys.max() - ys.min()) + 1) * (int(xs.max() - xs.min()) + 1)
    fill = count / box
    if fill > 0.9:
        shape = "square"
    elif fill > 0.65:
        shape = "circle"
    else:
        shape = "triangle"
    return CLASS_NAMES.index(f"{colour} {shape}")
