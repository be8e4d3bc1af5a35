"""
Checkpoint round trips for every trained component and the bundle loader
used by the inference commands.
"""

import os
from typing import Any

import torch

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import Config
from .denoiser import NetworkPredictor, ToyDenoiser
from .diffusion_core import NoiseSchedule
from .errors import ConfigError
from .latent_injector import Injector, bits_per_index
from .pixel_codec import PixelCodec
from .reset_pipeline import ModelBundle
from .residual_codec import ResidualCodec

DENOISER: str = "denoiser"
RESIDUAL_CODEC: str = "residual_codec"
INJECTOR: str = "injector"
PIXEL_CODEC: str = "pixel_codec"

MODEL_KINDS: tuple[str, ...] = (PIXEL_CODEC, DENOISER, RESIDUAL_CODEC, INJECTOR)


def save_model(
    directory: str,
    kind: str,
    module: torch.nn.Module,
    config: Config | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    if kind not in MODEL_KINDS:
        raise ConfigError(f"Unknown model kind '{kind}'")
    checkpoint = ModelCheckpoint.from_module(
        kind,
        module,
        architecture=module.architecture(),  # type: ignore[operator]
        config=config.to_dict() if config else None,
        extra=extra,
    )
    save_checkpoint(directory, checkpoint)


def _restore(module: torch.nn.Module, checkpoint: ModelCheckpoint) -> torch.nn.Module:
    module.load_state_dict(checkpoint.state_dict())
    module.eval()
    return module


def load_denoiser(directory: str) -> NetworkPredictor:
    checkpoint = load_checkpoint(directory, DENOISER)
    model = _restore(ToyDenoiser(**checkpoint.architecture), checkpoint)
    latent_shape = tuple(checkpoint.extra["latent_shape"])
    return NetworkPredictor(model, latent_shape)  # type: ignore[arg-type]


def load_residual_codec(directory: str) -> ResidualCodec:
    checkpoint = load_checkpoint(directory, RESIDUAL_CODEC)
    module = ResidualCodec(**checkpoint.architecture)
    return _restore(module, checkpoint)  # type: ignore[return-value]


def load_injector(directory: str) -> Injector:
    checkpoint = load_checkpoint(directory, INJECTOR)
    module = Injector(**checkpoint.architecture)
    return _restore(module, checkpoint)  # type: ignore[return-value]


def load_pixel_codec(directory: str) -> PixelCodec:
    checkpoint = load_checkpoint(directory, PIXEL_CODEC)
    module = PixelCodec(**checkpoint.architecture)
    return _restore(module, checkpoint)  # type: ignore[return-value]


def checkpoint_path(checkpoints_dir: str, kind: str) -> str:
    return os.path.join(checkpoints_dir, kind)


def load_bundle(checkpoints_dir: str, config: Config) -> ModelBundle:
    denoiser = load_denoiser(checkpoint_path(checkpoints_dir, DENOISER))
    codec = load_residual_codec(checkpoint_path(checkpoints_dir, RESIDUAL_CODEC))
    injector = load_injector(checkpoint_path(checkpoints_dir, INJECTOR))
    pixel_codec = load_pixel_codec(checkpoint_path(checkpoints_dir, PIXEL_CODEC))

    shapes = {
        DENOISER: tuple(denoiser.latent_shape or ()),
        RESIDUAL_CODEC: codec.latent_shape,
        INJECTOR: injector.latent_shape,
        PIXEL_CODEC: pixel_codec.latent_shape,
    }
    if len(set(shapes.values())) != 1:
        raise ConfigError(f"Checkpoints disagree on the latent geometry: {shapes}")
    expected_bits = codec.index_size**2 * bits_per_index(codec.codebook_size)
    if injector.message_length != expected_bits:
        raise ConfigError(
            f"Injector carries {injector.message_length} bits, codec needs {expected_bits}"
        )

    return ModelBundle(
        denoiser=denoiser,
        codec=codec,
        injector=injector,
        pixel_codec=pixel_codec,
        schedule=NoiseSchedule.from_config(config.schedule),
    )
