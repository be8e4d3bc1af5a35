"""
Toy image VAE and the latent refinement that compensates for its
encoder / decoder asymmetry.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import torch
import torch.nn.functional as F
from torch import nn

from .config import LatentOptConfig, PixelCodecConfig
from .errors import ConfigError, ContractError, OptimizationError, TrainingDivergedError
from .random_state import make_generator, seeded


class ImageCodec(Protocol):
    """Anything with image <-> latent maps and known geometries."""

    latent_shape: tuple[int, int, int]
    image_shape: tuple[int, int, int]

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor: ...

    def encode_image(self, x: torch.Tensor) -> torch.Tensor: ...


class PixelCodec(nn.Module):
    def __init__(
        self,
        latent_channels: int = 4,
        latent_size: int = 16,
        image_size: int = 32,
        hidden_channels: int = 64,
    ) -> None:
        super().__init__()
        ratio = image_size // latent_size
        layers = int(round(math.log2(ratio))) if ratio >= 1 else -1
        if layers < 0 or latent_size * 2**layers != image_size:
            raise ConfigError("image_size must be latent_size times a power of two")

        self.latent_channels = latent_channels
        self.latent_size = latent_size
        self.image_size = image_size
        self.hidden_channels = hidden_channels
        h = hidden_channels

        encoder: list[nn.Module] = [nn.Conv2d(3, h, 3, padding=1), nn.SiLU()]
        for _ in range(layers):
            encoder += [nn.Conv2d(h, h, 4, stride=2, padding=1), nn.SiLU()]
        encoder += [nn.Conv2d(h, h, 3, padding=1), nn.SiLU()]
        self.encoder = nn.Sequential(*encoder)
        self.to_moments = nn.Conv2d(h, 2 * latent_channels, 1)

        decoder: list[nn.Module] = [nn.Conv2d(latent_channels, h, 3, padding=1), nn.SiLU()]
        decoder += [nn.Conv2d(h, h, 3, padding=1), nn.SiLU()]
        for _ in range(layers):
            decoder += [nn.ConvTranspose2d(h, h, 4, stride=2, padding=1), nn.SiLU()]
        decoder += [nn.Conv2d(h, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*decoder)

        # Rescales latents to roughly unit variance for the diffusion model.
        self.register_buffer("latent_scale", torch.ones(()))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.image_size, self.image_size)

    def architecture(self) -> dict[str, Any]:
        return {
            "latent_channels": self.latent_channels,
            "latent_size": self.latent_size,
            "image_size": self.image_size,
            "hidden_channels": self.hidden_channels,
        }

    def posterior(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Unscaled posterior (mean, logvar) for a batch of images."""
        mean, logvar = self.to_moments(self.encoder(x)).chunk(2, dim=1)
        return mean, logvar.clamp(-30.0, 20.0)

    def decode_unscaled(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(z))

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        batched = z if z.dim() == 4 else z.unsqueeze(0)
        dtype = self.latent_scale.dtype
        image = self.decode_unscaled(batched.to(dtype) / self.latent_scale)
        image = image.to(z.dtype)
        return image if z.dim() == 4 else image.squeeze(0)

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        batched = x if x.dim() == 4 else x.unsqueeze(0)
        mean, _ = self.posterior(batched.to(self.latent_scale.dtype))
        latent = (mean * self.latent_scale).to(x.dtype)
        return latent if x.dim() == 4 else latent.squeeze(0)


def _check(tensor: torch.Tensor, expected: tuple[int, ...], what: str) -> None:
    if tuple(tensor.shape[-3:]) != tuple(expected) or tensor.dim() not in (3, 4):
        raise ContractError(
            f"{what} shape {tuple(tensor.shape)} does not match {expected}"
        )


@torch.no_grad()
def decode(z: torch.Tensor, codec: ImageCodec) -> torch.Tensor:
    _check(z, codec.latent_shape, "Latent")
    return codec.decode_latent(z)


@torch.no_grad()
def encode(x: torch.Tensor, codec: ImageCodec) -> torch.Tensor:
    _check(x, codec.image_shape, "Image")
    return codec.encode_image(x)


def quantize_image(x: torch.Tensor) -> torch.Tensor:
    """Round-trip through 8-bit pixels."""
    return torch.round(x.clamp(0.0, 1.0) * 255.0) / 255.0


def to_uint8(x: torch.Tensor) -> torch.Tensor:
    return torch.round(x.clamp(0.0, 1.0) * 255.0).to(torch.uint8)


def latent_opt_loss(
    z: torch.Tensor, X_target: torch.Tensor, codec: ImageCodec
) -> torch.Tensor:
    """L_opt = ||D(z) - X||^2, summed over pixels."""
    return (codec.decode_latent(z) - X_target).pow(2).sum()


@dataclass
class LatentOptResult:
    latent: torch.Tensor
    loss_history: list[float] = field(default_factory=list)


def optimize_latent(
    z_init: torch.Tensor,
    X_target: torch.Tensor,
    codec: ImageCodec,
    cfg: LatentOptConfig,
    progress_callback: Callable[[int], None] | None = None,
) -> LatentOptResult:
    """
    Gradient descent on the latent alone, with the codec frozen.

    With backtracking, a step that raises the loss is halved until it does
    not; if no halving helps the latent stays where it is, so the history
    never increases.
    """
    _check(z_init, codec.latent_shape, "Latent")
    _check(X_target, codec.image_shape, "Image")
    if cfg.steps < 0 or cfg.step_size <= 0:
        raise ConfigError("latent optimization needs steps >= 0 and step_size > 0")

    target = X_target.detach()
    z = z_init.detach().clone()

    def loss_at(latent: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return latent_opt_loss(latent, target, codec)

    current = float(loss_at(z))
    history = [current]

    for step in range(cfg.steps):
        trial = z.clone().requires_grad_(True)
        with torch.enable_grad():
            loss = latent_opt_loss(trial, target, codec)
            (grad,) = torch.autograd.grad(loss, trial)
        if not bool(torch.isfinite(grad).all()):
            raise OptimizationError(step)

        step_size = cfg.step_size
        candidate = z - step_size * grad
        candidate_loss = float(loss_at(candidate))

        if cfg.backtracking:
            halvings = 0
            while not candidate_loss <= current and halvings < cfg.max_halvings:
                step_size /= 2
                candidate = z - step_size * grad
                candidate_loss = float(loss_at(candidate))
                halvings += 1
            if not candidate_loss <= current:
                candidate, candidate_loss = z, current

        z, current = candidate.detach(), candidate_loss
        history.append(current)

        if progress_callback:
            progress_callback(int(100 * (step + 1) / cfg.steps))

    return LatentOptResult(latent=z, loss_history=history)


@dataclass
class PixelCodecTrainingResult:
    codec: PixelCodec
    losses: list[float] = field(default_factory=list)


def new_pixel_codec(
    latent_shape: tuple[int, int, int],
    image_size: int,
    cfg: PixelCodecConfig,
    seed: int = 0,
) -> PixelCodec:
    with seeded(seed):
        return PixelCodec(
            latent_channels=latent_shape[0],
            latent_size=latent_shape[1],
            image_size=image_size,
            hidden_channels=cfg.hidden_channels,
        )


def pixel_codec_loss(
    images: torch.Tensor,
    codec: PixelCodec,
    kl_weight: float,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(total, reconstruction) for a batch; reconstruction is a per-element MSE."""
    mean, logvar = codec.posterior(images)
    if generator is None:
        z = mean
    else:
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        z = mean + torch.exp(0.5 * logvar) * eps
    recon = F.mse_loss(codec.decode_unscaled(z), images)
    kl = 0.5 * torch.mean(mean.pow(2) + logvar.exp() - 1.0 - logvar)
    return recon + kl_weight * kl, recon


def train_pixel_codec(
    images: torch.Tensor,
    latent_shape: tuple[int, int, int],
    cfg: PixelCodecConfig,
    seed: int = 0,
    codec: PixelCodec | None = None,
    progress_callback: Callable[[int], None] | None = None,
) -> PixelCodecTrainingResult:
    if images.shape[0] == 0:
        raise ContractError("Cannot train a pixel codec on an empty image set")

    if codec is None:
        codec = new_pixel_codec(latent_shape, int(images.shape[-1]), cfg, seed)
    result = PixelCodecTrainingResult(codec)
    if cfg.steps == 0:
        codec.eval()
        return result

    generator = make_generator(seed + 1)
    optimizer = torch.optim.Adam(codec.parameters(), lr=cfg.learning_rate)
    data = images.to(torch.float32)
    codec.train()

    for step in range(cfg.steps):
        idx = torch.randint(0, data.shape[0], (cfg.batch_size,), generator=generator)
        total, _ = pixel_codec_loss(data[idx], codec, cfg.kl_weight, generator)
        value = float(total.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)

        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        result.losses.append(value)

        if progress_callback:
            progress_callback(int(100 * (step + 1) / cfg.steps))

    codec.eval()
    calibrate_latent_scale(codec, data)
    return result


@torch.no_grad()
def calibrate_latent_scale(codec: PixelCodec, images: torch.Tensor) -> float:
    """Set the scale so encoded latents have unit standard deviation."""
    mean, _ = codec.posterior(images.to(torch.float32))
    std = float(mean.std())
    scale = 1.0 / std if std > 1e-8 and math.isfinite(std) else 1.0
    codec.latent_scale.fill_(scale)
    return scale


@torch.no_grad()
def reconstruction_mse(codec: PixelCodec, images: torch.Tensor) -> float:
    recon = decode(encode(images.to(torch.float32), codec), codec)
    return float(F.mse_loss(recon, images.to(torch.float32)))
