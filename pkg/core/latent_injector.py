"""
Bit-level transport of an index map through the image latent.

Indices are serialized row-major, most significant bit first. An injection
network adds a small learned perturbation carrying the message; an
extraction network reads it back after a noise layer that stands in for
the decode / re-encode round trip.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import InjectorConfig, NoiseConfig
from .errors import ConfigError, ContractError, TrainingDivergedError
from .random_state import make_generator, seeded
from .residual_codec import IndexMap


@dataclass(frozen=True, eq=False)
class BitMessage:
    bits: torch.Tensor

    def __post_init__(self) -> None:
        bits = torch.as_tensor(self.bits).reshape(-1)
        if bits.numel() and not bool(((bits == 0) | (bits == 1)).all()):
            raise ContractError("BitMessage holds values other than 0 and 1")
        object.__setattr__(self, "bits", bits.to(torch.uint8))

    def __len__(self) -> int:
        return int(self.bits.numel())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BitMessage) and torch.equal(self.bits, other.bits)

    def to_text(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    @classmethod
    def from_text(cls, text: str) -> "BitMessage":
        cleaned = "".join(text.split())
        if any(c not in "01" for c in cleaned):
            raise ContractError("Bit text may only contain '0' and '1'")
        return cls(torch.tensor([int(c) for c in cleaned], dtype=torch.uint8))

    def as_float(self) -> torch.Tensor:
        return self.bits.to(torch.float32)


def bits_per_index(K: int) -> int:
    if K < 2 or K & (K - 1):
        raise ConfigError(f"Codebook size {K} is not a power of two >= 2")
    return K.bit_length() - 1


def serialize_indices(m_r: IndexMap, K: int) -> BitMessage:
    width = bits_per_index(K)
    flat = m_r.indices.reshape(-1)
    if flat.numel() and (int(flat.min()) < 0 or int(flat.max()) >= K):
        raise ContractError(f"Index outside [0, {K})")
    shifts = torch.arange(width - 1, -1, -1)
    bits = (flat[:, None] >> shifts[None, :]) & 1
    return BitMessage(bits.reshape(-1))


def deserialize_indices(bits: BitMessage, K: int, H: int, W: int) -> IndexMap:
    width = bits_per_index(K)
    if len(bits) != H * W * width:
        raise ContractError(
            f"Message holds {len(bits)} bits, expected {H * W * width} for {H}x{W} K={K}"
        )
    grouped = bits.bits.to(torch.long).reshape(H * W, width)
    weights = 2 ** torch.arange(width - 1, -1, -1)
    return IndexMap((grouped * weights[None, :]).sum(dim=1).reshape(H, W))


@dataclass(frozen=True)
class NoiseLayer:
    gaussian_sigma: float = 0.05
    filter_kernel: int = 7
    filter_sigma: float | None = None

    def __post_init__(self) -> None:
        if self.gaussian_sigma < 0:
            raise ContractError("gaussian_sigma must be >= 0")
        if self.filter_kernel < 1 or self.filter_kernel % 2 == 0:
            raise ContractError("filter_kernel must be an odd integer >= 1")

    @classmethod
    def from_config(cls, cfg: NoiseConfig) -> "NoiseLayer":
        return cls(cfg.gaussian_sigma, cfg.filter_kernel, cfg.filter_sigma)

    @property
    def kernel_sigma(self) -> float:
        if self.filter_sigma is not None:
            return self.filter_sigma
        # OpenCV's default sigma for a given aperture.
        return 0.3 * ((self.filter_kernel - 1) * 0.5 - 1) + 0.8


IDENTITY_NOISE = NoiseLayer(0.0, 1)


def gaussian_kernel(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    weights = torch.exp(-(coords**2) / (2 * sigma**2))
    weights = weights / weights.sum()
    return torch.outer(weights, weights)


def apply_noise(
    z_m: torch.Tensor,
    noise: NoiseLayer,
    seed: int | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Gaussian noise then a channelwise normalized blur; differentiable in z_m."""
    if generator is None:
        generator = make_generator(0 if seed is None else seed)

    out = z_m
    if noise.gaussian_sigma > 0:
        sample = torch.randn(z_m.shape, generator=generator, dtype=z_m.dtype)
        out = out + noise.gaussian_sigma * sample

    k = noise.filter_kernel
    if k > 1:
        batched = out if out.dim() == 4 else out.unsqueeze(0)
        channels = batched.shape[1]
        kernel = gaussian_kernel(k, noise.kernel_sigma).to(batched.dtype)
        weight = kernel.expand(channels, 1, k, k).contiguous()
        padded = F.pad(batched, (k // 2,) * 4, mode="replicate")
        blurred = F.conv2d(padded, weight, groups=channels)
        out = blurred if out.dim() == 4 else blurred.squeeze(0)
    return out


class Injector(nn.Module):
    """
    Message-expansion injector and mirrored extractor.

    The message is projected to a spatial plane, fused with latent features
    and turned into an additive residual. The last injection layer starts at
    zero so an untrained injector leaves the latent untouched.
    """

    def __init__(
        self,
        latent_channels: int = 4,
        latent_size: int = 16,
        message_length: int = 64,
        hidden_channels: int = 64,
        injection_weight: float = 0.1,
    ) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        self.latent_size = latent_size
        self.message_length = message_length
        self.hidden_channels = hidden_channels
        self.injection_weight = injection_weight

        c, h, area = latent_channels, hidden_channels, latent_size * latent_size
        self.message_plane = nn.Linear(message_length, area)
        self.latent_features = nn.Sequential(
            nn.Conv2d(c, h, 3, padding=1), nn.BatchNorm2d(h), nn.ReLU()
        )
        self.message_features = nn.Sequential(
            nn.Conv2d(1, h, 3, padding=1), nn.BatchNorm2d(h), nn.ReLU()
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * h + c, h, 3, padding=1), nn.BatchNorm2d(h), nn.ReLU()
        )
        self.to_residual = nn.Conv2d(h, c, 1)
        nn.init.zeros_(self.to_residual.weight)
        nn.init.zeros_(self.to_residual.bias)

        self.extract_features = nn.Sequential(
            nn.Conv2d(c, h, 3, padding=1), nn.BatchNorm2d(h), nn.ReLU(),
            nn.Conv2d(h, h, 3, padding=1), nn.BatchNorm2d(h), nn.ReLU(),
            nn.Conv2d(h, 1, 1),
        )
        self.to_logits = nn.Linear(area, message_length)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    def architecture(self) -> dict[str, Any]:
        return {
            "latent_channels": self.latent_channels,
            "latent_size": self.latent_size,
            "message_length": self.message_length,
            "hidden_channels": self.hidden_channels,
            "injection_weight": self.injection_weight,
        }

    def _batched(self, z: torch.Tensor) -> torch.Tensor:
        batched = z if z.dim() == 4 else z.unsqueeze(0)
        if tuple(batched.shape[1:]) != self.latent_shape:
            raise ContractError(
                f"Latent shape {tuple(z.shape)} does not match {self.latent_shape}"
            )
        return batched

    def embed(self, z: torch.Tensor, messages: torch.Tensor) -> torch.Tensor:
        """E_w on batches: z [B,C,H,W], messages [B,L] of 0/1 floats."""
        z = self._batched(z)
        if messages.shape[-1] != self.message_length:
            raise ContractError(
                f"Message length {messages.shape[-1]} != {self.message_length}"
            )
        plane = self.message_plane(messages.to(z.dtype) * 2 - 1)
        plane = plane.reshape(-1, 1, self.latent_size, self.latent_size)
        fused = torch.cat(
            [self.latent_features(z), self.message_features(plane), z], dim=1
        )
        return z + self.to_residual(self.fuse(fused))

    def scores(self, z: torch.Tensor) -> torch.Tensor:
        """D_w on batches: per-bit logits [B, L]."""
        features = self.extract_features(self._batched(z))
        return self.to_logits(features.flatten(start_dim=1))

    @torch.no_grad()
    def inject(self, z: torch.Tensor, m: BitMessage) -> torch.Tensor:
        if len(m) != self.message_length:
            raise ContractError(f"Message length {len(m)} != {self.message_length}")
        self.eval()
        z_m = self.embed(z.to(torch.float32), m.as_float().unsqueeze(0))
        return z_m[0].to(z.dtype) if z.dim() == 3 else z_m.to(z.dtype)

    @torch.no_grad()
    def extract(self, z: torch.Tensor) -> BitMessage:
        self.eval()
        probabilities = torch.sigmoid(self.scores(z.to(torch.float32)))[0]
        return BitMessage((probabilities > 0.5).to(torch.uint8))


def new_injector(
    latent_shape: tuple[int, int, int],
    message_length: int,
    cfg: InjectorConfig,
    seed: int = 0,
) -> Injector:
    if latent_shape[1] != latent_shape[2]:
        raise ConfigError("Injector needs a square latent")
    with seeded(seed):
        return Injector(
            latent_channels=latent_shape[0],
            latent_size=latent_shape[1],
            message_length=message_length,
            hidden_channels=cfg.hidden_channels,
            injection_weight=cfg.injection_weight,
        )


def inject(z: torch.Tensor, m: BitMessage, inj: Injector) -> torch.Tensor:
    return inj.inject(z, m)


def extract(z: torch.Tensor, inj: Injector) -> BitMessage:
    return inj.extract(z)


@dataclass
class InjectorLoss:
    total: torch.Tensor
    index_loss: torch.Tensor
    injec_loss: torch.Tensor


def injector_loss(
    z: torch.Tensor,
    messages: torch.Tensor,
    inj: Injector,
    noise: NoiseLayer,
    generator: torch.Generator | None = None,
    weight: float | None = None,
) -> InjectorLoss:
    """L = L_index + lambda * L_injec on soft bit scores, each a per-element mean."""
    batched = inj._batched(z)
    if messages.dim() == 1:
        messages = messages.unsqueeze(0)
    targets = messages.to(batched.dtype)

    z_m = inj.embed(batched, targets)
    noised = apply_noise(z_m, noise, generator=generator)
    scores = torch.sigmoid(inj.scores(noised))

    index_loss = F.mse_loss(scores, targets)
    injec_loss = F.mse_loss(z_m, batched)
    lam = inj.injection_weight if weight is None else weight
    return InjectorLoss(index_loss + lam * injec_loss, index_loss, injec_loss)


@dataclass
class InjectorTrainingResult:
    injector: Injector
    losses: list[float] = field(default_factory=list)


def random_messages(count: int, length: int, generator: torch.Generator) -> torch.Tensor:
    return torch.randint(0, 2, (count, length), generator=generator).to(torch.float32)


def train_injector(
    latents: torch.Tensor,
    message_length: int,
    cfg: InjectorConfig,
    noise: NoiseLayer,
    seed: int = 0,
    injector: Injector | None = None,
    progress_callback: Callable[[int], None] | None = None,
) -> InjectorTrainingResult:
    if latents.shape[0] == 0:
        raise ContractError("Cannot train an injector on an empty latent set")

    if injector is None:
        latent_shape = tuple(latents.shape[1:])
        injector = new_injector(
            latent_shape, message_length, cfg, seed  # type: ignore[arg-type]
        )
    result = InjectorTrainingResult(injector)
    if cfg.steps == 0:
        injector.eval()
        return result

    generator = make_generator(seed + 1)
    optimizer = torch.optim.Adam(injector.parameters(), lr=cfg.learning_rate)
    data = latents.to(torch.float32)
    injector.train()

    for step in range(cfg.steps):
        idx = torch.randint(0, data.shape[0], (cfg.batch_size,), generator=generator)
        messages = random_messages(cfg.batch_size, message_length, generator)

        loss = injector_loss(data[idx], messages, injector, noise, generator=generator)
        value = float(loss.total.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)

        optimizer.zero_grad()
        loss.total.backward()
        optimizer.step()
        result.losses.append(value)

        if progress_callback:
            progress_callback(int(100 * (step + 1) / cfg.steps))

    injector.eval()
    return result


def bit_accuracy(a: BitMessage, b: BitMessage) -> float:
    if len(a) != len(b):
        raise ContractError(f"Messages differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        return 1.0
    return float((a.bits == b.bits).to(torch.float64).mean())


@dataclass
class InjectorEvaluation:
    bit_accuracy: float
    injection_mse: float


@torch.no_grad()
def evaluate_injector(
    injector: Injector,
    latents: torch.Tensor,
    noise: NoiseLayer,
    seed: int = 0,
) -> InjectorEvaluation:
    """Mean bit accuracy through ``noise`` and mean squared perturbation."""
    injector.eval()
    generator = make_generator(seed)
    data = latents.to(torch.float32)
    messages = random_messages(data.shape[0], injector.message_length, generator)

    z_m = injector.embed(data, messages)
    noised = apply_noise(z_m, noise, generator=generator)
    decided = (torch.sigmoid(injector.scores(noised)) > 0.5).to(torch.float32)
    return InjectorEvaluation(
        bit_accuracy=float((decided == messages).to(torch.float64).mean()),
        injection_mse=float(F.mse_loss(z_m, data)),
    )


def robustness_sweep(
    injector: Injector,
    latents: torch.Tensor,
    sigmas: Sequence[float] = (0.0, 0.05, 0.1, 0.2),
    filter_kernel: int = 7,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Bit accuracy per Gaussian sigma, blur held fixed."""
    return [
        (
            sigma,
            evaluate_injector(
                injector, latents, NoiseLayer(sigma, filter_kernel), seed
            ).bit_accuracy,
        )
        for sigma in sigmas
    ]
