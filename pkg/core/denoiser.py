"""
Noise predictors for the diffusion core.

``ToyDenoiser`` is a small conditional U-Net style network. The linear
Gaussian oracle computes E[eps | x_t] in closed form for data drawn from a
per-condition Gaussian, which makes exact tests possible.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import DenoiserConfig
from .diffusion_core import Condition, NoiseSchedule
from .errors import ConfigError, ContractError, TrainingDivergedError
from .random_state import make_generator, seeded

PREDICTOR_KINDS: tuple[str, ...] = (
    "toy_network",
    "linear_gaussian_oracle",
    "constant",
    "zero",
)


class NoisePredictor(ABC):
    kind: str = ""
    latent_shape: tuple[int, int, int] | None = None

    @abstractmethod
    def predict_noise(self, x_t: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
        """Predict eps at training step ``t``; accepts [C,H,W] or [B,C,H,W]."""


class ZeroPredictor(NoisePredictor):
    kind = "zero"

    def predict_noise(self, x_t: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
        return torch.zeros_like(x_t)


class ConstantPredictor(NoisePredictor):
    """Returns a fixed value per branch: one for any class, one for null."""

    kind = "constant"

    def __init__(
        self,
        conditional: float | torch.Tensor = 0.0,
        unconditional: float | torch.Tensor = 0.0,
    ) -> None:
        self.conditional = torch.as_tensor(conditional)
        self.unconditional = torch.as_tensor(unconditional)

    def predict_noise(self, x_t: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
        value = self.unconditional if cond.is_null else self.conditional
        return torch.zeros_like(x_t) + value.to(x_t.dtype)


class LinearGaussianOracle(NoisePredictor):
    """
    Exact posterior mean of the noise when x_0 ~ N(m_c, diag(s)).

    With x_t = sqrt(a) x_0 + sqrt(1 - a) eps the posterior mean is
    sqrt(1 - a) / (a s + 1 - a) * (x_t - sqrt(a) m_c), linear in x_t.
    ``means`` holds one row per class followed by the null row.
    """

    kind = "linear_gaussian_oracle"

    def __init__(
        self,
        means: torch.Tensor,
        variance: float | torch.Tensor,
        alpha_table: Sequence[float],
    ) -> None:
        if means.dim() == 3:
            means = means.unsqueeze(0)
        self.means = means.to(torch.float64)
        self.variance = torch.as_tensor(variance, dtype=torch.float64)
        self.alpha_table = tuple(float(a) for a in alpha_table)
        self.num_classes = self.means.shape[0] - 1
        self.latent_shape = tuple(self.means.shape[1:])  # type: ignore[assignment]

    @classmethod
    def fit(
        cls,
        latents: torch.Tensor,
        labels: torch.Tensor,
        num_classes: int,
        alpha_table: Sequence[float],
    ) -> "LinearGaussianOracle":
        """Per-class means, shared per-element variance, null row = pooled mean."""
        data = latents.to(torch.float64)
        means = []
        for c in range(num_classes):
            members = data[labels == c]
            means.append(members.mean(dim=0) if len(members) else data.mean(dim=0))
        means.append(data.mean(dim=0))
        stacked = torch.stack(means)
        centred = data - stacked[labels]
        variance = centred.pow(2).mean(dim=0).clamp_min(1e-6)
        return cls(stacked, variance, alpha_table)

    def predict_noise(self, x_t: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
        if not 0 <= t < len(self.alpha_table):
            raise ContractError(f"Training step {t} outside the oracle's table")
        a = self.alpha_table[t]
        mean = self.means[cond.embedding_index(self.num_classes)]
        coef = math.sqrt(1.0 - a) / (a * self.variance + (1.0 - a))
        eps = coef * (x_t.to(torch.float64) - math.sqrt(a) * mean)
        return eps.to(x_t.dtype)


def timestep_embedding(
    t: torch.Tensor, dim: int, max_period: float = 10000.0
) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / max(half, 1)
    )
    args = t.to(torch.float32)[:, None] * freqs[None]
    embedding = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        embedding = F.pad(embedding, (0, 1))
    return embedding


def _groups(channels: int) -> int:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return groups
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, embed_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.emb = nn.Linear(embed_dim, out_channels)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv2d(in_channels, out_channels, 1)
        )

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ToyDenoiser(nn.Module):
    """
    Two-level conv eps-predictor with sinusoidal timestep features.

    Class embeddings are learned offsets from the null embedding and start
    at zero, so classes never seen during training behave exactly like null.
    """

    def __init__(
        self,
        latent_channels: int = 4,
        hidden_channels: int = 48,
        embed_dim: int = 64,
        num_classes: int = 8,
    ) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        self.hidden_channels = hidden_channels
        self.embed_dim = embed_dim
        self.num_classes = num_classes

        self.time_mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim)
        )
        self.null_embedding = nn.Parameter(torch.randn(embed_dim) * 0.02)
        self.class_offsets = nn.Parameter(torch.zeros(num_classes, embed_dim))
        self.cond_mlp = nn.Sequential(nn.Linear(embed_dim, embed_dim), nn.SiLU())

        h = hidden_channels
        self.conv_in = nn.Conv2d(latent_channels, h, 3, padding=1)
        self.down_block = ResBlock(h, h, embed_dim)
        self.downsample = nn.Conv2d(h, 2 * h, 4, stride=2, padding=1)
        self.mid_block = ResBlock(2 * h, 2 * h, embed_dim)
        self.upsample = nn.ConvTranspose2d(2 * h, h, 4, stride=2, padding=1)
        self.up_block = ResBlock(2 * h, h, embed_dim)
        self.norm_out = nn.GroupNorm(_groups(h), h)
        self.conv_out = nn.Conv2d(h, latent_channels, 3, padding=1)

    def condition_vectors(self, labels: torch.Tensor) -> torch.Tensor:
        null_row = self.class_offsets.new_zeros(1, self.embed_dim)
        offsets = torch.cat([self.class_offsets, null_row])
        return self.null_embedding[None] + offsets[labels]

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, labels: torch.Tensor
    ) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.embed_dim))
        emb = F.silu(emb + self.cond_mlp(self.condition_vectors(labels)))

        h0 = self.conv_in(x)
        h1 = self.down_block(h0, emb)
        h2 = self.mid_block(self.downsample(h1), emb)
        h3 = self.up_block(torch.cat([self.upsample(h2), h1], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(h3)))

    def architecture(self) -> dict[str, Any]:
        return {
            "latent_channels": self.latent_channels,
            "hidden_channels": self.hidden_channels,
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
        }


class NetworkPredictor(NoisePredictor):
    kind = "toy_network"

    def __init__(self, model: ToyDenoiser, latent_shape: tuple[int, int, int]) -> None:
        self.model = model
        self.latent_shape = tuple(latent_shape)  # type: ignore[assignment]

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    @torch.no_grad()
    def predict_noise(self, x_t: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
        self.model.eval()
        batched = x_t if x_t.dim() == 4 else x_t.unsqueeze(0)
        size = batched.shape[0]
        steps = torch.full((size,), int(t), dtype=torch.long)
        label = cond.embedding_index(self.num_classes)
        labels = torch.full((size,), label, dtype=torch.long)
        eps = self.model(batched.to(torch.float32), steps, labels).to(x_t.dtype)
        return eps if x_t.dim() == 4 else eps.squeeze(0)


def build_predictor(kind: str, **params: Any) -> NoisePredictor:
    if kind == "zero":
        return ZeroPredictor()
    if kind == "constant":
        return ConstantPredictor(**params)
    if kind == "linear_gaussian_oracle":
        return LinearGaussianOracle(**params)
    if kind == "toy_network":
        latent_shape = params.pop("latent_shape")
        return NetworkPredictor(ToyDenoiser(**params), latent_shape)
    raise ConfigError(f"Unknown noise predictor kind '{kind}'")


def predict_noise(
    p: NoisePredictor, x_t: torch.Tensor, t: int, cond: Condition
) -> torch.Tensor:
    if not isinstance(p, NoisePredictor) or p.kind not in PREDICTOR_KINDS:
        raise ConfigError(f"Unknown noise predictor: {p!r}")
    eps = p.predict_noise(x_t, t, cond)
    if eps.shape != x_t.shape:
        raise ContractError(f"Prediction shape {tuple(eps.shape)} != {tuple(x_t.shape)}")
    if not torch.isfinite(eps).all():
        raise ContractError(f"Non-finite noise prediction at step {t}")
    return eps


@dataclass
class DenoiserTrainingResult:
    predictor: NetworkPredictor
    losses: list[float] = field(default_factory=list)


def new_network_predictor(
    latent_shape: tuple[int, int, int],
    cfg: DenoiserConfig,
    num_classes: int,
    seed: int = 0,
) -> NetworkPredictor:
    with seeded(seed):
        model = ToyDenoiser(
            latent_channels=latent_shape[0],
            hidden_channels=cfg.hidden_channels,
            embed_dim=cfg.embed_dim,
            num_classes=num_classes,
        )
    return NetworkPredictor(model, latent_shape)


def _noised_batch(
    x0: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    table = torch.tensor(schedule.alpha_table, dtype=torch.float32)
    steps = torch.randint(
        1, schedule.num_train_steps + 1, (x0.shape[0],), generator=generator
    )
    a = table[steps][:, None, None, None]
    noise = torch.randn(x0.shape, generator=generator)
    return a.sqrt() * x0 + (1 - a).sqrt() * noise, steps, noise


def train_denoiser(
    latents: torch.Tensor,
    labels: torch.Tensor,
    cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    num_classes: int,
    seed: int = 0,
    predictor: NetworkPredictor | None = None,
    progress_callback: Callable[[int], None] | None = None,
) -> DenoiserTrainingResult:
    if latents.shape[0] == 0:
        raise ContractError("Cannot train a denoiser on an empty dataset")
    if labels.shape[0] != latents.shape[0]:
        raise ContractError("latents and labels differ in length")

    latent_shape = tuple(latents.shape[1:])
    if predictor is None:
        predictor = new_network_predictor(
            latent_shape, cfg, num_classes, seed  # type: ignore[arg-type]
        )
    result = DenoiserTrainingResult(predictor)
    if cfg.steps == 0:
        return result

    model = predictor.model
    generator = make_generator(seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    data = latents.to(torch.float32)
    model.train()

    for step in range(cfg.steps):
        idx = torch.randint(0, data.shape[0], (cfg.batch_size,), generator=generator)
        x_t, steps, noise = _noised_batch(data[idx], schedule, generator)
        drop = torch.rand(cfg.batch_size, generator=generator) < cfg.condition_dropout
        batch_labels = torch.where(
            drop, torch.full_like(labels[idx], num_classes), labels[idx]
        )

        loss = F.mse_loss(model(x_t, steps, batch_labels), noise)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.losses.append(value)

        if progress_callback:
            progress_callback(int(100 * (step + 1) / cfg.steps))

    model.eval()
    return result


@torch.no_grad()
def evaluate_denoiser_loss(
    predictor: NetworkPredictor,
    latents: torch.Tensor,
    labels: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> float:
    """Mean eps-prediction loss on a fixed draw of timesteps and noise."""
    generator = make_generator(seed)
    x_t, steps, noise = _noised_batch(latents.to(torch.float32), schedule, generator)
    predictor.model.eval()
    prediction = predictor.model(x_t, steps, labels.to(torch.long))
    return float(F.mse_loss(prediction, noise))
