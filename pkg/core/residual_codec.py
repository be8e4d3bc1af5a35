"""
Vector-quantized compression of the residual latent z_r = z_T - z_0.

The encoder maps a residual to a [D, H', W'] feature map, every position is
snapped to its nearest codeword and the index grid is what gets embedded
into the image. Codewords follow exponential moving averages of the
features assigned to them; the commitment term only trains the encoder.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import torch
import torch.nn.functional as F
from torch import nn

from .config import CodecConfig
from .errors import ConfigError, ContractError, TrainingDivergedError
from .random_state import make_generator, seeded


@dataclass(frozen=True, eq=False)
class IndexMap:
    indices: torch.Tensor

    def __post_init__(self) -> None:
        if self.indices.dim() != 2:
            raise ContractError(f"IndexMap must be 2-D, got {tuple(self.indices.shape)}")
        if self.indices.dtype != torch.long:
            object.__setattr__(self, "indices", self.indices.to(torch.long))

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.indices.shape[0]), int(self.indices.shape[1]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IndexMap) and torch.equal(self.indices, other.indices)

    def tolist(self) -> list[list[int]]:
        return self.indices.tolist()

    def storage_tensor(self, codebook_size: int) -> torch.Tensor:
        """
        The grid in a dtype tensor files can hold: uint8 while every index
        fits a byte, float32 (exact below 2**24) otherwise.
        """
        if codebook_size <= 256:
            return self.indices.to(torch.uint8)
        if codebook_size > 2**24:
            raise ContractError(f"Codebook of {codebook_size} entries cannot be stored")
        return self.indices.to(torch.float32)


@dataclass
class CodecLoss:
    total: torch.Tensor
    recon: torch.Tensor
    quanti: torch.Tensor


def nearest_codewords(features: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the nearest codeword for each row of ``features`` [N, D]."""
    if codebook.dim() != 2 or codebook.shape[0] == 0:
        raise ConfigError("Codebook must be a non-empty [K, D] matrix")
    if features.shape[-1] != codebook.shape[1]:
        raise ContractError(
            f"Feature dim {features.shape[-1]} != codeword dim {codebook.shape[1]}"
        )
    # Explicit differences keep exact ties exact; argmin returns the first.
    distances = (features[:, None, :] - codebook[None, :, :]).pow(2).sum(dim=-1)
    return torch.argmin(distances, dim=1)


def quantize(feature: torch.Tensor, codebook: torch.Tensor) -> tuple[int, torch.Tensor]:
    index = int(nearest_codewords(feature.reshape(1, -1), codebook)[0])
    return index, codebook[index]


def _conv_stack(
    in_channels: int, hidden: int, out_channels: int, downsample_layers: int
) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU()]
    for _ in range(downsample_layers):
        layers += [nn.Conv2d(hidden, hidden, 4, stride=2, padding=1), nn.ReLU()]
    layers.append(nn.Conv2d(hidden, out_channels, 1))
    return nn.Sequential(*layers)


def _deconv_stack(
    in_channels: int, hidden: int, out_channels: int, upsample_layers: int
) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU()]
    for _ in range(upsample_layers):
        layers += [nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1), nn.ReLU()]
    layers.append(nn.Conv2d(hidden, out_channels, 3, padding=1))
    return nn.Sequential(*layers)


class ResidualCodec(nn.Module):
    def __init__(
        self,
        latent_channels: int = 4,
        latent_size: int = 16,
        index_size: int = 4,
        code_dim: int = 64,
        codebook_size: int = 16,
        hidden_channels: int = 64,
        beta: float = 1.0,
        ema_decay: float = 0.99,
    ) -> None:
        super().__init__()
        if codebook_size < 1:
            raise ConfigError("Codebook must hold at least one codeword")
        ratio = latent_size // index_size
        layers = int(round(math.log2(ratio))) if ratio >= 1 else -1
        if layers < 0 or index_size * 2**layers != latent_size:
            raise ConfigError("index_size must divide latent_size by a power of two")

        self.latent_channels = latent_channels
        self.latent_size = latent_size
        self.index_size = index_size
        self.code_dim = code_dim
        self.codebook_size = codebook_size
        self.hidden_channels = hidden_channels
        self.beta = beta
        self.ema_decay = ema_decay

        h = hidden_channels
        self.encoder: nn.Module = _conv_stack(latent_channels, h, code_dim, layers)
        self.decoder: nn.Module = _deconv_stack(code_dim, h, latent_channels, layers)

        self.register_buffer("codebook", torch.randn(codebook_size, code_dim))
        self.register_buffer("ema_cluster_size", torch.ones(codebook_size))
        self.register_buffer("ema_embed_sum", self.codebook.clone())
        self.register_buffer("initialized", torch.zeros(()))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    @property
    def index_shape(self) -> tuple[int, int]:
        return (self.index_size, self.index_size)

    def architecture(self) -> dict[str, Any]:
        return {
            "latent_channels": self.latent_channels,
            "latent_size": self.latent_size,
            "index_size": self.index_size,
            "code_dim": self.code_dim,
            "codebook_size": self.codebook_size,
            "hidden_channels": self.hidden_channels,
            "beta": self.beta,
            "ema_decay": self.ema_decay,
        }

    def _check_geometry(self, z: torch.Tensor) -> torch.Tensor:
        batched = z if z.dim() == 4 else z.unsqueeze(0)
        if tuple(batched.shape[1:]) != self.latent_shape:
            raise ContractError(
                f"Residual shape {tuple(z.shape)} does not match {self.latent_shape}"
            )
        return batched.to(self.codebook.dtype)

    def encode_features(self, z: torch.Tensor) -> torch.Tensor:
        """Continuous encoder output z_e, [B, D, H', W']."""
        return self.encoder(self._check_geometry(z))

    def assign(self, z_e: torch.Tensor) -> torch.Tensor:
        """Codeword indices [B, H', W'] for an encoder output."""
        b, d, h, w = z_e.shape
        flat = z_e.permute(0, 2, 3, 1).reshape(-1, d)
        return nearest_codewords(flat, self.codebook).reshape(b, h, w)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        """Codewords for an index grid [B, H', W'] as [B, D, H', W']."""
        return self.codebook[indices].permute(0, 3, 1, 2)

    @torch.no_grad()
    def compress(self, z_r: torch.Tensor) -> IndexMap:
        if z_r.dim() != 3:
            raise ContractError("compress expects a single [C, H, W] residual")
        return IndexMap(self.assign(self.encode_features(z_r))[0])

    @torch.no_grad()
    def reconstruct(self, m_r: IndexMap) -> torch.Tensor:
        if m_r.shape != self.index_shape:
            raise ContractError(f"IndexMap shape {m_r.shape} != {self.index_shape}")
        indices = m_r.indices
        if int(indices.min()) < 0 or int(indices.max()) >= self.codebook_size:
            raise ContractError(f"Index outside [0, {self.codebook_size})")
        return self.decoder(self.lookup(indices.unsqueeze(0)))[0]

    @torch.no_grad()
    def update_codebook(self, z_e: torch.Tensor, indices: torch.Tensor) -> None:
        flat = z_e.detach().permute(0, 2, 3, 1).reshape(-1, self.code_dim)
        if not bool(self.initialized):
            # Seed codewords from real features to avoid dead entries.
            picks = torch.arange(self.codebook_size) % flat.shape[0]
            self.codebook.copy_(flat[picks])
            self.ema_embed_sum.copy_(self.codebook)
            self.ema_cluster_size.fill_(1.0)
            self.initialized.fill_(1.0)
            return

        one_hot = F.one_hot(indices.reshape(-1), self.codebook_size).to(flat.dtype)
        decay = self.ema_decay
        self.ema_cluster_size.mul_(decay).add_(one_hot.sum(dim=0), alpha=1 - decay)
        self.ema_embed_sum.mul_(decay).add_(one_hot.t() @ flat, alpha=1 - decay)

        eps = 1e-5
        total = self.ema_cluster_size.sum()
        counts = self.ema_cluster_size + eps
        smoothed = counts / (total + self.codebook_size * eps) * total
        self.codebook.copy_(self.ema_embed_sum / smoothed[:, None])


def compress(z_r: torch.Tensor, codec: ResidualCodec) -> IndexMap:
    return codec.compress(z_r)


def reconstruct(m_r: IndexMap, codec: ResidualCodec) -> torch.Tensor:
    return codec.reconstruct(m_r)


def codec_loss(z_r: torch.Tensor, codec: ResidualCodec) -> CodecLoss:
    """L = L_recon + beta * L_quanti, both as mean squared errors."""
    x = codec._check_geometry(z_r)
    z_e = codec.encoder(x)
    with torch.no_grad():
        indices = codec.assign(z_e)
    z_q = codec.lookup(indices)

    # Straight-through: forward uses z_q, the gradient reaches the encoder.
    z_st = z_e + (z_q - z_e).detach()
    x_r = codec.decoder(z_st)

    recon = F.mse_loss(x_r, x)
    quanti = F.mse_loss(z_e, z_q.detach())
    return CodecLoss(total=recon + codec.beta * quanti, recon=recon, quanti=quanti)


@dataclass
class CodecTrainingResult:
    codec: ResidualCodec
    losses: list[float] = field(default_factory=list)


def new_residual_codec(
    latent_shape: tuple[int, int, int], cfg: CodecConfig, seed: int = 0
) -> ResidualCodec:
    with seeded(seed):
        return ResidualCodec(
            latent_channels=latent_shape[0],
            latent_size=latent_shape[1],
            index_size=cfg.index_size,
            code_dim=cfg.code_dim,
            codebook_size=cfg.codebook_size,
            hidden_channels=cfg.hidden_channels,
            beta=cfg.beta,
            ema_decay=cfg.ema_decay,
        )


def train_codec(
    samples: torch.Tensor,
    cfg: CodecConfig,
    seed: int = 0,
    codec: ResidualCodec | None = None,
    progress_callback: Callable[[int], None] | None = None,
) -> CodecTrainingResult:
    if samples.shape[0] == 0:
        raise ContractError("Cannot train a codec on an empty sample set")

    if codec is None:
        latent_shape = tuple(samples.shape[1:])
        codec = new_residual_codec(latent_shape, cfg, seed)  # type: ignore[arg-type]
    result = CodecTrainingResult(codec)
    if cfg.steps == 0:
        return result

    generator = make_generator(seed + 1)
    parameters = list(codec.encoder.parameters()) + list(codec.decoder.parameters())
    optimizer = torch.optim.Adam(parameters, lr=cfg.learning_rate, amsgrad=cfg.amsgrad)
    data = samples.to(torch.float32)
    codec.train()

    for step in range(cfg.steps):
        idx = torch.randint(0, data.shape[0], (cfg.batch_size,), generator=generator)
        batch = data[idx]

        loss = codec_loss(batch, codec)
        value = float(loss.total.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)

        optimizer.zero_grad()
        loss.total.backward()
        optimizer.step()

        with torch.no_grad():
            z_e = codec.encoder(batch)
            codec.update_codebook(z_e, codec.assign(z_e))
        result.losses.append(value)

        if progress_callback:
            progress_callback(int(100 * (step + 1) / cfg.steps))

    codec.eval()
    return result


@torch.no_grad()
def reconstruction_mse(codec: ResidualCodec, samples: torch.Tensor) -> float:
    errors = [
        float(F.mse_loss(codec.reconstruct(codec.compress(z)), z.to(torch.float32)))
        for z in samples
    ]
    return sum(errors) / max(len(errors), 1)
