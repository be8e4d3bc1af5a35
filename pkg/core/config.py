import dataclasses
import hashlib
import json
import math
import os
import types
from dataclasses import dataclass, field
from typing import Any, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    num_steps: int = 50


@dataclass(frozen=True)
class GeometryConfig:
    latent_channels: int = 4
    latent_size: int = 16
    image_size: int = 32

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.image_size, self.image_size)


@dataclass(frozen=True)
class DenoiserConfig:
    hidden_channels: int = 48
    embed_dim: int = 64
    learning_rate: float = 1e-3
    steps: int = 4000
    batch_size: int = 64
    condition_dropout: float = 0.1


@dataclass(frozen=True)
class CodecConfig:
    codebook_size: int = 16
    code_dim: int = 64
    index_size: int = 4
    hidden_channels: int = 64
    beta: float = 1.0
    ema_decay: float = 0.99
    learning_rate: float = 3e-4
    amsgrad: bool = True
    steps: int = 2000
    batch_size: int = 32
    num_samples: int = 1000


@dataclass(frozen=True)
class InjectorConfig:
    hidden_channels: int = 64
    injection_weight: float = 0.1
    learning_rate: float = 1e-3
    steps: int = 3000
    batch_size: int = 32
    num_samples: int = 1000
    mse_budget: float = 1e-3


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_sigma: float = 0.05
    filter_kernel: int = 7
    filter_sigma: float | None = None


@dataclass(frozen=True)
class PixelCodecConfig:
    hidden_channels: int = 64
    kl_weight: float = 1e-6
    learning_rate: float = 1e-3
    steps: int = 3000
    batch_size: int = 32


@dataclass(frozen=True)
class LatentOptConfig:
    steps: int = 20
    step_size: float = 0.1
    backtracking: bool = True
    max_halvings: int = 30


@dataclass(frozen=True)
class PipelineConfig:
    guidance: float = 7.5
    edit_guidance: float | None = None
    quantize_pixels: bool = False
    guidance_sweep: tuple[float, ...] = (0.0, 2.0, 7.5)


@dataclass(frozen=True)
class DatasetConfig:
    num_images: int = 1000
    num_classes: int = 8


@dataclass(frozen=True)
class Config:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    injector: InjectorConfig = field(default_factory=InjectorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    pixel_codec: PixelCodecConfig = field(default_factory=PixelCodecConfig)
    latent_opt: LatentOptConfig = field(default_factory=LatentOptConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def bits_per_index(self) -> int:
        return int(math.log2(self.codec.codebook_size))

    @property
    def message_bits(self) -> int:
        return self.codec.index_size**2 * self.bits_per_index

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "desk": {},
    # Full-resolution geometry; D follows the encoder channel count so that the
    # nearest-codeword lookup is well defined.
    "full": {
        "geometry": {"latent_channels": 4, "latent_size": 64, "image_size": 512},
        "codec": {"code_dim": 512, "index_size": 4, "hidden_channels": 128},
    },
}


def _plain(value: Any) -> Any:
    # YAML safe_dump rejects tuples.
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


class ConfigLoader:
    """Load a YAML config document into a validated :class:`Config`."""

    def __init__(self, path: str | None = None) -> None:
        self.path = path

    def load(self, overrides: list[str] | None = None) -> Config:
        raw = self._read_document()

        preset = raw.pop("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}'")

        merged: dict[str, Any] = {
            section: dict(values) for section, values in PRESETS[preset].items()
        }
        self._merge(merged, raw)

        for override in overrides or []:
            self._merge(merged, self._parse_override(override))

        config = self._build(merged)
        validate_config(config)
        return config

    def _read_document(self) -> dict[str, Any]:
        if self.path is None:
            return {}

        if not os.path.exists(self.path):
            raise FileNotFoundError(f"Config file not found: {self.path}")

        with open(self.path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)

        if raw is None:
            return {}
        if not isinstance(raw, dict):
            raise ConfigError(f"Config must be a mapping in {self.path}")
        return raw

    def _merge(self, target: dict[str, Any], raw: dict[str, Any]) -> None:
        for key, value in raw.items():
            if isinstance(value, dict):
                section = target.setdefault(key, {})
                if not isinstance(section, dict):
                    raise ConfigError(f"'{key}' is not a section")
                section.update(value)
            else:
                target[key] = value

    def _parse_override(self, override: str) -> dict[str, Any]:
        if "=" not in override:
            raise ConfigError(f"Override must look like section.key=value: {override}")
        dotted, text = override.split("=", 1)
        value = yaml.safe_load(text)
        parts = dotted.strip().split(".")
        if len(parts) == 1:
            return {parts[0]: value}
        if len(parts) == 2:
            return {parts[0]: {parts[1]: value}}
        raise ConfigError(f"Override key nests too deep: {dotted}")

    def _build(self, merged: dict[str, Any]) -> Config:
        hints = get_type_hints(Config)
        kwargs: dict[str, Any] = {}

        for key, value in merged.items():
            if key not in hints:
                raise ConfigError(f"Unknown config key '{key}'")
            hint = hints[key]
            if dataclasses.is_dataclass(hint):
                if not isinstance(value, dict):
                    raise ConfigError(f"'{key}' must be a mapping")
                kwargs[key] = self._build_section(key, hint, value)
            else:
                kwargs[key] = _coerce(key, value, hint)

        return Config(**kwargs)

    def _build_section(self, name: str, cls: Any, values: dict[str, Any]) -> Any:
        hints = get_type_hints(cls)
        kwargs: dict[str, Any] = {}
        for key, value in values.items():
            if key not in hints:
                raise ConfigError(f"Unknown config key '{name}.{key}'")
            kwargs[key] = _coerce(f"{name}.{key}", value, hints[key])
        return cls(**kwargs)


def _coerce(key: str, value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    args = get_args(hint)

    if origin in (Union, types.UnionType) and type(None) in args:
        if value is None:
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(key, value, inner)

    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list")
        return tuple(_coerce(key, item, args[0]) for item in value)

    if hint is bool and isinstance(value, bool):
        return value
    if hint is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if hint is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if hint is str and isinstance(value, str):
        return value

    raise ConfigError(
        f"Invalid value for '{key}': expected {getattr(hint, '__name__', hint)}, "
        f"got {value!r}"
    )


def validate_config(config: Config) -> None:
    schedule = config.schedule
    if schedule.train_steps < 1:
        raise ConfigError("schedule.train_steps must be >= 1")
    if not 0 <= schedule.num_steps <= schedule.train_steps:
        raise ConfigError("schedule.num_steps must lie in [0, train_steps]")
    if not 0 < schedule.beta_start <= schedule.beta_end < 1:
        raise ConfigError("schedule betas must satisfy 0 < start <= end < 1")

    geometry = config.geometry
    if geometry.latent_channels < 1 or geometry.latent_size < 1:
        raise ConfigError("geometry dimensions must be positive")
    ratio = geometry.image_size // geometry.latent_size
    if ratio * geometry.latent_size != geometry.image_size or not _is_power_of_two(ratio):
        raise ConfigError("geometry.image_size must be latent_size times a power of two")

    codec = config.codec
    size = codec.codebook_size
    if not 2 <= size <= 2**16 or not _is_power_of_two(size):
        raise ConfigError("codec.codebook_size must be a power of two in [2, 65536]")
    down = geometry.latent_size // max(codec.index_size, 1)
    if (
        codec.index_size < 1
        or down * codec.index_size != geometry.latent_size
        or not _is_power_of_two(down)
    ):
        raise ConfigError("codec.index_size must divide latent_size by a power of two")
    if codec.beta < 0 or not 0 <= codec.ema_decay < 1:
        raise ConfigError("codec.beta must be >= 0 and codec.ema_decay in [0, 1)")

    if not 0.0 <= config.denoiser.condition_dropout <= 1.0:
        raise ConfigError("denoiser.condition_dropout must lie in [0, 1]")

    if config.injector.injection_weight < 0:
        raise ConfigError("injector.injection_weight must be >= 0")

    noise = config.noise
    if noise.gaussian_sigma < 0:
        raise ConfigError("noise.gaussian_sigma must be >= 0")
    if noise.filter_kernel < 1 or noise.filter_kernel % 2 == 0:
        raise ConfigError("noise.filter_kernel must be an odd integer >= 1")

    opt = config.latent_opt
    if opt.steps < 0 or opt.step_size <= 0:
        raise ConfigError("latent_opt.steps must be >= 0 and step_size > 0")

    if not 2 <= config.dataset.num_classes <= 12:
        raise ConfigError("dataset.num_classes must lie in [2, 12]")

    for name in ("denoiser", "codec", "injector", "pixel_codec"):
        section = getattr(config, name)
        if section.steps < 0 or section.batch_size < 1 or section.learning_rate <= 0:
            raise ConfigError(f"{name} training settings are out of range")


def load_config(path: str | None = None, overrides: list[str] | None = None) -> Config:
    return ConfigLoader(path).load(overrides)
