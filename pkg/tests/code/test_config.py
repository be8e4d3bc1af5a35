from __future__ import annotations

from pathlib import Path

import pytest

from core.config import Config, load_config
from core.errors import ConfigError


def test_defaults_are_the_desk_preset() -> None:
    config = load_config()
    assert config == Config()
    assert config.geometry.latent_shape == (4, 16, 16)
    assert config.geometry.image_shape == (3, 32, 32)
    assert config.bits_per_index == 4
    assert config.message_bits == 64


def test_yaml_sections_merge_over_defaults(tmp_path: Path) -> None:
    path = tmp_path / "config.yaml"
    path.write_text("seed: 3\ncodec:\n  codebook_size: 8\npipeline:\n  guidance: 2\n")

    config = load_config(str(path))

    assert config.seed == 3
    assert config.codec.codebook_size == 8
    assert config.codec.index_size == 4
    assert config.pipeline.guidance == 2.0
    assert config.message_bits == 48


def test_overrides_apply_after_file(tmp_path: Path) -> None:
    path = tmp_path / "config.yaml"
    path.write_text("pipeline:\n  guidance: 2\n")

    config = load_config(
        str(path), ["pipeline.guidance=0", "pipeline.guidance_sweep=[0, 1]"]
    )

    assert config.pipeline.guidance == 0.0
    assert config.pipeline.guidance_sweep == (0.0, 1.0)


def test_full_preset_geometry(tmp_path: Path) -> None:
    path = tmp_path / "full.yaml"
    path.write_text("preset: full\n")
    config = load_config(str(path))
    assert config.geometry.latent_shape == (4, 64, 64)
    assert config.codec.code_dim == 512


def test_empty_file_gives_defaults(tmp_path: Path) -> None:
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(str(path)) == Config()


def test_missing_file_raises(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "missing.yaml"))


@pytest.mark.parametrize(
    "override",
    [
        "codec.codebook_size=12",
        "codec.codebook_size=1",
        "codec.codebook_size=131072",
        "codec.index_size=3",
        "noise.filter_kernel=4",
        "schedule.num_steps=2000",
        "dataset.num_classes=13",
        "unknown.key=1",
        "codec.unknown=1",
        "codec.codebook_size=abc",
        "preset=huge",
        "no_equals_sign",
    ],
)
def test_invalid_values_raise_config_error(override: str) -> None:
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_bool_is_not_an_int() -> None:
    with pytest.raises(ConfigError):
        load_config(overrides=["seed=true"])


def test_digest_tracks_content() -> None:
    assert Config().digest() == load_config().digest()
    assert Config().digest() != load_config(overrides=["seed=1"]).digest()
