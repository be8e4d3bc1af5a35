from __future__ import annotations

from pathlib import Path

import pytest
import torch
import yaml

from core.checkpoint import (
    MANIFEST_FILE,
    ModelCheckpoint,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
)
from core.errors import FormatError


def _module() -> torch.nn.Module:
    torch.manual_seed(0)
    return torch.nn.Sequential(torch.nn.Linear(3, 2), torch.nn.BatchNorm1d(2))


def test_save_and_load_restore_state(tmp_path: Path) -> None:
    module = _module()
    checkpoint = ModelCheckpoint.from_module(
        "toy", module, architecture={"width": 2}, extra={"latent_shape": [4, 16, 16]}
    )
    save_checkpoint(str(tmp_path / "toy"), checkpoint)

    loaded = load_checkpoint(str(tmp_path / "toy"), "toy")
    restored = torch.nn.Sequential(torch.nn.Linear(3, 2), torch.nn.BatchNorm1d(2))
    restored.load_state_dict(loaded.state_dict())

    assert loaded.architecture == {"width": 2}
    assert loaded.extra == {"latent_shape": [4, 16, 16]}
    for name, tensor in module.state_dict().items():
        assert torch.equal(restored.state_dict()[name].float(), tensor.float())


def test_save_replaces_stale_files(tmp_path: Path) -> None:
    directory = tmp_path / "toy"
    directory.mkdir()
    (directory / "999_stale.rste").write_bytes(b"old")

    save_checkpoint(str(directory), ModelCheckpoint.from_module("toy", _module(), {}))

    assert not (directory / "999_stale.rste").exists()


def test_wrong_kind_raises(tmp_path: Path) -> None:
    checkpoint = ModelCheckpoint.from_module("a", _module(), {})
    save_checkpoint(str(tmp_path / "c"), checkpoint)
    with pytest.raises(FormatError, match="expected 'b'"):
        load_checkpoint(str(tmp_path / "c"), "b")


def test_missing_checkpoint_raises(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / "none"))


def test_incompatible_major_version_raises(tmp_path: Path) -> None:
    directory = tmp_path / "c"
    save_checkpoint(str(directory), ModelCheckpoint.from_module("a", _module(), {}))
    manifest = yaml.safe_load((directory / MANIFEST_FILE).read_text())
    manifest["format_version"] = "2.0"
    (directory / MANIFEST_FILE).write_text(yaml.safe_dump(manifest))

    with pytest.raises(FormatError, match="incompatible"):
        load_checkpoint(str(directory))


def test_digest_is_stable_across_saves(tmp_path: Path) -> None:
    module = _module()
    save_checkpoint(str(tmp_path / "a"), ModelCheckpoint.from_module("k", module, {}))
    save_checkpoint(str(tmp_path / "b"), ModelCheckpoint.from_module("k", module, {}))

    digests = checkpoint_digest(str(tmp_path / "a"))
    assert MANIFEST_FILE in digests
    assert digests == checkpoint_digest(str(tmp_path / "b"))
