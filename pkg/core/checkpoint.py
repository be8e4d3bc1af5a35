import os
import shutil
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
import yaml
from packaging.version import InvalidVersion, Version

from .errors import FormatError
from .run_manifest import digest_tree
from .tensor_io import atomic_write, load_tensor, save_tensor

FORMAT_VERSION: str = "1.0"
MANIFEST_FILE: str = "manifest.yaml"


@dataclass
class ModelCheckpoint:
    kind: str
    arrays: dict[str, np.ndarray]
    architecture: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_module(
        cls,
        kind: str,
        module: torch.nn.Module,
        architecture: dict[str, Any],
        config: dict[str, Any] | None = None,
        extra: dict[str, Any] | None = None,
    ) -> "ModelCheckpoint":
        arrays = {
            name: tensor.detach().cpu().to(torch.float32).numpy().copy()
            for name, tensor in module.state_dict().items()
        }
        return cls(
            kind, arrays, dict(architecture), dict(config or {}), dict(extra or {})
        )

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {name: torch.from_numpy(array.copy()) for name, array in self.arrays.items()}


def _array_filename(position: int, name: str) -> str:
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in name)
    return f"{position:03d}_{safe}.rste"


def save_checkpoint(directory: str, checkpoint: ModelCheckpoint) -> None:
    # Stale array files from an older checkpoint would break load(save(m)).
    if os.path.isdir(directory):
        shutil.rmtree(directory)
    os.makedirs(directory, exist_ok=True)

    entries: list[dict[str, Any]] = []
    for position, (name, array) in enumerate(checkpoint.arrays.items()):
        filename = _array_filename(position, name)
        save_tensor(os.path.join(directory, filename), array)
        entries.append(
            {
                "name": name,
                "file": filename,
                "shape": list(array.shape),
                "dtype": "uint8" if array.dtype == np.uint8 else "float32",
            }
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": checkpoint.kind,
        "architecture": checkpoint.architecture,
        "arrays": entries,
        "config": checkpoint.config,
        "extra": checkpoint.extra,
    }
    text = yaml.safe_dump(manifest, sort_keys=True)
    atomic_write(os.path.join(directory, MANIFEST_FILE), text.encode("utf-8"))


def load_checkpoint(directory: str, expected_kind: str | None = None) -> ModelCheckpoint:
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"Checkpoint not found: {directory}")

    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise FormatError(f"Corrupt checkpoint manifest in {directory}") from e

    if not isinstance(manifest, dict) or "arrays" not in manifest:
        raise FormatError(f"Invalid checkpoint manifest in {directory}")

    _check_version(str(manifest.get("format_version", "")), directory)

    kind = manifest.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(
            f"Checkpoint in {directory} holds '{kind}', expected '{expected_kind}'"
        )

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        array = load_tensor(os.path.join(directory, entry["file"]))
        if list(array.shape) != list(entry["shape"]):
            raise FormatError(
                f"Array '{entry['name']}' has shape {list(array.shape)}, "
                f"manifest says {entry['shape']}"
            )
        arrays[entry["name"]] = array

    return ModelCheckpoint(
        kind=str(kind),
        arrays=arrays,
        architecture=manifest.get("architecture") or {},
        config=manifest.get("config") or {},
        extra=manifest.get("extra") or {},
    )


def _check_version(raw: str, directory: str) -> None:
    try:
        found = Version(raw)
    except InvalidVersion as e:
        raise FormatError(f"Invalid checkpoint format version '{raw}'") from e

    if found.major != Version(FORMAT_VERSION).major:
        raise FormatError(
            f"Checkpoint format {found} in {directory} is incompatible "
            f"with {FORMAT_VERSION}"
        )


def checkpoint_digest(directory: str) -> dict[str, str]:
    return digest_tree(directory, exclude=())
