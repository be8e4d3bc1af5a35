import hashlib
import json
import os
from typing import Any, TypedDict

from .tensor_io import atomic_write

MANIFEST_NAME: str = "manifest.json"

ARTIFACTS_DIR: str = "artifacts"
CHECKPOINTS_DIR: str = "checkpoints"
REPORTS_DIR: str = "reports"


class RunManifest(TypedDict):
    command: str
    seed: int
    config_digest: str
    params: dict[str, Any]
    checkpoints: dict[str, str]
    artifacts: dict[str, str]


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def digest_tree(root: str, exclude: tuple[str, ...] = (MANIFEST_NAME,)) -> dict[str, str]:
    """sha256 of every file under ``root`` keyed by its relative posix path."""
    digests: dict[str, str] = {}
    if not os.path.isdir(root):
        return digests

    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for filename in sorted(filenames):
            if filename in exclude or filename.endswith(".tmp"):
                continue
            path = os.path.join(dirpath, filename)
            rel = os.path.relpath(path, root).replace(os.sep, "/")
            digests[rel] = sha256_file(path)
    return digests


def setup_run_directory(out_dir: str) -> None:
    """Create the standard output layout"""
    for sub in (ARTIFACTS_DIR, CHECKPOINTS_DIR, REPORTS_DIR):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)


def read_manifest(out_dir: str) -> RunManifest | None:
    path = os.path.join(out_dir, MANIFEST_NAME)
    try:
        if not os.path.exists(path):
            return None

        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        return None


def write_manifest(out_dir: str, data: RunManifest) -> None:
    # No timestamps: repeated runs with the same inputs are byte-identical.
    text = json.dumps(data, indent=4, sort_keys=True) + "\n"
    atomic_write(os.path.join(out_dir, MANIFEST_NAME), text.encode("utf-8"))
