from __future__ import annotations

from pathlib import Path
from unittest.mock import mock_open, patch

from core import run_manifest as rm


def test_setup_run_directory_creates_layout(tmp_path: Path) -> None:
    rm.setup_run_directory(str(tmp_path / "run"))
    for sub in (rm.ARTIFACTS_DIR, rm.CHECKPOINTS_DIR, rm.REPORTS_DIR):
        assert (tmp_path / "run" / sub).is_dir()


def test_digest_tree_skips_manifest_and_temp_files(tmp_path: Path) -> None:
    (tmp_path / "reports").mkdir()
    (tmp_path / "reports" / "a.tsv").write_text("x\n")
    (tmp_path / "b.tmp").write_text("partial")
    (tmp_path / rm.MANIFEST_NAME).write_text("{}")

    digests = rm.digest_tree(str(tmp_path))

    assert list(digests) == ["reports/a.tsv"]
    assert len(digests["reports/a.tsv"]) == 64


def test_digest_tree_of_missing_directory_is_empty(tmp_path: Path) -> None:
    assert rm.digest_tree(str(tmp_path / "nothing")) == {}


def test_manifest_is_byte_stable(tmp_path: Path) -> None:
    manifest: rm.RunManifest = {
        "command": "generate",
        "seed": 7,
        "config_digest": "abc",
        "params": {"guidance": 7.5, "cond": 1},
        "checkpoints": {},
        "artifacts": {"artifacts/image.png": "00"},
    }

    rm.write_manifest(str(tmp_path), manifest)
    first = (tmp_path / rm.MANIFEST_NAME).read_bytes()
    rm.write_manifest(str(tmp_path), manifest)

    assert (tmp_path / rm.MANIFEST_NAME).read_bytes() == first
    assert rm.read_manifest(str(tmp_path)) == manifest


def test_read_manifest_missing_returns_none(tmp_path: Path) -> None:
    assert rm.read_manifest(str(tmp_path)) is None


def test_read_manifest_corrupt_returns_none() -> None:
    with (
        patch("os.path.exists", return_value=True),
        patch("builtins.open", mock_open(read_data="{invalid json")),
    ):
        assert rm.read_manifest("run") is None
