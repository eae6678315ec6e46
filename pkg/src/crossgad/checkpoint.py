"""Model checkpoints: a manifest plus one TSV matrix file per tensor.

The manifest records every tensor's file name and shape; loading verifies
both before parsing, so a tampered or truncated checkpoint fails with an
integrity error rather than mis-shaped parameters. Values are written with
``repr`` (shortest round-trip form), so save -> load reproduces the state
exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import PARAM_KEYS, ModelState, build_state

FORMAT_NAME = "crossgad-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised for missing, tampered, or inconsistent checkpoint files."""


def _tensor_filename(key: str) -> str:
    return key.replace(".", "_") + ".tsv"


def save_checkpoint(state: ModelState, directory, meta: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = state.parameters()
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": {
            key: {"file": _tensor_filename(key),
                  "shape": list(arr.shape)}
            for key, arr in params.items()
        },
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for key, arr in params.items():
        mat = np.atleast_2d(arr)
        rows = ["\t".join(repr(float(x)) for x in row) for row in mat]
        (directory / _tensor_filename(key)).write_text("\n".join(rows) + "\n")


def load_checkpoint(directory) -> tuple[ModelState, dict]:
    """Load and integrity-check a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"missing checkpoint manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(
            f"{manifest_path}: not a {FORMAT_NAME} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: unsupported version {manifest.get('version')}")
    tensors = manifest.get("tensors")
    if not isinstance(tensors, dict):
        raise CheckpointError(f"{manifest_path}: missing tensor table")
    missing = [k for k in PARAM_KEYS if k not in tensors]
    if missing:
        raise CheckpointError(
            f"{manifest_path}: manifest lacks tensors {missing}")

    params: dict[str, np.ndarray] = {}
    for key in PARAM_KEYS:
        entry = tensors[key]
        try:
            fname, shape = entry["file"], tuple(entry["shape"])
        except (TypeError, KeyError) as exc:
            raise CheckpointError(
                f"{manifest_path}: malformed entry for {key!r}") from exc
        path = directory / fname
        if not path.is_file():
            raise CheckpointError(f"missing tensor file: {path}")
        try:
            rows = [[float(x) for x in line.split("\t")]
                    for line in path.read_text().splitlines()]
            arr = np.array(rows, dtype=np.float64)
        except ValueError as exc:
            raise CheckpointError(f"{path}: malformed tensor data") from exc
        if len(shape) == 1:
            if arr.shape != (1, shape[0]):
                raise CheckpointError(
                    f"{path}: integrity check failed, file holds "
                    f"{arr.shape[1] if arr.ndim == 2 else arr.shape} values "
                    f"but the manifest declares shape {list(shape)}")
            arr = arr[0]
        elif arr.shape != shape:
            raise CheckpointError(
                f"{path}: integrity check failed, file holds shape "
                f"{list(arr.shape)} but the manifest declares {list(shape)}")
        params[key] = arr
    state = build_state(params)
    return state, manifest.get("meta", {})
