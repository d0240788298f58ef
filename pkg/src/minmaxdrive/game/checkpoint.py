"""Checkpoint directory: policy, generator, buffer, rng and meta JSON files.

Each file wraps its payload as ``{"format": 1, "sha256": ..., "payload": ...}``
and is written to a temporary name, then renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

FORMAT_VERSION = 1
PARTS = ("policy", "generator", "buffer", "rng", "meta")


class CheckpointError(RuntimeError):
    pass


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def write_json_atomic(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, sort_keys=True)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_part(directory, name: str, payload) -> None:
    write_json_atomic(Path(directory) / f"{name}.json",
                      {"format": FORMAT_VERSION, "sha256": _digest(payload), "payload": payload})


def load_part(directory, name: str):
    path = Path(directory) / f"{name}.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint file {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint file {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format {doc.get('format') if isinstance(doc, dict) else None!r}, "
            f"expected {FORMAT_VERSION}"
        )
    if _digest(doc["payload"]) != doc.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted)")
    return doc["payload"]


def save_checkpoint(directory, state: dict) -> None:
    """``state`` maps every name in PARTS to a JSON-serializable payload; meta goes last."""
    for name in PARTS:
        if name != "meta":
            save_part(directory, name, state[name])
    save_part(directory, "meta", state["meta"])


def load_checkpoint(directory) -> dict:
    return {name: load_part(directory, name) for name in PARTS}
