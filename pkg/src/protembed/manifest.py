"""Run manifests: content hashes of inputs, outputs, and config.

Manifests carry no timestamps so that re-running a command with identical
inputs and config produces a byte-identical manifest; equal manifests imply
equal outputs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

TOOL_NAME = "protembed"
TOOL_VERSION = "0.1.0"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return sha256_bytes(canonical_json(config_dict).encode("utf-8"))


def write_manifest(
    path: str | Path,
    command: str,
    cfg_hash: str,
    seed: int,
    inputs: dict[str, str | Path],
    outputs: dict[str, str | Path],
    counts: dict[str, object] | None = None,
) -> dict:
    manifest = {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sha256_file(p) for name, p in sorted(outputs.items())},
        "counts": counts or {},
    }
    Path(path).write_text(canonical_json(manifest) + "\n")
    return manifest
