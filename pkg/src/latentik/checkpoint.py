"""Self-describing checkpoint files: named float64 tensors plus metadata.

A checkpoint is a single JSON document with base64-encoded little-endian
tensor payloads. Serialization is canonical (sorted keys, fixed separators),
so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "metadata": metadata,
        "tensors": {
            name: {
                "shape": list(np.asarray(t).shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(t, dtype="<f8").tobytes()
                ).decode("ascii"),
            }
            for name, t in tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {doc.get('format_version')!r} in {path}"
        )
    tensors = {}
    for name, spec in doc["tensors"].items():
        raw = np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8")
        expect = int(np.prod(spec["shape"])) if spec["shape"] else 1
        if raw.size != expect:
            raise CheckpointError(f"tensor {name}: payload size mismatch in {path}")
        tensors[name] = raw.reshape(spec["shape"]).astype(np.float64)
    return tensors, doc["metadata"]
