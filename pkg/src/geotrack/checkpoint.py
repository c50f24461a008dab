"""Checkpoint file: one JSON manifest line, then a blob of little-endian float32.

Manifest keys: ``format``, ``config`` (model config dict) and ``params``, a
list of ``{name, shape, frozen, offset}`` with byte offsets into the blob in
manifest order.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .config import ModelConfig, model_config_from_dict
from .errors import CheckpointMismatchError, FormatError
from .model import TrackerModel

FORMAT = "geotrack-checkpoint-v1"


def save_checkpoint(model: TrackerModel, path) -> None:
    params = model.named_parameters()
    entries, blobs, offset = [], [], 0
    for name, t in params.items():
        raw = t.data.astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "frozen": not t.requires_grad,
                        "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "config": dataclasses.asdict(model.cfg), "params": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(manifest, {name: float64 array})``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, reason=str(exc)) from None
    head, sep, blob = data.partition(b"\n")
    if not sep:
        raise FormatError(path, 1, "missing manifest line")
    try:
        manifest = json.loads(head)
    except json.JSONDecodeError as exc:
        raise FormatError(path, 1, f"bad manifest ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise FormatError(path, 1, f"unknown format {manifest.get('format')!r}")
    arrays = {}
    for e in manifest["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start, stop = e["offset"], e["offset"] + 4 * n
        if stop > len(blob):
            raise FormatError(path, reason=f"blob truncated at parameter {e['name']!r}")
        arr = np.frombuffer(blob[start:stop], dtype="<f4").astype(np.float64)
        arrays[e["name"]] = arr.reshape(e["shape"])
    return manifest, arrays


def config_from_checkpoint(path) -> ModelConfig:
    manifest, _ = read_checkpoint(path)
    return model_config_from_dict(manifest["config"])


def load_into(model: TrackerModel, path) -> None:
    """Copy checkpoint values into ``model``; names and shapes must match exactly."""
    _, arrays = read_checkpoint(path)
    params = model.named_parameters()
    for name, t in params.items():
        if name not in arrays:
            raise CheckpointMismatchError(name, "missing from checkpoint")
        if tuple(arrays[name].shape) != t.shape:
            raise CheckpointMismatchError(name, f"shape {arrays[name].shape} vs model {t.shape}")
    for name in arrays:
        if name not in params:
            raise CheckpointMismatchError(name, "not a parameter of this model")
    for name, t in params.items():
        t.data = arrays[name].copy()


def load_model(path, cfg: ModelConfig | None = None) -> TrackerModel:
    model = TrackerModel(cfg if cfg is not None else config_from_checkpoint(path))
    load_into(model, path)
    return model
