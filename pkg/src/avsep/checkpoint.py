"""Versioned checkpoint container.

Layout, little-endian:

    magic      4 bytes  b"AVCK"
    version    u16      currently 1
    header_len u32
    header     UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape"}...],
                            "meta": {...}}
    payload    concatenated float32 tensors in header order

The config echo is authoritative: loading into an existing model
verifies it matches that model's configuration.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .errors import FormatError, VersionError
from .separator import SeparationModel, SeparatorConfig

MAGIC = b"AVCK"
VERSION = 1


def save_checkpoint(model: SeparationModel, path, meta: dict | None = None) -> None:
    state = model.state_dict()
    tensors = [{"name": name, "shape": list(t.shape)} for name, t in state.items()]
    header = json.dumps(
        {"config": model.config.to_dict(), "tensors": tensors, "meta": meta or {}},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(header)))
        f.write(header)
        for name in state:
            f.write(state[name].detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[SeparatorConfig, dict[str, np.ndarray], dict]:
    """Read (config, name -> float32 array, meta) from a checkpoint file."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<HI", blob[4:10])
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[10:10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    config = SeparatorConfig.from_dict(header["config"], where="checkpoint.config")
    offset = 10 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        end = offset + 4 * count
        if end > len(blob):
            raise FormatError(f"{path}: truncated tensor payload at {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(
            blob, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset = end
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after payload")
    return config, tensors, header.get("meta", {})


def load_model(path) -> SeparationModel:
    """Rebuild a model from the checkpoint's own config echo."""
    config, tensors, _ = load_checkpoint(path)
    model = SeparationModel(config)
    _load_tensors(model, tensors, path)
    return model


def load_weights(model: SeparationModel, path) -> dict:
    """Load weights into an existing model; the config echo must match."""
    config, tensors, meta = load_checkpoint(path)
    if config.to_dict() != model.config.to_dict():
        raise VersionError(f"{path}: checkpoint config does not match the model's")
    _load_tensors(model, tensors, path)
    return meta


def _load_tensors(model: SeparationModel, tensors: dict[str, np.ndarray], path) -> None:
    state = model.state_dict()
    if set(state) != set(tensors):
        raise VersionError(f"{path}: checkpoint tensor names do not match the model")
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
