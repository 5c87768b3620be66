"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"TANSRCKP"
    version    1 byte    1
    hlen       uint32    length of the JSON header in bytes
    header     hlen bytes of UTF-8 JSON
    payload    float32 little-endian tensor data

The header holds ``"model"`` (the ModelConfig fields), ``"config"`` (the
fully resolved run configuration, free-form), ``"state"`` (training
counters, RNG state, loss history; may be null) and ``"tensors"``, a list
of ``{"name", "shape", "offset"}`` records where ``offset`` is the byte
offset of the tensor inside the payload.  Model parameters use their
dotted names (``blocks.0.units.1.ka.conv5.weight``); optimizer moments are
stored as ``optim.m.<name>`` and ``optim.v.<name>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompatError, ConfigError, FormatError
from .model import ModelConfig, TanModel, scale_dependent

MAGIC = b"TANSRCKP"
VERSION = 1
OPTIM_PREFIX = "optim."
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    model: dict
    tensors: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    state: dict | None = None

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(**self.model)
        except (TypeError, ConfigError) as exc:
            raise FormatError(f"checkpoint carries an invalid model config: {exc}") from exc

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest, blobs, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype=_LE_F32)
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"model": ckpt.model, "config": ckpt.config, "state": ckpt.state,
                         "tensors": manifest}).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 5 or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path} is not a tansr checkpoint")
    version, hlen = struct.unpack_from("<BI", raw, len(MAGIC))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 5
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header in {path}") from exc
    payload = memoryview(raw)[start + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        off = entry["offset"]
        if off + 4 * count > len(payload):
            raise FormatError(f"tensor {entry['name']} runs past the end of {path}")
        tensors[entry["name"]] = np.frombuffer(payload, _LE_F32, count, off).reshape(shape).copy()
    return Checkpoint(model=header["model"], tensors=tensors,
                      config=header.get("config") or {}, state=header.get("state"))


def save_checkpoint(model: TanModel, path, config: dict | None = None, state: dict | None = None,
                    optim: dict[str, np.ndarray] | None = None) -> None:
    tensors = {name: t.data for name, t in model.named_parameters()}
    for name, arr in (optim or {}).items():
        tensors[OPTIM_PREFIX + name] = arr
    write_checkpoint(path, Checkpoint(model=model.config.as_dict(), tensors=tensors,
                                      config=config or {}, state=state))


def load_checkpoint(path, config: ModelConfig | None = None, seed: int = 0,
                    dtype=np.float32) -> TanModel:
    """Rebuild a model from ``path``.

    With ``config`` differing from the stored one only in ``scale`` this is
    the finetuning load: every shape-compatible tensor is reused and the
    scale-dependent upsampling tensors keep a fresh seeded init.  The names
    of re-initialised tensors end up in ``model.reinitialized``.
    """
    ckpt = read_checkpoint(path)
    return model_from_checkpoint(ckpt, config, seed, dtype)


def model_from_checkpoint(ckpt: Checkpoint, config: ModelConfig | None = None, seed: int = 0,
                          dtype=np.float32) -> TanModel:
    stored_cfg = ckpt.model_config()
    target_cfg = config or stored_cfg
    if target_cfg.replace(scale=stored_cfg.scale) != stored_cfg:
        raise CompatError("checkpoint architecture differs from the requested one beyond the scale factor")
    model = TanModel(target_cfg, seed=seed, dtype=dtype)
    stored = ckpt.parameters()
    params = model.params()
    missing = [n for n in params if n not in stored]
    extra = [n for n in stored if n not in params]
    if missing or extra:
        raise CompatError(f"tensor manifest mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    reinitialized = []
    for name, t in params.items():
        arr = stored[name]
        if arr.shape == t.shape:
            t.data = arr.astype(dtype)
        elif scale_dependent(name) and target_cfg.scale != stored_cfg.scale:
            reinitialized.append(name)
        else:
            raise CompatError(f"tensor {name}: checkpoint shape {arr.shape} vs model {t.shape}")
    model.reinitialized = reinitialized
    return model
