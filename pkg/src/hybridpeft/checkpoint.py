"""Binary checkpoint container.

Layout (all integers little-endian)::

    u64 header_length | header (UTF-8 JSON, sorted keys)
    repeated segments:
        u32 name_length | name (UTF-8) | u32 ndim | u64 dims[ndim]
        | u64 byte_length | float64 data (C order)

Complex tensors are split into ``<name>.re`` and ``<name>.im`` segments.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError
from .trainer.config import TrainConfig
from .trainer.model import ToyModel, slot_from_tensors

FORMAT = "hybridpeft-checkpoint"
VERSION = 1
_F64 = np.dtype("<f8")


def config_hash(cfg: TrainConfig | dict) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form."""
    d = cfg.as_dict() if isinstance(cfg, TrainConfig) else cfg
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def encode(header: dict, tensors: dict) -> bytes:
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [struct.pack("<Q", len(head)), head]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            pieces = [(f"{name}.re", arr.real), (f"{name}.im", arr.imag)]
        else:
            pieces = [(name, arr)]
        for seg_name, data in pieces:
            data = np.ascontiguousarray(data, dtype=_F64)
            raw_name = seg_name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw_name)))
            parts.append(raw_name)
            parts.append(struct.pack("<I", data.ndim))
            parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
            payload = data.tobytes()
            parts.append(struct.pack("<Q", len(payload)))
            parts.append(payload)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes):
    """Returns (header, tensors); split complex segments are re-joined."""
    r = _Reader(buf)
    (hlen,) = r.unpack("<Q", "header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError("not a hybridpeft checkpoint")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    raw: dict = {}
    while r.pos < len(buf):
        (nlen,) = r.unpack("<I", "segment name length")
        name = r.take(nlen, "segment name").decode("utf-8")
        (ndim,) = r.unpack("<I", f"rank of segment {name!r}")
        dims = r.unpack(f"<{ndim}Q", f"dims of segment {name!r}") if ndim else ()
        (blen,) = r.unpack("<Q", f"byte length of segment {name!r}")
        expected = int(np.prod(dims, dtype=np.int64)) * _F64.itemsize
        if blen != expected:
            raise CheckpointError(
                f"segment {name!r}: {blen} bytes declared, dims {tuple(dims)} need {expected}")
        data = np.frombuffer(r.take(blen, f"data of segment {name!r}"), dtype=_F64)
        raw[name] = data.reshape(dims).astype(np.float64)
    tensors: dict = {}
    for name, arr in raw.items():
        if name.endswith(".im"):
            continue
        if name.endswith(".re"):
            base = name[:-3]
            if base + ".im" not in raw:
                raise CheckpointError(f"segment {base + '.im'!r} missing")
            tensors[base] = arr + 1j * raw[base + ".im"]
        else:
            tensors[name] = arr
    return header, tensors


def model_tensors(model: ToyModel) -> dict:
    out = {}
    for i, slot in enumerate(model.slots):
        for name, arr in slot.tensors().items():
            out[f"layer{i}.{name}"] = arr
    out["head.w"] = model.head_w
    out["head.b"] = model.head_b
    return out


def save_model(model: ToyModel, step: int = 0) -> bytes:
    cfg = model.config
    header = {"format": FORMAT, "version": VERSION, "config_hash": config_hash(cfg),
              "step": int(step), "config": cfg.as_dict(),
              "slots": [s.kind for s in model.slots]}
    return encode(header, model_tensors(model))


def _expected_shapes(kind: str, cfg: TrainConfig) -> dict:
    d = cfg.dim
    shapes = {"w0": (d, d)}
    if kind == "full":
        shapes["w"] = (d, d)
    elif kind == "lora":
        shapes.update(a=(d, cfg.rank), b=(cfg.rank, d))
    elif kind == "boft":
        shapes.update({f"block{i}": (d, d) for i in range(cfg.boft_depth)})
    elif kind == "urnn":
        shapes["u"] = (d // 2, d // 2)
    elif kind == "hybrid":
        shapes.update(w=(d, d), a=(d, cfg.rank), b=(cfg.rank, d), q=(d, d), r=(d, d))
    return shapes


def load_model(buf: bytes, expect_hash: str | None = None):
    """Rebuild a model; returns (model, header)."""
    header, tensors = decode(buf)
    cfg_dict = dict(header["config"])
    if cfg_dict.get("unitary_layers") is not None:
        cfg_dict["unitary_layers"] = tuple(cfg_dict["unitary_layers"])
    cfg = TrainConfig(**cfg_dict)
    if config_hash(cfg) != header.get("config_hash"):
        raise CheckpointError("checkpoint header hash does not match its stored config")
    if expect_hash is not None and expect_hash != header["config_hash"]:
        raise CheckpointError("checkpoint was trained under a different config")
    kinds = header.get("slots", [])
    if len(kinds) != cfg.layers:
        raise CheckpointError(f"{len(kinds)} slots recorded for {cfg.layers} layers")
    slots = []
    for i, kind in enumerate(kinds):
        t = {}
        for name, shape in _expected_shapes(kind, cfg).items():
            key = f"layer{i}.{name}"
            if key not in tensors:
                raise CheckpointError(f"segment {key!r} missing")
            if tensors[key].shape != shape:
                raise CheckpointError(
                    f"segment {key!r} has shape {tensors[key].shape}, model needs {shape}")
            t[name] = tensors[key]
        slots.append(slot_from_tensors(kind, t, cfg, i))
    for key, shape in (("head.w", (cfg.num_classes, cfg.dim)), ("head.b", (cfg.num_classes,))):
        if key not in tensors:
            raise CheckpointError(f"segment {key!r} missing")
        if tensors[key].shape != shape:
            raise CheckpointError(
                f"segment {key!r} has shape {tensors[key].shape}, model needs {shape}")
    model = ToyModel(cfg, tuple(slots), tensors["head.w"], tensors["head.b"])
    return model, header
