"""Binary checkpoint container.

Layout (little-endian)::

    b"PHNX"  uint32 version  uint32 n_entries
    repeated n_entries times:
        uint16 name_len, name (utf-8)
        uint8  kind (1 = float64 tensor, 2 = raw bytes)
        uint8  ndim, ndim * uint32 shape
        uint64 payload_len, payload

Entries: ``meta/config`` (JSON), ``meta/rng`` (JSON), ``meta/threshold``,
``param/<name>``, ``adam/step``, ``adam/m/<name>``, ``adam/v/<name>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import FormatError
from .model import Detector
from .trainer import AdamW, TrainResult, make_optimizer

MAGIC = b"PHNX"
VERSION = 1
_F64 = 1
_BYTES = 2


def _pack_entry(name: str, value) -> bytes:
    key = name.encode("utf-8")
    if isinstance(value, (bytes, bytearray)):
        kind, shape, payload = _BYTES, (len(value),), bytes(value)
    else:
        arr = np.asarray(value, dtype="<f8")
        kind, shape, payload = _F64, arr.shape, arr.tobytes(order="C")
    head = struct.pack("<H", len(key)) + key + struct.pack("<BB", kind, len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    return head + struct.pack("<Q", len(payload)) + payload


def encode(entries: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    parts += [_pack_entry(k, v) for k, v in entries.items()]
    return b"".join(parts)


def decode(raw: bytes) -> dict:
    def need(pos, n, what):
        if pos + n > len(raw):
            raise FormatError(f"checkpoint truncated at byte {pos} while reading {what}")

    need(0, 12, "header")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r} at byte 0")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    pos = 12
    out = {}
    for _ in range(count):
        need(pos, 2, "name length")
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(pos, n + 2, "name")
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        kind, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        need(pos, 4 * ndim + 8, f"shape of {name}")
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        (length,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        need(pos, length, f"payload of {name}")
        payload = raw[pos:pos + length]
        pos += length
        if kind == _BYTES:
            out[name] = payload
        elif kind == _F64:
            if length != 8 * int(np.prod(shape, dtype=np.int64)):
                raise FormatError(f"entry {name}: payload length {length} does not match shape {shape}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        else:
            raise FormatError(f"entry {name}: unknown kind {kind}")
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after last entry")
    return out


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(result: TrainResult) -> bytes:
    model, opt = result.model, result.optimizer
    entries = {
        "meta/config": _json_bytes(model.config.to_dict()),
        "meta/rng": _json_bytes({"seed": model.config.seed, "next_epoch": result.epochs_done + 1}),
        "meta/threshold": np.float64(result.threshold),
    }
    for p in model.params():
        entries[f"param/{p.name}"] = p.value
    entries["adam/step"] = np.float64(opt.step_count)
    for p in model.params():
        entries[f"adam/m/{p.name}"] = opt.m[p.name]
        entries[f"adam/v/{p.name}"] = opt.v[p.name]
    return encode(entries)


def save(result: TrainResult, path) -> None:
    Path(path).write_bytes(to_bytes(result))


def from_bytes(raw: bytes) -> TrainResult:
    entries = decode(raw)
    try:
        config = TrainConfig.from_dict(json.loads(entries["meta/config"]))
        model = Detector(config)
        opt: AdamW = make_optimizer(model, config)
        for p in model.params():
            value = entries[f"param/{p.name}"]
            if value.shape != p.value.shape:
                raise FormatError(f"{p.name}: stored shape {value.shape} != expected {p.value.shape}")
            p.value[...] = value
            opt.m[p.name][...] = entries[f"adam/m/{p.name}"]
            opt.v[p.name][...] = entries[f"adam/v/{p.name}"]
        opt.step_count = int(entries["adam/step"])
        threshold = float(entries["meta/threshold"])
        rng = json.loads(entries["meta/rng"])
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing entry {exc}") from exc
    return TrainResult(model, opt, threshold, [], int(rng["next_epoch"]) - 1)


def load(path) -> TrainResult:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw)
