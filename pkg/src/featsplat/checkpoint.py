"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SGS1"  u32 version  u32 n_entries
    n_entries x:
        u16 name length, name (utf-8)
        u8 dtype code (f = float64, i = int64, u = uint8, j = utf-8 JSON)
        u8 ndim, ndim x u64 shape
        u64 payload bytes, payload

Entries are written in a fixed order and JSON is serialized with sorted keys,
so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .decoder import Decoder, DecoderConfig
from .errors import CheckpointError
from .field import FeatureField, FieldConfig
from .model import Model
from .optim import OptimState
from .scene import GaussianSet

MAGIC = b"SGS1"
VERSION = 1

_CODES = {"f": np.dtype("<f8"), "i": np.dtype("<i8"), "u": np.dtype("u1")}


def _code_for(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "f"
    if arr.dtype == np.uint8:
        return "u"
    if arr.dtype.kind in "iu":
        return "i"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def _write_entry(buf, name: str, value) -> None:
    raw_name = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw_name)))
    buf.write(raw_name)
    if isinstance(value, (dict, list)):
        payload = json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(b"j" + struct.pack("<B", 0))
    else:
        arr = np.asarray(value)
        code = _code_for(arr)
        buf.write(code.encode() + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()
    buf.write(struct.pack("<Q", len(payload)))
    buf.write(payload)


def to_bytes(model: Model, optim: OptimState | None = None, meta: dict | None = None) -> bytes:
    optim = optim if optim is not None else OptimState()
    entries: list[tuple[str, object]] = []
    header = {
        "field": asdict(model.field.cfg),
        "decoder": asdict(model.decoder.cfg),
        "view_dir_grad": model.view_dir_grad,
        "optim": {"beta1": optim.beta1, "beta2": optim.beta2, "eps": optim.eps, "step": optim.step},
        "meta": meta or {},
    }
    entries.append(("header", header))
    for k, v in model.gaussians.arrays().items():
        entries.append((f"gaussians.{k}", v))
    entries.append(("field.resolutions", model.field.resolutions))
    for k, v in model.field.params().items():
        entries.append((k, v))
    for k, v in model.decoder.params().items():
        entries.append((k, v))
    for k in sorted(optim.exp_avg):
        entries.append((f"optim.exp_avg.{k}", optim.exp_avg[k]))
        entries.append((f"optim.exp_avg_sq.{k}", optim.exp_avg_sq[k]))

    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(entries)))
    for name, value in entries:
        _write_entry(buf, name, value)
    return buf.getvalue()


def save_checkpoint(path, model: Model, optim: OptimState | None = None, meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(to_bytes(model, optim, meta))


def _read(raw: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(raw):
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw[pos : pos + size]), pos + size


def from_bytes(raw: bytes):
    """Returns (model, optim, meta)."""
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version, count), pos = _read(raw, 4, "<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    entries = {}
    for _ in range(count):
        (nlen,), pos = _read(raw, pos, "<H")
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        code = raw[pos : pos + 1].decode()
        (ndim,), pos = _read(raw, pos + 1, "<B")
        shape, pos = _read(raw, pos, f"<{ndim}Q") if ndim else ((), pos)
        (nbytes,), pos = _read(raw, pos, "<Q")
        payload = raw[pos : pos + nbytes]
        if len(payload) != nbytes:
            raise CheckpointError("truncated checkpoint")
        pos += nbytes
        if code == "j":
            entries[name] = json.loads(payload.decode("utf-8"))
        elif code in _CODES:
            entries[name] = np.frombuffer(payload, dtype=_CODES[code]).reshape(shape).copy()
        else:
            raise CheckpointError(f"unknown dtype code {code!r}")

    try:
        header = entries["header"]
        g = GaussianSet(
            entries["gaussians.positions"],
            entries["gaussians.log_scales"],
            entries["gaussians.rotations"],
            entries["gaussians.opacity_logits"],
            entries["gaussians.tier"],
        )
        field = FeatureField.__new__(FeatureField)
        field.cfg = FieldConfig(**header["field"])
        field.resolutions = entries["field.resolutions"]
        field.tables = entries["field.tables"]
        field.mlp = {k: entries[f"field.mlp.{k}"] for k in ("w1", "b1", "w2", "b2")}
        decoder = Decoder.__new__(Decoder)
        decoder.cfg = DecoderConfig(**header["decoder"])
        decoder.weights = {k[len("decoder.") :]: v for k, v in entries.items() if k.startswith("decoder.")}
        o = header["optim"]
        optim = OptimState(o["beta1"], o["beta2"], o["eps"], o["step"])
        for k, v in entries.items():
            if k.startswith("optim.exp_avg_sq."):
                optim.exp_avg_sq[k[len("optim.exp_avg_sq.") :]] = v
            elif k.startswith("optim.exp_avg."):
                optim.exp_avg[k[len("optim.exp_avg.") :]] = v
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing entry {exc}") from exc
    model = Model(g, field, decoder, header.get("view_dir_grad", True))
    return model, optim, header.get("meta", {})


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
