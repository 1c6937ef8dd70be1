"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CESA1"
    u32 header length, header JSON (config echo, optimizer scalars, metadata)
    u32 record count
    per record: u16 name length, name (utf-8), u8 dtype tag, u8 rank,
                rank x u32 extents, float32 payload
    u32 CRC32 of every preceding byte

Optimizer moments are stored as records named ``adam.m/<param>`` and
``adam.v/<param>`` so a resumed run continues bit-for-bit. Non-trainable
buffers (prefixed ``buffer.``) and frozen parameters carry no moments.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, config_from_dict
from .substrate.optim import OptimizerState

MAGIC = b"CESA1"
DTYPE_TAGS = {0: "<f4"}
F32 = 0


class CheckpointError(ValueError):
    pass


def encode(header: dict, records: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(head)), head, struct.pack("<I", len(records))]
    for name, value in records.items():
        raw = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupted or truncated)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("checkpoint truncated")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(hlen))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not JSON: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    records = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"record {name!r}: unknown dtype tag {tag}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * n), dtype=DTYPE_TAGS[tag]).reshape(shape)
        if name in records:
            raise CheckpointError(f"duplicate record {name!r}")
        records[name] = arr.astype(np.float32)
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last record")
    return header, records


@dataclass
class Checkpoint:
    config: Config
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        records = dict(self.params)
        header = {"config": self.config.to_dict(), "meta": self.meta, "optimizer": None}
        if self.optimizer is not None:
            o = self.optimizer
            header["optimizer"] = {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps,
                                   "step": o.step, "clip_norm": o.clip_norm}
            for name in self.params:
                if name not in o.m:
                    continue   # buffers and frozen parameters have no moments
                records[f"adam.m/{name}"] = o.m[name]
                records[f"adam.v/{name}"] = o.v[name]
        return encode(header, records)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        header, records = decode(data)
        try:
            config = config_from_dict(header["config"], env={})
        except Exception as exc:
            raise CheckpointError(f"checkpoint config invalid: {exc}") from exc
        params = {k: v for k, v in records.items() if not k.startswith("adam.")}
        opt = None
        if header.get("optimizer"):
            o = header["optimizer"]
            opt = OptimizerState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                                 step=o["step"], clip_norm=o["clip_norm"])
            for name in params:
                has_m, has_v = f"adam.m/{name}" in records, f"adam.v/{name}" in records
                if has_m != has_v:
                    raise CheckpointError(f"optimizer moments incomplete for {name!r}")
                if has_m:
                    opt.m[name] = records[f"adam.m/{name}"].copy()
                    opt.v[name] = records[f"adam.v/{name}"].copy()
        return cls(config, params, opt, header.get("meta") or {})

    def build_model(self):
        from .coevolution import CesaModel

        model = CesaModel(self.config.model, self.config.seed)
        try:
            model.load_state_dict(self.params)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"checkpoint does not match the configured model: {exc}") from exc
        return model


def from_model(model, config: Config, optimizer: OptimizerState | None = None, meta: dict | None = None) -> Checkpoint:
    return Checkpoint(config, model.state_dict(), optimizer, dict(meta or {}))


def save(path, ckpt: Checkpoint) -> Path:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    data = ckpt.to_bytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_bytes(data)
