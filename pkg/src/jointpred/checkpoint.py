"""Versioned binary checkpoint container.

Layout: magic ``b"JPCKPT"``, a little-endian ``uint16`` format version, a
``uint32`` header length, a UTF-8 JSON header, then every tensor's data as
little-endian float64 in header order. The header lists each tensor's name,
shape and byte offset, plus the config, its digest, the epoch and optional
optimiser moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"JPCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    config_digest: str
    epoch: int
    params: dict[str, np.ndarray]
    optimizer: dict | None = None  # {"step", "lr", "m": {...}, "v": {...}}
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        tensors: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in self.params.items()]
        opt_header = None
        if self.optimizer is not None:
            opt_header = {k: v for k, v in self.optimizer.items() if k not in ("m", "v")}
            tensors += [(f"adam_m/{k}", v) for k, v in self.optimizer["m"].items()]
            tensors += [(f"adam_v/{k}", v) for k, v in self.optimizer["v"].items()]
        entries, blobs, offset = [], [], 0
        for name, arr in tensors:
            a = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "shape": list(a.shape), "offset": offset})
            blobs.append(a.tobytes())
            offset += a.nbytes
        header = {
            "config": self.config,
            "config_digest": self.config_digest,
            "epoch": self.epoch,
            "meta": self.meta,
            "optimizer": opt_header,
            "tensors": entries,
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(hb)) + hb + b"".join(blobs)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if not buf.startswith(MAGIC):
            raise CheckpointError("not a checkpoint (bad magic)")
        pos = len(MAGIC)
        version, hlen = struct.unpack_from("<HI", buf, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += 6
        header = json.loads(buf[pos : pos + hlen].decode())
        data = memoryview(buf)[pos + hlen :]
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for e in header["tensors"]:
            n = int(np.prod(e["shape"], dtype=np.int64))
            end = e["offset"] + 8 * n
            if end > len(data):
                raise CheckpointError(f"truncated checkpoint at tensor {e['name']}")
            arr = np.frombuffer(data[e["offset"] : end], dtype="<f8").astype(np.float64).reshape(e["shape"])
            kind, name = e["name"].split("/", 1)
            groups[kind][name] = arr
        opt = None
        if header["optimizer"] is not None:
            opt = {**header["optimizer"], "m": groups["adam_m"], "v": groups["adam_v"]}
        return cls(header["config"], header["config_digest"], header["epoch"], groups["param"], opt, header["meta"])

    def save(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(self.to_bytes())
        return p

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            buf = Path(path).read_bytes()
        except OSError as e:
            raise CheckpointError(f"{path}: {e.strerror}") from None
        try:
            return cls.from_bytes(buf)
        except (CheckpointError, struct.error, json.JSONDecodeError, KeyError, ValueError) as e:
            raise CheckpointError(f"{path}: {e}") from None
