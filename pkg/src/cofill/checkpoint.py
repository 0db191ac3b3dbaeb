"""Binary checkpoint format.

Single little-endian file: magic, version, config snapshot (flat key=value
text), normalizer state, training-step counter, then length-prefixed
name/shape/data records for every parameter tensor. Loading a file whose
magic or version disagrees fails closed.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Normalizer
from .errors import ContractError
from .fileio import atomic_write_bytes
from .tensor import Tensor

MAGIC = b"COFILLCKPT"
VERSION = 1


@dataclass
class CheckpointData:
    config_text: str
    normalizer: Normalizer
    params: dict[str, np.ndarray]
    step: int


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    out = struct.pack("<H", len(name_b)) + name_b
    out += struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<Q", len(payload)) + payload
    return out


def save_checkpoint(path: str | Path, config_text: str, normalizer: Normalizer,
                    params: dict[str, Tensor | np.ndarray], step: int) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_b = config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_b)) + cfg_b)
    n = len(normalizer.means)
    buf.write(struct.pack("<I", n))
    buf.write(np.ascontiguousarray(normalizer.means, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(normalizer.stds, dtype="<f8").tobytes())
    buf.write(struct.pack("<Q", step))
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        p = params[name]
        arr = p.data if isinstance(p, Tensor) else np.asarray(p)
        buf.write(_pack_array(name, arr))
    atomic_write_bytes(path, buf.getvalue())


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContractError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.read(len(MAGIC)) != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ContractError(
            f"{path}: checkpoint format version {version} is not "
            f"supported (expected {VERSION})"
        )
    (cfg_len,) = r.unpack("<I")
    config_text = r.read(cfg_len).decode("utf-8")
    (n,) = r.unpack("<I")
    means = np.frombuffer(r.read(8 * n), dtype="<f8").copy()
    stds = np.frombuffer(r.read(8 * n), dtype="<f8").copy()
    (step,) = r.unpack("<Q")
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (payload_len,) = r.unpack("<Q")
        arr = np.frombuffer(r.read(payload_len), dtype="<f8").copy()
        params[name] = arr.reshape(shape)
    return CheckpointData(config_text=config_text,
                          normalizer=Normalizer(means=means, stds=stds),
                          params=params, step=step)
