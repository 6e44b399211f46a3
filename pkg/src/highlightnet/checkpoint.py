"""Binary checkpoint format.

Layout (all integers u32 little-endian)::

    b"HLN1" | version | config length | config text (UTF-8 key=value lines)
    repeated: name length | name (UTF-8) | rank | dims... | fp32 LE payload
    CRC32 of every preceding byte

Weights are stored under their own names; ADAM moments under
``adam.m/<name>`` and ``adam.v/<name>``. The epoch counter and ADAM step
count travel in the config text.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .enhancer import ModelWeights
from .errors import CorruptCheckpointError, UnsupportedVersionError
from .optim import AdamState

MAGIC = b"HLN1"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = frozenset({FORMAT_VERSION})

_M_PREFIX = "adam.m/"
_V_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    weights: ModelWeights
    adam: AdamState | None = None
    epoch: int = 0
    config: dict[str, str] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.weights != other.weights or self.epoch != other.epoch
                or self.config != other.config or self.version != other.version):
            return False
        if (self.adam is None) != (other.adam is None):
            return False
        if self.adam is None:
            return True
        a, b = self.adam, other.adam
        return (a.t == b.t and a.m.keys() == b.m.keys()
                and all(np.array_equal(a.m[k], b.m[k]) and np.array_equal(a.v[k], b.v[k]) for k in a.m))


def _config_text(ckpt: Checkpoint) -> str:
    items = dict(ckpt.config)
    items["epoch"] = str(ckpt.epoch)
    if ckpt.adam is not None:
        items["adam.t"] = str(ckpt.adam.t)
    for k, v in items.items():
        if "\n" in k or "=" in k or "\n" in str(v):
            raise ValueError(f"config entry {k!r} cannot be encoded")
    return "".join(f"{k}={v}\n" for k, v in items.items())


def _record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape)
    return head + arr.tobytes()


def encode(ckpt: Checkpoint) -> bytes:
    text = _config_text(ckpt).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(text)), text]
    for name, arr in ckpt.weights.arrays.items():
        parts.append(_record(name, arr))
    if ckpt.adam is not None:
        for name in ckpt.adam.m:
            parts.append(_record(_M_PREFIX + name, ckpt.adam.m[name]))
            parts.append(_record(_V_PREFIX + name, ckpt.adam.v[name]))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf, self.pos, self.end = buf, 0, end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise CorruptCheckpointError("unexpected end of checkpoint data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 12 or buf[:4] != MAGIC:
        raise CorruptCheckpointError("missing HLN1 magic")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CorruptCheckpointError("checksum mismatch")
    r = _Reader(buf, len(buf) - 4)
    r.take(4)
    version = r.u32()
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersionError(f"checkpoint version {version} not in {sorted(SUPPORTED_VERSIONS)}")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptCheckpointError(f"config text is not UTF-8: {exc}") from None
    config = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptCheckpointError(f"bad config line {line!r}")
        config[key] = value

    tensors: dict[str, np.ndarray] = {}
    while r.pos < r.end:
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = [r.u32() for _ in range(rank)]
        payload = r.take(4 * int(np.prod(dims, dtype=np.int64)))
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)

    epoch = int(config.pop("epoch", "0"))
    adam_t = config.pop("adam.t", None)
    weights = ModelWeights({k: v for k, v in tensors.items() if not k.startswith(("adam.m/", "adam.v/"))})
    adam = None
    if adam_t is not None:
        adam = AdamState(t=int(adam_t))
        for k, v in tensors.items():
            if k.startswith(_M_PREFIX):
                adam.m[k[len(_M_PREFIX):]] = v
            elif k.startswith(_V_PREFIX):
                adam.v[k[len(_V_PREFIX):]] = v
        if adam.m.keys() != adam.v.keys():
            raise CorruptCheckpointError("ADAM moment buffers are incomplete")
    return Checkpoint(weights=weights, adam=adam, epoch=epoch, config=config, version=version)


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    atomic_write(path, encode(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return decode(Path(path).read_bytes())


def load_weights(path: str | os.PathLike) -> ModelWeights:
    return load_checkpoint(path).weights
