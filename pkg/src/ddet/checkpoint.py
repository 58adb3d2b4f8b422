"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DDET"  u32 version(=1)
    table: u32 count, then per entry
           u32 name_len, name (UTF-8), u8 dtype code, u8 rank, rank x u32 dims,
           raw little-endian values
    table  (optimizer state, same encoding)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import CheckpointFormatError, CheckpointMismatchError
from .model import ModelParams
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"DDET"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODE_OF = {np.dtype(v).newbyteorder("="): k for k, v in DTYPE_CODES.items()}


def _encode_table(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = CODE_OF.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise TypeError(f"cannot store {name!r} with dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<I")
            try:
                name = self.take(nlen).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointFormatError("tensor name is not valid UTF-8") from exc
            code, rank = self.unpack("<BB")
            if code not in DTYPE_CODES:
                raise CheckpointFormatError(f"unknown dtype code {code} for {name!r}")
            dims = self.unpack(f"<{rank}I")
            dt = DTYPE_CODES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            arr = np.frombuffer(self.take(nbytes), dtype=dt).reshape(dims)
            out[name] = arr.astype(dt.newbyteorder("="))
        return out


def checkpoint_save(params: Mapping[str, Tensor], optimizer_state: Optional[AdamState], path) -> None:
    body = MAGIC + struct.pack("<I", VERSION)
    body += _encode_table({k: t.data for k, t in params.items()})
    body += _encode_table(optimizer_state.arrays() if optimizer_state else {})
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body)
    tmp.replace(path)


def checkpoint_load(path, template: Optional[Mapping[str, Tensor]] = None):
    """Read ``(params, optimizer_state)``.

    With ``template`` the stored tensors must match its names and shapes exactly.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise CheckpointFormatError(f"{path}: truncated checkpoint ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError(f"{path}: CRC mismatch (corrupt or truncated file)")
    reader = _Reader(buf[:-4])
    reader.pos = 8
    tensors = reader.table()
    opt = reader.table()
    if reader.pos != len(reader.buf):
        raise CheckpointFormatError(f"{path}: {len(reader.buf) - reader.pos} trailing bytes")

    if template is not None:
        for name, ref in template.items():
            if name not in tensors:
                raise CheckpointMismatchError(f"checkpoint lacks parameter {name!r}")
            if tensors[name].shape != tuple(ref.shape):
                raise CheckpointMismatchError(
                    f"parameter {name!r}: checkpoint shape {tensors[name].shape}, model expects {tuple(ref.shape)}")
        unknown = sorted(set(tensors) - set(template))
        if unknown:
            raise CheckpointMismatchError(f"unknown parameter {unknown[0]!r} in checkpoint")

    params = ModelParams({k: Tensor(v, requires_grad=True, dtype=v.dtype) for k, v in tensors.items()})
    state = AdamState.from_arrays(opt) if opt else None
    return params, state
