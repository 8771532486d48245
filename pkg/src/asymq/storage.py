"""Bit-packed codes and the AFT1 / AFQ1 binary containers.

Layouts (all little-endian)::

    AFT1  magic "AFT1" | version u8 | rank u8 (=2) | rows u64 | cols u64
          | rows*cols float32, row-major

    AFQ1  magic "AFQ1" | version u8 | format u8 | mode u8 | group_size i32
          | rows u64 | cols u64 | params_per_group u8
          | group_count*ppg float32 (row-major group order)
          | packed codes, each row padded to a byte boundary

4-bit codes put the even-indexed code in the low nibble. 3-bit codes form a
continuous LSB-first bit stream (eight codes per three bytes).
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from . import kernels
from .formats import FormatId, codebook_for
from .quant import GroupSpec, QuantizedTensor, QuantMode, params_per_group

VERSION = 1
FLOAT_MAGIC = b"AFT1"
QUANT_MAGIC = b"AFQ1"

_FLOAT_HEADER = struct.Struct("<4sBBQQ")
_QUANT_HEADER = struct.Struct("<4sBBBiQQB")
FLOAT_HEADER_SIZE = _FLOAT_HEADER.size
QUANT_HEADER_SIZE = _QUANT_HEADER.size

PathOrFile = Union[str, os.PathLike, BinaryIO]


class ContainerError(ValueError):
    """Malformed, truncated or invalid tensor container."""


# ---------------------------------------------------------------------------
# flat code packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PackedCodes:
    data: bytes
    bit_width: int
    count: int

    def __eq__(self, other):
        if not isinstance(other, PackedCodes):
            return NotImplemented
        return (self.data, self.bit_width, self.count) == (other.data, other.bit_width, other.count)


def _check_width(bit_width: int) -> None:
    if bit_width not in (3, 4):
        raise ValueError(f"bit_width must be 3 or 4, got {bit_width}")


def pack(codes, bit_width: int) -> PackedCodes:
    _check_width(bit_width)
    arr = np.asarray(codes, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= 1 << bit_width):
        raise ValueError(f"code out of range for {bit_width}-bit packing")
    packed = kernels.pack_rows(arr.astype(np.uint8)[None, :], bit_width)
    return PackedCodes(packed.tobytes(), bit_width, int(arr.size))


def unpack(p: PackedCodes) -> list[int]:
    _check_width(p.bit_width)
    expected = kernels.row_nbytes(p.count, p.bit_width)
    if len(p.data) != expected:
        raise ValueError(
            f"packed buffer has {len(p.data)} bytes, expected {expected} for "
            f"{p.count} {p.bit_width}-bit codes"
        )
    buf = np.frombuffer(p.data, dtype=np.uint8)[None, :]
    return kernels.unpack_rows(buf, p.bit_width, p.count)[0].tolist()


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


def _read_all(source: PathOrFile) -> bytes:
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes()
    return source.read()


def _write_all(sink: PathOrFile, payload: bytes) -> None:
    if isinstance(sink, (str, os.PathLike)):
        write_atomic(Path(sink), payload)
    else:
        sink.write(payload)


def write_atomic(path: Path, payload: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _check_magic(buf: bytes, magic: bytes) -> None:
    if len(buf) < 4:
        raise ContainerError("truncated header")
    if buf[:4] != magic:
        raise ContainerError(f"bad magic {bytes(buf[:4])!r}, expected {magic!r}")


def float_to_bytes(t) -> bytes:
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {t.shape}")
    rows, cols = t.shape
    header = _FLOAT_HEADER.pack(FLOAT_MAGIC, VERSION, 2, rows, cols)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def float_from_bytes(buf: bytes) -> np.ndarray:
    _check_magic(buf, FLOAT_MAGIC)
    if len(buf) < FLOAT_HEADER_SIZE:
        raise ContainerError("truncated AFT1 header")
    magic, version, rank, rows, cols = _FLOAT_HEADER.unpack_from(buf)
    if magic != FLOAT_MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {FLOAT_MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported AFT1 version {version}")
    if rank != 2:
        raise ContainerError(f"unsupported rank {rank}")
    expected = rows * cols * 4
    payload = len(buf) - FLOAT_HEADER_SIZE
    if payload != expected:
        raise ContainerError(
            f"payload is {payload} bytes but header shape {rows}x{cols} needs {expected}"
        )
    t = np.frombuffer(buf, dtype="<f4", offset=FLOAT_HEADER_SIZE).reshape(rows, cols)
    if not np.all(np.isfinite(t)):
        raise ContainerError("float payload contains NaN or Inf")
    return t.astype(np.float32)


def save_float(t, sink: PathOrFile) -> None:
    _write_all(sink, float_to_bytes(t))


def load_float(source: PathOrFile) -> np.ndarray:
    return float_from_bytes(_read_all(source))


def quantized_to_bytes(q: QuantizedTensor) -> bytes:
    rows, cols = q.shape
    ppg = q.params_per_group
    header = _QUANT_HEADER.pack(
        QUANT_MAGIC, VERSION, int(q.format), int(q.mode), q.group_size, rows, cols, ppg
    )
    params = np.ascontiguousarray(q.params, dtype="<f4").reshape(q.n_groups, ppg)
    packed = np.ascontiguousarray(q.packed, dtype=np.uint8)
    return header + params.tobytes() + packed.tobytes()


def quantized_size(rows: int, cols: int, fmt: FormatId, mode: QuantMode, group_size: int) -> int:
    """Byte size of the AFQ1 encoding, from the layout alone."""
    spec = GroupSpec(group_size)
    n_groups = rows * spec.groups_per_row(cols)
    bits = codebook_for(fmt).bit_width
    return (
        QUANT_HEADER_SIZE
        + n_groups * params_per_group(mode) * 4
        + rows * kernels.row_nbytes(cols, bits)
    )


def quantized_from_bytes(buf: bytes) -> QuantizedTensor:
    _check_magic(buf, QUANT_MAGIC)
    if len(buf) < QUANT_HEADER_SIZE:
        raise ContainerError("truncated AFQ1 header")
    magic, version, fmt, mode, group_size, rows, cols, ppg = _QUANT_HEADER.unpack_from(buf)
    if magic != QUANT_MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {QUANT_MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported AFQ1 version {version}")
    try:
        fmt = FormatId(fmt)
        mode = QuantMode(mode)
        spec = GroupSpec(group_size)
    except ValueError as exc:
        raise ContainerError(str(exc)) from None
    if ppg != params_per_group(mode):
        raise ContainerError(f"params_per_group {ppg} does not match mode {mode.name}")
    if rows == 0 or cols == 0:
        raise ContainerError("empty tensor")
    expected = quantized_size(rows, cols, fmt, mode, group_size)
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "trailing bytes in"
        raise ContainerError(f"{kind} AFQ1 payload: {len(buf)} bytes, expected {expected}")
    n_groups = rows * spec.groups_per_row(cols)
    off = QUANT_HEADER_SIZE
    params = np.frombuffer(buf, dtype="<f4", count=n_groups * ppg, offset=off)
    params = params.astype(np.float32).reshape(n_groups, ppg)
    if not np.all(np.isfinite(params)):
        raise ContainerError("group params contain NaN or Inf")
    off += n_groups * ppg * 4
    row_bytes = kernels.row_nbytes(cols, codebook_for(fmt).bit_width)
    packed = np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(rows, row_bytes).copy()
    return QuantizedTensor(
        shape=(rows, cols),
        format=fmt,
        mode=mode,
        group_size=group_size,
        packed=packed,
        params=params,
    )


def save_quantized(q: QuantizedTensor, sink: PathOrFile) -> None:
    _write_all(sink, quantized_to_bytes(q))


def load_quantized(source: PathOrFile) -> QuantizedTensor:
    return quantized_from_bytes(_read_all(source))


def sniff(source: PathOrFile) -> bytes:
    """First four bytes of a container, for dispatching on magic."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read(4)
    if isinstance(source, io.BytesIO):
        return source.getvalue()[:4]
    raise TypeError("sniff needs a path or BytesIO")
