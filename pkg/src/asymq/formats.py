"""Low-bit codebooks and nearest-value encoding against them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from . import kernels


class FormatId(IntEnum):
    # Integer values are the on-disk format tags.
    INT4 = 0
    INT3 = 1
    FP4 = 2
    FP3 = 3
    NF4 = 4
    NF3 = 5


class CodebookKind(str, Enum):
    INTEGER = "integer"
    FLOAT = "float"
    NORMALFLOAT = "normalfloat"


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered representable values of one format.

    ``range`` is the normalizer used when fitting scales: ``2 ** bits - 1``
    for integer formats and twice the largest magnitude for float formats.
    """

    format: FormatId
    values: np.ndarray  # float32, strictly ascending, read-only
    bit_width: int
    range: float
    kind: CodebookKind

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def values64(self) -> np.ndarray:
        return _VALUES64[self.format]

    @property
    def half_range(self) -> float:
        return self.range / 2.0

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(self.values == 0.0)[0])


# Decimal literals exactly as published; parsed once into float32.
_LITERALS: dict[FormatId, list[str]] = {
    FormatId.INT4: ["-8", "-7", "-6", "-5", "-4", "-3", "-2", "-1",
                    "0", "1", "2", "3", "4", "5", "6", "7"],
    FormatId.FP4: ["-6", "-4", "-3", "-2", "-1.5", "-1", "-0.5", "0",
                   "0.5", "1", "1.5", "2", "3", "4", "6"],
    FormatId.NF4: [
        "-1", "-0.6961928009986877", "-0.5250730514526367", "-0.39491748809814453",
        "-0.28444138169288635", "-0.18477343022823334", "-0.09105003625154495", "0",
        "0.07958029955625534", "0.16093020141124725", "0.24611230194568634",
        "0.33791524171829224", "0.44070982933044434", "0.5626170039176941",
        "0.7229568362236023", "1",
    ],
    FormatId.INT3: ["-4", "-3", "-2", "-1", "0", "1", "2", "3"],
    FormatId.FP3: ["-4", "-2", "-1", "0", "1", "2", "4"],
    FormatId.NF3: [
        "-1", "-0.5350227355957031", "-0.2469314038753510", "0",
        "0.1833375245332718", "0.3819939494132996", "0.6229856610298157", "1",
    ],
}

_KINDS = {
    FormatId.INT4: CodebookKind.INTEGER,
    FormatId.INT3: CodebookKind.INTEGER,
    FormatId.FP4: CodebookKind.FLOAT,
    FormatId.FP3: CodebookKind.FLOAT,
    FormatId.NF4: CodebookKind.NORMALFLOAT,
    FormatId.NF3: CodebookKind.NORMALFLOAT,
}

_BITS = {
    FormatId.INT4: 4, FormatId.FP4: 4, FormatId.NF4: 4,
    FormatId.INT3: 3, FormatId.FP3: 3, FormatId.NF3: 3,
}


def _build(fmt: FormatId) -> Codebook:
    values = np.array([np.float32(s) for s in _LITERALS[fmt]], dtype=np.float32)
    values.setflags(write=False)
    kind = _KINDS[fmt]
    bits = _BITS[fmt]
    if kind is CodebookKind.INTEGER:
        rng = float(2**bits - 1)
    else:
        rng = 2.0 * float(values.max())
    return Codebook(format=fmt, values=values, bit_width=bits, range=rng, kind=kind)


_CODEBOOKS = {fmt: _build(fmt) for fmt in FormatId}
_VALUES64 = {fmt: cb.values.astype(np.float64) for fmt, cb in _CODEBOOKS.items()}
for _v in _VALUES64.values():
    _v.setflags(write=False)


def codebook_for(fmt: FormatId | str) -> Codebook:
    return _CODEBOOKS[parse_format(fmt)]


def parse_format(fmt: FormatId | str | int) -> FormatId:
    if isinstance(fmt, FormatId):
        return fmt
    if isinstance(fmt, str):
        try:
            return FormatId[fmt.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown format {fmt!r}") from None
    return FormatId(fmt)


def nearest_code(x: float, cb: Codebook) -> int:
    """Index of the codebook value closest to ``x``.

    Ties resolve toward the value of smaller magnitude.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    return int(kernels.nearest_index(np.array([x]), cb.values64)[0])


def nearest_codes(x: np.ndarray, cb: Codebook) -> np.ndarray:
    """Vectorized :func:`nearest_code`; returns a uint8 array of x's shape."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite values")
    flat = kernels.nearest_index(x.ravel(), cb.values64)
    return flat.reshape(x.shape)


def code_value(code_index: int, cb: Codebook) -> float:
    if not 0 <= code_index < len(cb):
        raise IndexError(f"code {code_index} out of range for {cb.format.name} ({len(cb)} values)")
    return float(cb.values[code_index])
