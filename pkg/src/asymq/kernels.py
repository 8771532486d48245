"""Hot inner loops, each with a numba and a pure-numpy implementation.

Both variants of every kernel are importable (``*_np`` / ``*_nb``) so tests and
the benchmark can compare them; the unsuffixed names are bound to whichever
backend :mod:`asymq._accel` selected. The two paths are bit-identical.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# nearest codebook index
# ---------------------------------------------------------------------------


def nearest_index_np(t: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Index of the closest entry of ascending ``values`` for every ``t``.

    Ties go to the entry of smaller magnitude.
    """
    t = np.asarray(t, dtype=np.float64)
    n = values.shape[0]
    pos = np.searchsorted(values, t, side="left")
    lo = np.clip(pos - 1, 0, n - 1)
    hi = np.clip(pos, 0, n - 1)
    vlo = values[lo]
    vhi = values[hi]
    dlo = np.abs(t - vlo)
    dhi = np.abs(vhi - t)
    take_hi = (dhi < dlo) | ((dhi == dlo) & (np.abs(vhi) < np.abs(vlo)))
    return np.where(take_hi, hi, lo).astype(np.uint8)


@njit(cache=True, nogil=True)
def nearest_index_nb(t, values):
    n = values.shape[0]
    out = np.empty(t.shape[0], dtype=np.uint8)
    for i in range(t.shape[0]):
        x = t[i]
        a = 0
        b = n
        while a < b:
            mid = (a + b) // 2
            if values[mid] < x:
                a = mid + 1
            else:
                b = mid
        hi = a if a < n else n - 1
        lo = a - 1 if a > 0 else 0
        dlo = abs(x - values[lo])
        dhi = abs(values[hi] - x)
        if dhi < dlo or (dhi == dlo and abs(values[hi]) < abs(values[lo])):
            out[i] = hi
        else:
            out[i] = lo
    return out


# ---------------------------------------------------------------------------
# bit packing; one independently padded byte row per code row
# ---------------------------------------------------------------------------


def row_nbytes(cols: int, bits: int) -> int:
    return (cols * bits + 7) // 8


def pack_rows_np(codes: np.ndarray, bits: int) -> np.ndarray:
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    rows, cols = codes.shape
    nbytes = row_nbytes(cols, bits)
    if bits == 4:
        padded = np.zeros((rows, nbytes * 2), dtype=np.uint8)
        padded[:, :cols] = codes
        return (padded[:, 0::2] | (padded[:, 1::2] << 4)).astype(np.uint8)
    shifts = np.arange(bits, dtype=np.uint8)
    bitstream = ((codes[:, :, None] >> shifts) & 1).reshape(rows, cols * bits)
    padded = np.zeros((rows, nbytes * 8), dtype=np.uint8)
    padded[:, : cols * bits] = bitstream
    return np.packbits(padded, axis=1, bitorder="little")


def unpack_rows_np(packed: np.ndarray, bits: int, cols: int) -> np.ndarray:
    packed = np.ascontiguousarray(packed, dtype=np.uint8)
    rows = packed.shape[0]
    if bits == 4:
        out = np.empty((rows, packed.shape[1] * 2), dtype=np.uint8)
        out[:, 0::2] = packed & 0x0F
        out[:, 1::2] = packed >> 4
        return np.ascontiguousarray(out[:, :cols])
    bitstream = np.unpackbits(packed, axis=1, bitorder="little")[:, : cols * bits]
    weights = (1 << np.arange(bits, dtype=np.uint8)).astype(np.uint8)
    return (bitstream.reshape(rows, cols, bits) * weights).sum(axis=2).astype(np.uint8)


@njit(cache=True, nogil=True)
def pack_rows_nb(codes, bits):
    rows, cols = codes.shape
    nbytes = (cols * bits + 7) // 8
    out = np.zeros((rows, nbytes), dtype=np.uint8)
    for r in range(rows):
        acc = 0
        nacc = 0
        j = 0
        for c in range(cols):
            acc |= np.int64(codes[r, c]) << nacc
            nacc += bits
            while nacc >= 8:
                out[r, j] = acc & 0xFF
                acc >>= 8
                nacc -= 8
                j += 1
        if nacc > 0:
            out[r, j] = acc & 0xFF
    return out


@njit(cache=True, nogil=True)
def unpack_rows_nb(packed, bits, cols):
    rows = packed.shape[0]
    out = np.empty((rows, cols), dtype=np.uint8)
    mask = (1 << bits) - 1
    for r in range(rows):
        acc = 0
        nacc = 0
        j = 0
        for c in range(cols):
            if nacc < bits:
                acc |= np.int64(packed[r, j]) << nacc
                nacc += 8
                j += 1
            out[r, c] = acc & mask
            acc >>= bits
            nacc -= bits
    return out


# ---------------------------------------------------------------------------
# matmul with a fixed, k-ascending float32 accumulation order
# ---------------------------------------------------------------------------


def ordered_matmul_np(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    y = np.zeros((w.shape[0], x.shape[1]), dtype=np.float32)
    for k in range(w.shape[1]):
        y += np.multiply.outer(w[:, k], x[k, :])
    return y


@njit(cache=True, nogil=True)
def ordered_matmul_nb(w, x):
    m, kdim = w.shape
    n = x.shape[1]
    y = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for k in range(kdim):
            a = w[i, k]
            for j in range(n):
                y[i, j] = y[i, j] + a * x[k, j]
    return y


def lut_matmul_np(packed, bits, cols, lut, groups_per_row, group_size, x):
    """Fused decode+matmul: packed codes -> per-group LUT values -> ``@ x``."""
    codes = unpack_rows_np(packed, bits, cols)
    rows = codes.shape[0]
    gidx = (np.arange(rows)[:, None] * groups_per_row + np.arange(cols)[None, :] // group_size)
    w = lut[gidx, codes]
    return ordered_matmul_np(w, x)


@njit(cache=True, nogil=True)
def lut_matmul_nb(packed, bits, cols, lut, groups_per_row, group_size, x):
    rows = packed.shape[0]
    n = x.shape[1]
    mask = (1 << bits) - 1
    y = np.zeros((rows, n), dtype=np.float32)
    for i in range(rows):
        acc = 0
        nacc = 0
        j = 0
        for k in range(cols):
            if nacc < bits:
                acc |= np.int64(packed[i, j]) << nacc
                nacc += 8
                j += 1
            code = acc & mask
            acc >>= bits
            nacc -= bits
            a = lut[i * groups_per_row + k // group_size, code]
            for c in range(n):
                y[i, c] = y[i, c] + a * x[k, c]
    return y


if USE_NUMBA:
    def nearest_index(t, values):
        return nearest_index_nb(np.ascontiguousarray(t, dtype=np.float64), values)

    def pack_rows(codes, bits):
        return pack_rows_nb(np.ascontiguousarray(codes, dtype=np.uint8), bits)

    def unpack_rows(packed, bits, cols):
        return unpack_rows_nb(np.ascontiguousarray(packed, dtype=np.uint8), bits, cols)

    def ordered_matmul(w, x):
        return ordered_matmul_nb(
            np.ascontiguousarray(w, dtype=np.float32), np.ascontiguousarray(x, dtype=np.float32)
        )

    def lut_matmul(packed, bits, cols, lut, groups_per_row, group_size, x):
        return lut_matmul_nb(
            np.ascontiguousarray(packed, dtype=np.uint8), bits, cols,
            np.ascontiguousarray(lut, dtype=np.float32), groups_per_row, group_size,
            np.ascontiguousarray(x, dtype=np.float32),
        )
else:
    nearest_index = nearest_index_np
    pack_rows = pack_rows_np
    unpack_rows = unpack_rows_np
    ordered_matmul = ordered_matmul_np
    lut_matmul = lut_matmul_np

BACKEND = "numba" if USE_NUMBA else "numpy"
