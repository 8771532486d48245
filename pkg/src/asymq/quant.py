"""Group-wise round-to-nearest quantization in four modes.

``INT_ASYM``      scale + integer zero-point on an integer grid
``FP_SYM``        one scale; the larger of |max|, |min| lands on the codebook edge
``FP_ASYM``       separate scales for positive and negative weights
``FP_ZEROPOINT``  one scale + continuous shift (affine map of [min, max])

Groups are contiguous runs along each row. All fitting arithmetic is float64 on
float32 inputs; stored parameters and dequantized values are float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .formats import Codebook, CodebookKind, FormatId, codebook_for, parse_format


class QuantMode(IntEnum):
    # Integer values are the on-disk mode tags.
    INT_ASYM = 0
    FP_SYM = 1
    FP_ASYM = 2
    FP_ZEROPOINT = 3


PARAM_NAMES = {
    QuantMode.INT_ASYM: ("scale", "zero_point"),
    QuantMode.FP_SYM: ("scale",),
    QuantMode.FP_ASYM: ("scale_pos", "scale_neg"),
    QuantMode.FP_ZEROPOINT: ("scale", "zero_point_value"),
}

_MODE_NAMES = {
    "int-asym": QuantMode.INT_ASYM,
    "fp-sym": QuantMode.FP_SYM,
    "fp-asym": QuantMode.FP_ASYM,
    "fp-zeropoint": QuantMode.FP_ZEROPOINT,
}

def params_per_group(mode: QuantMode) -> int:
    return len(PARAM_NAMES[mode])


def parse_mode(mode: QuantMode | str | int) -> QuantMode:
    if isinstance(mode, QuantMode):
        return mode
    if isinstance(mode, str):
        key = mode.strip().lower().replace("_", "-")
        if key in _MODE_NAMES:
            return _MODE_NAMES[key]
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(_MODE_NAMES)}")
    return QuantMode(mode)


def mode_label(mode: QuantMode) -> str:
    return next(k for k, v in _MODE_NAMES.items() if v == mode)


def check_compatible(cb: Codebook, mode: QuantMode) -> None:
    is_int = cb.kind is CodebookKind.INTEGER
    if is_int != (mode is QuantMode.INT_ASYM):
        raise ValueError(
            f"mode {mode_label(mode)} is not valid for {cb.format.name} ({cb.kind.value} codebook)"
        )


def valid_pairs() -> list[tuple[FormatId, QuantMode]]:
    out = []
    for fmt in FormatId:
        for mode in QuantMode:
            try:
                check_compatible(codebook_for(fmt), mode)
            except ValueError:
                continue
            out.append((fmt, mode))
    return out


@dataclass(frozen=True)
class GroupSpec:
    """``group_size=-1`` means one group per row; a short tail group is kept as is."""

    group_size: int = -1

    def __post_init__(self):
        if self.group_size != -1 and self.group_size <= 0:
            raise ValueError(f"group_size must be -1 or positive, got {self.group_size}")

    def effective(self, cols: int) -> int:
        if self.group_size == -1:
            return cols
        return min(self.group_size, cols)

    def groups_per_row(self, cols: int) -> int:
        gs = self.effective(cols)
        return -(-cols // gs)

    def bounds(self, cols: int) -> list[tuple[int, int]]:
        gs = self.effective(cols)
        return [(a, min(a + gs, cols)) for a in range(0, cols, gs)]


def _as_spec(spec: GroupSpec | int) -> GroupSpec:
    return spec if isinstance(spec, GroupSpec) else GroupSpec(int(spec))


# ---------------------------------------------------------------------------
# elementwise fit / encode / decode
#
# ``p`` is a tuple of float64 parameter arrays, each broadcastable against the
# value/code array they are applied to.
# ---------------------------------------------------------------------------


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).astype(np.float32)


def _positive(s32: np.ndarray) -> np.ndarray:
    # Underflowed or non-positive scales fall back to 1.
    return np.where((s32 > 0) & np.isfinite(s32), s32, np.float32(1.0))


def fit_params(lo, hi, cb: Codebook, mode: QuantMode) -> np.ndarray:
    """Group params from group min/max, as float32 with shape ``(n, ppg)``."""
    # + 0.0 folds any -0.0 into +0.0 so params compare bitwise.
    return _fit_params(lo, hi, cb, mode) + np.float32(0.0)


def _fit_params(lo, hi, cb: Codebook, mode: QuantMode) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    h = cb.half_range
    if mode is QuantMode.INT_ASYM:
        # Widen to include 0 so the zero-point stays inside [0, range].
        lo0 = np.minimum(lo, 0.0)
        hi0 = np.maximum(hi, 0.0)
        s = _positive(_f32((hi0 - lo0) / cb.range))
        zp = np.clip(np.rint(-lo0 / s.astype(np.float64)), 0, cb.range)
        return np.stack([s, _f32(zp)], axis=-1)
    if mode is QuantMode.FP_SYM:
        m = np.maximum(hi, -lo)
        s = np.where(m > 0, _positive(_f32(m / h)), np.float32(1.0))
        return s[..., None].astype(np.float32)
    if mode is QuantMode.FP_ASYM:
        s_pos = np.where(hi > 0, _positive(_f32(hi / h)), np.float32(0.0))
        s_neg = np.where(lo < 0, _positive(_f32(-lo / h)), np.float32(0.0))
        # Single-signed groups: borrow the used side's scale for the unused one.
        s_pos, s_neg = (
            np.where(s_pos > 0, s_pos, np.where(s_neg > 0, s_neg, np.float32(1.0))),
            np.where(s_neg > 0, s_neg, np.where(s_pos > 0, s_pos, np.float32(1.0))),
        )
        return np.stack([s_pos, s_neg], axis=-1).astype(np.float32)
    if mode is QuantMode.FP_ZEROPOINT:
        spread = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            s_aff = _positive(_f32(spread / cb.range))
            z_aff = _f32(-lo / s_aff.astype(np.float64) - h)
        # Constant nonzero groups degrade to pure scaling; zero groups to identity.
        c = np.abs(hi)
        s_const = np.where(c > 0, _positive(_f32(c / h)), np.float32(1.0))
        s = np.where(spread > 0, s_aff, s_const)
        z = np.where(spread > 0, z_aff, np.float32(0.0))
        return np.stack([s, z], axis=-1).astype(np.float32)
    raise ValueError(f"unsupported mode {mode!r}")


def encode(x, p, cb: Codebook, mode: QuantMode) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if mode is QuantMode.INT_ASYM:
        s, zp = p
        return np.clip(np.rint(x / s) + zp, 0, cb.range).astype(np.uint8)
    if mode is QuantMode.FP_SYM:
        (s,) = p
        t = x / s
    elif mode is QuantMode.FP_ASYM:
        s_pos, s_neg = p
        t = x / np.where(x >= 0, s_pos, s_neg)
    elif mode is QuantMode.FP_ZEROPOINT:
        s, z = p
        t = x / s + z
    else:
        raise ValueError(f"unsupported mode {mode!r}")
    t = np.broadcast_to(t, np.broadcast_shapes(np.shape(t), x.shape))
    return kernels.nearest_index(t.ravel(), cb.values64).reshape(t.shape)


def decode(codes, p, cb: Codebook, mode: QuantMode) -> np.ndarray:
    codes = np.asarray(codes)
    if mode is QuantMode.INT_ASYM:
        s, zp = p
        return _f32(s * (codes.astype(np.float64) - zp))
    v = cb.values64[codes]
    if mode is QuantMode.FP_SYM:
        (s,) = p
        return _f32(s * v)
    if mode is QuantMode.FP_ASYM:
        s_pos, s_neg = p
        return _f32(np.where(v >= 0, s_pos, s_neg) * v)
    if mode is QuantMode.FP_ZEROPOINT:
        s, z = p
        return _f32(s * (v - z))
    raise ValueError(f"unsupported mode {mode!r}")


def _cols(params: np.ndarray) -> tuple[np.ndarray, ...]:
    """Split ``(n, ppg)`` float32 params into float64 column vectors of shape (n, 1)."""
    p64 = params.astype(np.float64)
    return tuple(p64[:, i : i + 1] for i in range(p64.shape[1]))


def _ulp_step(x32: np.ndarray, k) -> np.ndarray:
    """``x32`` moved by ``k`` float32 ulps (monotone across zero)."""
    i = x32.astype(np.float32).view(np.int32).astype(np.int64)
    ordered = np.where(i >= 0, i, -(i & 0x7FFFFFFF))
    ordered = ordered + k
    bits = np.where(ordered >= 0, ordered, (-ordered) | 0x80000000)
    return bits.astype(np.uint32).view(np.float32)


_REFINE_ITERS = 4
_SEARCH_RADII = (4, 16, 64)


def _offsets(mode: QuantMode, radius: int) -> np.ndarray:
    """Per-param ulp offsets to try, nearest first. Zero-points stay integral."""
    r = range(-radius, radius + 1)
    if mode is QuantMode.FP_SYM:
        offs = [(i,) for i in r]
    elif mode is QuantMode.INT_ASYM:
        offs = [(i, 0) for i in r]
    else:
        offs = [(i, j) for i in r for j in r]
    return np.array(sorted(offs, key=lambda o: (sum(map(abs, o)), o)), dtype=np.int64)


def _refit(ext: np.ndarray, params: np.ndarray, cb: Codebook, mode: QuantMode):
    """Params refit from the dequantized group extremes under ``params``."""
    cols = _cols(params)
    deq = decode(encode(ext, cols, cb, mode), cols, cb, mode)
    return fit_params(deq[:, 0], deq[:, 1], cb, mode)


def _unstable(ext, params, cb, mode) -> np.ndarray:
    return np.any(_refit(ext, params, cb, mode) != params, axis=1)


def fit_stable(lo, hi, cb: Codebook, mode: QuantMode) -> np.ndarray:
    """:func:`fit_params`, nudged so that requantizing the dequantized group
    reproduces the params bit for bit.

    Float32 rounding of the dequantized extremes can move a refit by an ulp.
    A few fit -> dequantize -> refit rounds settle most groups; the rest search
    a small ulp box around the fitted params for the nearest stable point.
    """
    lo = np.asarray(lo, dtype=np.float32).reshape(-1)
    hi = np.asarray(hi, dtype=np.float32).reshape(-1)
    ext = np.stack([lo, hi], axis=1).astype(np.float64)
    params = fit_params(lo, hi, cb, mode)
    start = params.copy()
    active = np.arange(lo.shape[0])
    for _ in range(_REFINE_ITERS):
        refit = _refit(ext[active], params[active], cb, mode)
        moved = np.any(refit != params[active], axis=1)
        active = active[moved]
        if active.size == 0:
            return params
        params[active] = refit[moved]
    active = active[_unstable(ext[active], params[active], cb, mode)]

    for radius in _SEARCH_RADII:
        if active.size == 0:
            break
        offs = _offsets(mode, radius)
        n, k = active.size, offs.shape[0]
        base = np.repeat(start[active], k, axis=0)
        cand = np.stack(
            [_ulp_step(base[:, i], np.tile(offs[:, i], n)) for i in range(base.shape[1])],
            axis=1,
        )
        ok = ~_unstable(np.repeat(ext[active], k, axis=0), cand, cb, mode)
        ok &= np.all(np.isfinite(cand), axis=1)
        ok = ok.reshape(n, k)
        found = ok.any(axis=1)
        pick = np.arange(n) * k + ok.argmax(axis=1)
        params[active[found]] = cand[pick[found]]
        active = active[~found]
    return params


# ---------------------------------------------------------------------------
# single groups
# ---------------------------------------------------------------------------


class GroupQuantParams:
    """Per-group dequantization parameters, addressable by name for the mode."""

    __slots__ = ("mode", "values")

    def __init__(self, mode: QuantMode, values):
        self.mode = mode
        self.values = tuple(float(v) for v in values)
        if len(self.values) != params_per_group(mode):
            raise ValueError("parameter count does not match mode")

    def __getattr__(self, name):
        names = PARAM_NAMES[object.__getattribute__(self, "mode")]
        if name in names:
            return self.values[names.index(name)]
        raise AttributeError(name)

    def __eq__(self, other):
        return (
            isinstance(other, GroupQuantParams)
            and self.mode == other.mode
            and self.values == other.values
        )

    def __repr__(self):
        fields = ", ".join(f"{n}={v!r}" for n, v in zip(PARAM_NAMES[self.mode], self.values))
        return f"GroupQuantParams({self.mode.name}, {fields})"


@dataclass(frozen=True, eq=False)
class QuantizedGroup:
    codes: np.ndarray
    params: GroupQuantParams
    codebook: Codebook

    def dequantize(self) -> np.ndarray:
        p = tuple(np.float64(v) for v in self.params.values)
        return decode(self.codes, p, self.codebook, self.params.mode)


def quantize_groups(groups: np.ndarray, cb: Codebook, mode: QuantMode):
    """Quantize every row of ``groups`` (shape ``(n, L)``) as one group.

    Returns ``(codes, params)`` with shapes ``(n, L)`` and ``(n, ppg)``.
    """
    g = np.asarray(groups, dtype=np.float32)
    params = fit_stable(g.min(axis=1), g.max(axis=1), cb, mode)
    codes = encode(g, _cols(params), cb, mode)
    return codes, params


def _quantize_group(group, cb: Codebook, mode: QuantMode) -> QuantizedGroup:
    check_compatible(cb, mode)
    g = np.asarray(group, dtype=np.float32).reshape(-1)
    if g.size == 0:
        raise ValueError("cannot quantize an empty group")
    if not np.all(np.isfinite(g)):
        raise ValueError("group contains non-finite values")
    codes, params = quantize_groups(g[None, :], cb, mode)
    return QuantizedGroup(codes[0], GroupQuantParams(mode, params[0]), cb)


def quantize_group_int_asym(group, cb: Codebook) -> QuantizedGroup:
    return _quantize_group(group, cb, QuantMode.INT_ASYM)


def quantize_group_fp_sym(group, cb: Codebook) -> QuantizedGroup:
    return _quantize_group(group, cb, QuantMode.FP_SYM)


def quantize_group_fp_asym(group, cb: Codebook) -> QuantizedGroup:
    return _quantize_group(group, cb, QuantMode.FP_ASYM)


def quantize_group_fp_zeropoint(group, cb: Codebook) -> QuantizedGroup:
    return _quantize_group(group, cb, QuantMode.FP_ZEROPOINT)


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Packed codes plus per-group params for one 2-D weight.

    ``packed`` holds one byte row per weight row (rows padded independently);
    ``params`` is ``(n_groups, ppg)`` float32 in row-major group order.
    """

    shape: tuple[int, int]
    format: FormatId
    mode: QuantMode
    group_size: int
    packed: np.ndarray
    params: np.ndarray

    @property
    def codebook(self) -> Codebook:
        return codebook_for(self.format)

    @property
    def bit_width(self) -> int:
        return self.codebook.bit_width

    @property
    def spec(self) -> GroupSpec:
        return GroupSpec(self.group_size)

    @property
    def groups_per_row(self) -> int:
        return self.spec.groups_per_row(self.shape[1])

    @property
    def n_groups(self) -> int:
        return self.shape[0] * self.groups_per_row

    @property
    def params_per_group(self) -> int:
        return params_per_group(self.mode)

    def codes(self) -> np.ndarray:
        return kernels.unpack_rows(self.packed, self.bit_width, self.shape[1])

    def group_params(self, index: int) -> GroupQuantParams:
        return GroupQuantParams(self.mode, self.params[index])

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            tuple(self.shape) == tuple(other.shape)
            and self.format == other.format
            and self.mode == other.mode
            and self.group_size == other.group_size
            and np.array_equal(self.packed, other.packed)
            and self.params.shape == other.params.shape
            and np.array_equal(self.params.view(np.uint32), other.params.view(np.uint32))
        )


def as_float_tensor(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {w.shape}")
    if w.size == 0:
        raise ValueError("empty tensor")
    if not np.all(np.isfinite(w)):
        raise ValueError("tensor contains non-finite values")
    return np.ascontiguousarray(w)


def element_group_index(shape: tuple[int, int], spec: GroupSpec) -> np.ndarray:
    """Flat group index of every element, shape ``(rows, cols)``."""
    rows, cols = shape
    gs = spec.effective(cols)
    gpr = spec.groups_per_row(cols)
    return np.arange(rows)[:, None] * gpr + (np.arange(cols) // gs)[None, :]


def quantize_codes(w: np.ndarray, cb: Codebook, mode: QuantMode, spec: GroupSpec):
    """Unpacked ``(codes, params)`` for a validated float32 tensor."""
    rows, cols = w.shape
    gpr = spec.groups_per_row(cols)
    codes = np.empty((rows, cols), dtype=np.uint8)
    params = np.empty((rows, gpr, params_per_group(mode)), dtype=np.float32)
    gs = spec.effective(cols)
    nfull = cols // gs
    if nfull:
        block = w[:, : nfull * gs].reshape(rows * nfull, gs)
        c, p = quantize_groups(block, cb, mode)
        codes[:, : nfull * gs] = c.reshape(rows, nfull * gs)
        params[:, :nfull] = p.reshape(rows, nfull, -1)
    if nfull * gs < cols:
        c, p = quantize_groups(w[:, nfull * gs :], cb, mode)
        codes[:, nfull * gs :] = c
        params[:, nfull] = p
    return codes, params.reshape(rows * gpr, -1)


def quantize_tensor(w, fmt: FormatId | str, mode: QuantMode | str, spec: GroupSpec | int = -1) -> QuantizedTensor:
    fmt = parse_format(fmt)
    mode = parse_mode(mode)
    spec = _as_spec(spec)
    cb = codebook_for(fmt)
    check_compatible(cb, mode)
    w = as_float_tensor(w)
    codes, params = quantize_codes(w, cb, mode, spec)
    return QuantizedTensor(
        shape=(int(w.shape[0]), int(w.shape[1])),
        format=fmt,
        mode=mode,
        group_size=spec.group_size,
        packed=kernels.pack_rows(codes, cb.bit_width),
        params=params,
    )


def pack_quantized(codes, params, fmt: FormatId, mode: QuantMode, spec: GroupSpec) -> QuantizedTensor:
    """Assemble a :class:`QuantizedTensor` from unpacked codes (used by the plugins)."""
    cb = codebook_for(fmt)
    codes = np.asarray(codes, dtype=np.uint8)
    return QuantizedTensor(
        shape=(int(codes.shape[0]), int(codes.shape[1])),
        format=fmt,
        mode=mode,
        group_size=spec.group_size,
        packed=kernels.pack_rows(codes, cb.bit_width),
        params=np.asarray(params, dtype=np.float32).reshape(-1, params_per_group(mode)),
    )


def _validated_codes(q: QuantizedTensor) -> np.ndarray:
    codes = q.codes()
    if codes.size and int(codes.max()) >= len(q.codebook):
        raise ValueError(
            f"corrupted codes: index {int(codes.max())} outside {q.format.name} codebook"
        )
    return codes


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    codes = _validated_codes(q)
    gidx = element_group_index(q.shape, q.spec)
    p64 = q.params.astype(np.float64)
    p = tuple(p64[:, i][gidx] for i in range(p64.shape[1]))
    return decode(codes, p, q.codebook, q.mode)


def group_lut(q: QuantizedTensor) -> np.ndarray:
    """Dequantized value of every (group, code) pair, shape ``(n_groups, n_codes)``."""
    cb = q.codebook
    codes = np.broadcast_to(np.arange(len(cb))[None, :], (q.n_groups, len(cb)))
    return decode(codes, _cols(q.params), cb, q.mode)
