"""Calibration-based quantizers that take any group quantizer as a plugin.

``gptq_quantize`` compensates each column's rounding error into the columns
not yet quantized using the inverse Hessian of the layer's least-squares
objective. ``awq_search`` grid-searches a per-input-channel scaling exponent
driven by mean activation magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .formats import FormatId, codebook_for, parse_format
from .quant import (
    GroupSpec,
    QuantizedTensor,
    QuantMode,
    _as_spec,
    _cols,
    as_float_tensor,
    check_compatible,
    decode,
    dequantize_tensor,
    encode,
    fit_stable,
    pack_quantized,
    params_per_group,
    parse_mode,
    quantize_tensor,
)

DEFAULT_AWQ_GRID = tuple(round(0.1 * i, 1) for i in range(11))


class SingularHessianError(np.linalg.LinAlgError):
    """The damped Hessian is not positive definite."""


@dataclass(frozen=True)
class QuantizerHandle:
    format: FormatId
    mode: QuantMode
    spec: GroupSpec = field(default_factory=GroupSpec)

    def __post_init__(self):
        object.__setattr__(self, "format", parse_format(self.format))
        object.__setattr__(self, "mode", parse_mode(self.mode))
        object.__setattr__(self, "spec", _as_spec(self.spec))
        check_compatible(codebook_for(self.format), self.mode)

    def quantize(self, w) -> QuantizedTensor:
        return quantize_tensor(w, self.format, self.mode, self.spec)


def as_calibration(x, in_features: int) -> np.ndarray:
    """Validate an ``(in_features, n_samples)`` activation matrix."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != in_features:
        raise ValueError(
            f"calibration set must be ({in_features}, n_samples), got {x.shape}"
        )
    if x.shape[1] < 1:
        raise ValueError("calibration set needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("calibration set contains non-finite values")
    return x


def hessian(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return 2.0 * x @ x.T


def proxy_loss(w, w_hat, x) -> float:
    """sum over rows of dW H dW^T with H = 2 X X^T."""
    d = np.asarray(w, dtype=np.float64) - np.asarray(w_hat, dtype=np.float64)
    return float(2.0 * np.sum((d @ np.asarray(x, dtype=np.float64)) ** 2))


def _inverse_cholesky(h: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor of H^-1; row j carries the update for column j."""
    try:
        lower = np.linalg.cholesky(h)
        eye = np.eye(h.shape[0])
        lower_inv = np.linalg.solve(lower, eye)
        h_inv = lower_inv.T @ lower_inv
        return np.linalg.cholesky(h_inv).T
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(f"damped Hessian is singular: {exc}") from None


def gptq_quantize(w, calib, q: QuantizerHandle, damping: float = 0.01) -> QuantizedTensor:
    """Quantize columns in input order, folding each column's error forward.

    Group params are fit once per row when a group's first column comes up,
    from the values as compensated at that moment.
    """
    if damping <= 0:
        raise ValueError("damping must be positive")
    w = as_float_tensor(w)
    rows, cols = w.shape
    x = as_calibration(calib, cols)
    cb = codebook_for(q.format)

    h = hessian(x)
    mean_diag = float(np.mean(np.diag(h)))
    h[np.diag_indices_from(h)] += damping * mean_diag
    u = _inverse_cholesky(h)

    work = w.astype(np.float64)
    codes = np.empty((rows, cols), dtype=np.uint8)
    gpr = q.spec.groups_per_row(cols)
    params = np.empty((rows, gpr, params_per_group(q.mode)), dtype=np.float32)
    bounds = q.spec.bounds(cols)
    for g, (a, b) in enumerate(bounds):
        block = work[:, a:b].astype(np.float32)
        gp = fit_stable(block.min(axis=1), block.max(axis=1), cb, q.mode)
        params[:, g] = gp
        p = _cols(gp)
        for j in range(a, b):
            col = work[:, j : j + 1].astype(np.float32)
            c = encode(col, p, cb, q.mode)
            codes[:, j] = c[:, 0]
            err = (col[:, 0].astype(np.float64) - decode(c, p, cb, q.mode)[:, 0]) / u[j, j]
            if j + 1 < cols:
                work[:, j + 1 :] -= np.outer(err, u[j, j + 1 :])
    return pack_quantized(codes, params.reshape(rows * gpr, -1), q.format, q.mode, q.spec)


class AWQResult(NamedTuple):
    scales: np.ndarray
    quantized: QuantizedTensor
    alpha: float
    errors: dict


def activation_scales(x: np.ndarray, alpha: float) -> np.ndarray:
    """``mean|x_i| ** alpha`` per input channel, unit geometric mean, float32.

    Channels with no activation get scale 1 before normalization.
    """
    act = np.mean(np.abs(x.astype(np.float64)), axis=1)
    s = np.ones_like(act)
    live = act > 0
    s[live] = act[live] ** alpha
    s /= np.exp(np.mean(np.log(s)))
    return s.astype(np.float32)


def awq_output_error(w, q: QuantizedTensor, scales, x) -> float:
    """``||W X - dequant(Q) diag(s)^-1 X||^2``."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    x_scaled = x / np.asarray(scales, dtype=np.float64)[:, None]
    d = w @ x - dequantize_tensor(q).astype(np.float64) @ x_scaled
    return float(np.sum(d * d))


def awq_search(w, calib, q: QuantizerHandle, grid: Sequence[float] = DEFAULT_AWQ_GRID) -> AWQResult:
    grid = [float(a) for a in grid]
    if not grid:
        raise ValueError("empty alpha grid")
    w = as_float_tensor(w)
    x = as_calibration(calib, w.shape[1])
    best = None
    errors = {}
    for alpha in grid:
        s = activation_scales(x, alpha)
        qt = q.quantize(w * s[None, :])
        err = awq_output_error(w, qt, s, x)
        errors[alpha] = err
        key = (err, alpha)
        if best is None or key < best[0]:
            best = (key, s, qt)
    (err, alpha), s, qt = best
    return AWQResult(scales=s, quantized=qt, alpha=alpha, errors=errors)


def awq_scale_search(w, calib, q: QuantizerHandle, grid: Sequence[float] = DEFAULT_AWQ_GRID):
    """``(per-input-channel scales, quantized W diag(s))`` for the best alpha."""
    res = awq_search(w, calib, q, grid)
    return res.scales, res.quantized
