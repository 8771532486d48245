"""Synthetic weights, group asymmetry statistics, error metrics and the
dequantize-then-multiply reference.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .formats import FormatId, codebook_for, parse_format
from .quant import (
    GroupSpec,
    QuantizedTensor,
    QuantMode,
    _as_spec,
    _validated_codes,
    as_float_tensor,
    check_compatible,
    dequantize_tensor,
    group_lut,
    mode_label,
    parse_mode,
    quantize_tensor,
)


class Distribution(str, Enum):
    GAUSSIAN = "gaussian"
    SHIFTED_GAUSSIAN = "shifted-gaussian"
    SIGNED_LOGNORMAL_OUTLIER = "signed-lognormal-outlier"


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a reproducible synthetic weight matrix.

    ``shift`` is in units of ``std`` and moves the whole bulk. Outliers replace
    a ``outlier_rate`` fraction of entries with ``±std * exp(N(outlier_mu,
    outlier_sigma))``, the sign drawn independently per entry.
    """

    distribution: Distribution | str = Distribution.GAUSSIAN
    rows: int = 256
    cols: int = 256
    seed: int = 0
    shift: float = 0.0
    outlier_rate: float = 0.0
    std: float = 1.0
    outlier_mu: float = 1.5
    outlier_sigma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"invalid dimensions {self.rows}x{self.cols}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must be in [0, 1)")
        if self.std <= 0:
            raise ValueError("std must be positive")


def generate(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    w = rng.standard_normal((spec.rows, spec.cols)) * spec.std
    if spec.distribution is Distribution.GAUSSIAN:
        return w.astype(np.float32)
    w += spec.shift * spec.std
    if spec.distribution is Distribution.SIGNED_LOGNORMAL_OUTLIER and spec.outlier_rate > 0:
        hit = rng.random(w.shape) < spec.outlier_rate
        sign = np.where(rng.random(w.shape) < 0.5, -1.0, 1.0)
        mag = spec.std * np.exp(rng.normal(spec.outlier_mu, spec.outlier_sigma, w.shape))
        w = np.where(hit, sign * mag, w)
    return w.astype(np.float32)


# ---------------------------------------------------------------------------
# group statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroupStats:
    """Per-group extrema (arrays, row-major group order) and their asymmetry."""

    weight_max: np.ndarray
    weight_min: np.ndarray

    @property
    def asymmetry(self) -> np.ndarray:
        a = np.abs(self.weight_max.astype(np.float64))
        b = np.abs(self.weight_min.astype(np.float64))
        top = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(top > 0, np.abs(a - b) / top, 0.0)

    def __len__(self) -> int:
        return self.weight_max.shape[0]


def group_extrema(w: np.ndarray, spec: GroupSpec) -> GroupStats:
    rows, cols = w.shape
    gpr = spec.groups_per_row(cols)
    mx = np.empty((rows, gpr), dtype=np.float32)
    mn = np.empty((rows, gpr), dtype=np.float32)
    for g, (a, b) in enumerate(spec.bounds(cols)):
        mx[:, g] = w[:, a:b].max(axis=1)
        mn[:, g] = w[:, a:b].min(axis=1)
    return GroupStats(mx.reshape(-1), mn.reshape(-1))


def asymmetry_report(w, spec: GroupSpec | int = 128, threshold: float = 0.2):
    """``(fraction of groups with asymmetry > threshold, GroupStats)``."""
    w = as_float_tensor(w)
    stats = group_extrema(w, _as_spec(spec))
    fraction = float(np.mean(stats.asymmetry > threshold))
    return fraction, stats


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def max_abs_err(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def group_mse(w, w_hat, spec: GroupSpec | int) -> np.ndarray:
    """MSE of every group, row-major group order."""
    w, w_hat = _pair(w, w_hat)
    spec = _as_spec(spec)
    sq = (w - w_hat) ** 2
    cols = [sq[:, a:b].mean(axis=1) for a, b in spec.bounds(w.shape[1])]
    return np.stack(cols, axis=1).reshape(-1)


@dataclass(frozen=True)
class ModeResult:
    format: FormatId
    mode: QuantMode
    group_size: int
    mse: float
    max_abs_err: float
    mean_group_mse: float


def compare_modes(w, fmt: FormatId | str, modes: Sequence, spec: GroupSpec | int) -> list[ModeResult]:
    fmt = parse_format(fmt)
    spec = _as_spec(spec)
    modes = [parse_mode(m) for m in modes]
    cb = codebook_for(fmt)
    for m in modes:
        check_compatible(cb, m)
    w = as_float_tensor(w)
    out = []
    for m in modes:
        w_hat = dequantize_tensor(quantize_tensor(w, fmt, m, spec))
        out.append(
            ModeResult(
                format=fmt,
                mode=m,
                group_size=spec.group_size,
                mse=mse(w, w_hat),
                max_abs_err=max_abs_err(w, w_hat),
                mean_group_mse=float(group_mse(w, w_hat, spec).mean()),
            )
        )
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def write_csv(sink, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def mode_results_csv(results: Sequence[ModeResult]) -> str:
    buf = io.StringIO()
    write_csv(
        buf,
        ["format", "mode", "group_size", "mse", "max_abs_err", "mean_group_mse"],
        (
            [r.format.name.lower(), mode_label(r.mode), r.group_size, r.mse, r.max_abs_err, r.mean_group_mse]
            for r in results
        ),
    )
    return buf.getvalue()


def group_stats_csv(stats: GroupStats) -> str:
    buf = io.StringIO()
    write_csv(
        buf,
        ["group", "weight_max", "weight_min", "asymmetry"],
        (
            [i, float(mx), float(mn), float(a)]
            for i, (mx, mn, a) in enumerate(zip(stats.weight_max, stats.weight_min, stats.asymmetry))
        ),
    )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# dequantize + matmul
# ---------------------------------------------------------------------------


def dequant_matmul(q: QuantizedTensor, x, use_lut: bool = True) -> np.ndarray:
    """``dequantize(q) @ x`` in float32 with k-ascending accumulation.

    With ``use_lut`` the packed codes are decoded inside the matmul through a
    per-group table of dequantized values; otherwise the weight is dequantized
    arithmetically first. Both paths give bit-identical results.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != q.shape[1]:
        raise ValueError(f"inner dimension mismatch: weight {q.shape}, input {x.shape}")
    if not use_lut:
        return kernels.ordered_matmul(dequantize_tensor(q), x)
    cb = q.codebook
    if len(cb) < 1 << cb.bit_width:
        # Formats with unused code points need an explicit range check.
        _validated_codes(q)
    spec = q.spec
    return kernels.lut_matmul(
        q.packed,
        cb.bit_width,
        q.shape[1],
        group_lut(q),
        spec.groups_per_row(q.shape[1]),
        spec.effective(q.shape[1]),
        x,
    )
