"""``asymq`` command line.

Exit status: 0 on success, 2 on usage errors (including invalid
format/mode/group-size combinations), 1 on I/O or validation failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import storage
from .eval import (
    Distribution,
    SyntheticSpec,
    asymmetry_report,
    compare_modes,
    generate,
    group_stats_csv,
    mode_results_csv,
)
from .formats import FormatId, codebook_for, parse_format
from .plugins import DEFAULT_AWQ_GRID, QuantizerHandle, awq_search, gptq_quantize
from .quant import (
    PARAM_NAMES,
    GroupSpec,
    QuantMode,
    check_compatible,
    dequantize_tensor,
    mode_label,
    parse_mode,
    valid_pairs,
)

FORMAT_CHOICES = [f.name.lower() for f in FormatId]
MODE_CHOICES = [mode_label(m) for m in QuantMode]


class UsageError(Exception):
    pass


def _group_size(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid group size {text!r}") from None
    if value != -1 and value <= 0:
        raise argparse.ArgumentTypeError("group size must be -1 or a positive integer")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _add_quantizer_args(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    p.add_argument("--format", required=True, choices=FORMAT_CHOICES)
    if with_mode:
        p.add_argument("--mode", required=True, choices=MODE_CHOICES)
    p.add_argument("--group-size", type=_group_size, default=128)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymq", description="Low-bit weight quantization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize an AFT1 float tensor into AFQ1")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_quantizer_args(p)

    p = sub.add_parser("dequantize", help="expand an AFQ1 tensor back to AFT1")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="compare quantization modes on one tensor")
    p.add_argument("--in", dest="inp", required=True)
    _add_quantizer_args(p, with_mode=False)
    p.add_argument("--modes", help="comma-separated modes (default: all valid for the format)")
    p.add_argument("--csv", help="write the metric table here")

    p = sub.add_parser("stats", help="report per-group max/min asymmetry")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--group-size", type=_group_size, default=128)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--csv", help="write per-group max/min/asymmetry here")

    for name, help_text in (("gptq", "second-order error-compensated quantization"),
                            ("awq", "activation-aware scale search")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="inp", required=True)
        p.add_argument("--calib", required=True, help="AFT1 activations, (in_features, n_samples)")
        p.add_argument("--out", required=True)
        _add_quantizer_args(p)
        if name == "gptq":
            p.add_argument("--damping", type=float, default=0.01)
        else:
            p.add_argument("--grid", type=_float_list, default=list(DEFAULT_AWQ_GRID))
            p.add_argument("--scales-out", help="write the chosen scales as a 1 x in_features AFT1")

    p = sub.add_parser("gen", help="write a synthetic weight tensor")
    p.add_argument("--out", required=True)
    p.add_argument("--dist", choices=[d.value for d in Distribution], default="gaussian")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--outlier-rate", type=float, default=0.01)
    p.add_argument("--std", type=float, default=1.0)

    p = sub.add_parser("inspect", help="describe an AFQ1 or AFT1 file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--groups", type=int, default=4, help="number of groups to show")
    return parser


def _handle(args) -> QuantizerHandle:
    try:
        return QuantizerHandle(parse_format(args.format), parse_mode(args.mode), GroupSpec(args.group_size))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _summary(q, path) -> str:
    rows, cols = q.shape
    return (
        f"{path}: {rows}x{cols} {q.format.name.lower()} {mode_label(q.mode)} "
        f"g{q.group_size} groups={q.n_groups} params_per_group={q.params_per_group} "
        f"bytes={len(storage.quantized_to_bytes(q))}"
    )


def cmd_quantize(args) -> int:
    h = _handle(args)
    w = storage.load_float(args.inp)
    q = h.quantize(w)
    storage.save_quantized(q, args.out)
    print(_summary(q, args.out))
    return 0


def cmd_dequantize(args) -> int:
    q = storage.load_quantized(args.inp)
    w = dequantize_tensor(q)
    storage.save_float(w, args.out)
    print(f"{args.out}: {w.shape[0]}x{w.shape[1]} float32")
    return 0


def cmd_eval(args) -> int:
    fmt = parse_format(args.format)
    cb = codebook_for(fmt)
    if args.modes:
        try:
            modes = [parse_mode(m) for m in args.modes.split(",") if m.strip()]
            for m in modes:
                check_compatible(cb, m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        modes = [m for f, m in valid_pairs() if f == fmt]
    w = storage.load_float(args.inp)
    results = compare_modes(w, fmt, modes, args.group_size)
    for r in results:
        print(f"{mode_label(r.mode):>13}  mse={r.mse:.9g}  max_abs_err={r.max_abs_err:.9g}")
    if args.csv:
        storage.write_atomic(Path(args.csv), mode_results_csv(results).encode())
    return 0


def cmd_stats(args) -> int:
    w = storage.load_float(args.inp)
    fraction, stats = asymmetry_report(w, args.group_size, args.threshold)
    print(f"groups={len(stats)} threshold={args.threshold:g} fraction_asymmetric={fraction:.9g}")
    if args.csv:
        storage.write_atomic(Path(args.csv), group_stats_csv(stats).encode())
    return 0


def cmd_gptq(args) -> int:
    h = _handle(args)
    if args.damping <= 0:
        raise UsageError("--damping must be positive")
    w = storage.load_float(args.inp)
    x = storage.load_float(args.calib)
    q = gptq_quantize(w, x, h, damping=args.damping)
    storage.save_quantized(q, args.out)
    print(_summary(q, args.out))
    return 0


def cmd_awq(args) -> int:
    h = _handle(args)
    if not args.grid:
        raise UsageError("--grid is empty")
    w = storage.load_float(args.inp)
    x = storage.load_float(args.calib)
    res = awq_search(w, x, h, args.grid)
    storage.save_quantized(res.quantized, args.out)
    if args.scales_out:
        storage.save_float(res.scales[None, :], args.scales_out)
    print(_summary(res.quantized, args.out))
    print(f"alpha={res.alpha:g} error={res.errors[res.alpha]:.9g} baseline_error={res.errors.get(0.0, float('nan')):.9g}")
    return 0


def cmd_gen(args) -> int:
    try:
        spec = SyntheticSpec(
            distribution=args.dist,
            rows=args.rows,
            cols=args.cols,
            seed=args.seed,
            shift=args.shift,
            outlier_rate=args.outlier_rate,
            std=args.std,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    w = generate(spec)
    storage.save_float(w, args.out)
    print(f"{args.out}: {spec.rows}x{spec.cols} {spec.distribution.value} seed={spec.seed}")
    return 0


def cmd_inspect(args) -> int:
    magic = storage.sniff(args.inp)
    if magic == storage.FLOAT_MAGIC:
        w = storage.load_float(args.inp)
        print(f"AFT1 {w.shape[0]}x{w.shape[1]} float32 min={w.min():.9g} max={w.max():.9g}")
        return 0
    q = storage.load_quantized(args.inp)
    print("AFQ1 " + _summary(q, args.inp))
    print(f"bit_width={q.bit_width} packed_bytes={q.packed.size} codebook_size={len(q.codebook)}")
    names = ", ".join(PARAM_NAMES[q.mode])
    codes = q.codes()
    hist = np.bincount(codes.ravel(), minlength=len(q.codebook))
    print("code_histogram=" + " ".join(str(int(c)) for c in hist))
    for g in range(min(args.groups, q.n_groups)):
        vals = " ".join(f"{v:.9g}" for v in q.params[g])
        print(f"group {g}: {names} = {vals}")
    return 0


COMMANDS = {
    "quantize": cmd_quantize,
    "dequantize": cmd_dequantize,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "gptq": cmd_gptq,
    "awq": cmd_awq,
    "gen": cmd_gen,
    "inspect": cmd_inspect,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"asymq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"asymq {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
