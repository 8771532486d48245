import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymq.formats import (
    CodebookKind,
    FormatId,
    code_value,
    codebook_for,
    nearest_code,
    nearest_codes,
)


def brute_nearest(x: float, values) -> int:
    """Linear scan; ties go to the smaller magnitude."""
    best = None
    for i, v in enumerate(values):
        d = abs(x - float(v))
        key = (d, abs(float(v)))
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


@pytest.mark.parametrize(
    "fmt,size", [("INT4", 16), ("NF4", 16), ("FP4", 15), ("INT3", 8), ("NF3", 8), ("FP3", 7)]
)
def test_cardinality(fmt, size):
    assert len(codebook_for(fmt)) == size


def test_fp4_and_fp3_values():
    assert codebook_for("fp4").values.tolist() == [
        -6, -4, -3, -2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2, 3, 4, 6
    ]
    assert codebook_for("fp3").values.tolist() == [-4, -2, -1, 0, 1, 2, 4]


def test_nf4_contains_published_value():
    vals = codebook_for(FormatId.NF4).values
    assert vals[0] == -1.0 and vals[-1] == 1.0
    assert np.float32(0.7229568362236023) in vals


@pytest.mark.parametrize("fmt", list(FormatId))
def test_codebook_invariants(fmt):
    cb = codebook_for(fmt)
    v = cb.values
    assert v.dtype == np.float32
    assert np.all(np.diff(v) > 0)
    assert 0.0 in v
    assert np.all(np.isfinite(v))
    if cb.kind is CodebookKind.INTEGER:
        assert cb.range == 2**cb.bit_width - 1
        assert v.min() == -(v.max() + 1)
    else:
        assert cb.range == 2 * v.max()
        assert v.max() == -v.min()


def test_half_range_per_format():
    assert codebook_for("fp4").half_range == 6
    assert codebook_for("fp3").half_range == 4
    assert codebook_for("nf4").half_range == 1
    assert codebook_for("nf3").half_range == 1


def test_codebooks_are_read_only():
    with pytest.raises(ValueError):
        codebook_for("nf4").values[0] = 0.0


@pytest.mark.parametrize("fmt", list(FormatId))
def test_zero_maps_to_zero(fmt):
    cb = codebook_for(fmt)
    assert code_value(nearest_code(0.0, cb), cb) == 0.0


def test_nearest_code_examples():
    nf4 = codebook_for("nf4")
    assert nearest_code(0.5, nf4) == brute_nearest(0.5, nf4.values) == 12
    assert code_value(12, nf4) == np.float32(0.44070982933044434)
    fp4 = codebook_for("fp4")
    assert nearest_code(5.1, fp4) == brute_nearest(5.1, fp4.values) == 14
    assert code_value(14, fp4) == 6.0


def test_ties_go_to_smaller_magnitude():
    fp4 = codebook_for("fp4")
    assert code_value(nearest_code(5.0, fp4), fp4) == 4.0
    assert code_value(nearest_code(-5.0, fp4), fp4) == -4.0
    assert code_value(nearest_code(0.25, fp4), fp4) == 0.0
    int4 = codebook_for("int4")
    assert code_value(nearest_code(-7.5, int4), int4) == -7.0


def test_code_value_examples():
    assert code_value(15, codebook_for("nf4")) == 1.0
    assert code_value(0, codebook_for("fp4")) == -6.0
    with pytest.raises(IndexError):
        code_value(15, codebook_for("fp4"))
    with pytest.raises(IndexError):
        code_value(-1, codebook_for("nf3"))


@pytest.mark.parametrize("fmt", list(FormatId))
def test_round_trip_on_representable_values(fmt):
    cb = codebook_for(fmt)
    for i, v in enumerate(cb.values):
        assert nearest_code(float(v), cb) == i
        assert code_value(nearest_code(float(v), cb), cb) == v


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        nearest_code(bad, codebook_for("nf4"))
    with pytest.raises(ValueError):
        nearest_codes(np.array([0.0, bad]), codebook_for("fp4"))


@settings(max_examples=300, deadline=None)
@given(
    x=st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6),
    fmt=st.sampled_from(list(FormatId)),
)
def test_nearest_is_optimal_and_idempotent(x, fmt):
    cb = codebook_for(fmt)
    i = nearest_code(x, cb)
    assert i == brute_nearest(x, cb.values)
    best = abs(code_value(i, cb) - x)
    assert all(best <= abs(float(v) - x) for v in cb.values)
    assert nearest_code(code_value(i, cb), cb) == i


def test_vectorized_matches_scalar(rng):
    cb = codebook_for("nf3")
    x = rng.uniform(-2, 2, size=500)
    assert nearest_codes(x, cb).tolist() == [nearest_code(v, cb) for v in x]
