import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymq import storage
from asymq.formats import FormatId
from asymq.quant import QuantMode, dequantize_tensor, quantize_tensor, valid_pairs
from asymq.storage import ContainerError, PackedCodes, pack, unpack


def reference_pack(codes, bits):
    """Bit-by-bit LSB-first packing."""
    out = bytearray((len(codes) * bits + 7) // 8)
    for i, c in enumerate(codes):
        for b in range(bits):
            if c >> b & 1:
                pos = i * bits + b
                out[pos // 8] |= 1 << (pos % 8)
    return bytes(out)


def test_four_bit_nibble_order():
    assert pack([3, 10], 4).data == bytes([0xA3])


def test_three_bit_stream():
    p = pack([7] * 8, 3)
    assert p.data == b"\xff\xff\xff"
    assert unpack(p) == [7] * 8


def test_all_four_bit_pairs():
    for a in range(16):
        for b in range(16):
            p = pack([a, b], 4)
            assert p.data == bytes([a | b << 4])
            assert unpack(p) == [a, b]


def test_odd_count_pads_high_nibble():
    p = pack([1, 2, 3], 4)
    assert p.data == bytes([0x21, 0x03]) and p.count == 3
    assert unpack(p) == [1, 2, 3]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([3, 4]).flatmap(
    lambda b: st.tuples(st.just(b), st.lists(st.integers(0, (1 << b) - 1), max_size=100))))
def test_pack_round_trip(case):
    bits, codes = case
    p = pack(codes, bits)
    assert p.data == reference_pack(codes, bits)
    assert len(p.data) == (len(codes) * bits + 7) // 8
    assert unpack(p) == codes


def test_pack_errors():
    with pytest.raises(ValueError):
        pack([16], 4)
    with pytest.raises(ValueError):
        pack([8], 3)
    with pytest.raises(ValueError):
        pack([1], 5)
    with pytest.raises(ValueError):
        unpack(PackedCodes(b"\x00", 4, 3))


def test_float_round_trip(tmp_path, rng):
    t = rng.standard_normal((5, 7)).astype(np.float32)
    path = tmp_path / "w.aft"
    storage.save_float(t, path)
    raw = path.read_bytes()
    assert raw[:4] == b"AFT1" and len(raw) == storage.FLOAT_HEADER_SIZE + 35 * 4
    assert struct.unpack_from("<4sBBQQ", raw) == (b"AFT1", 1, 2, 5, 7)
    back = storage.load_float(path)
    assert np.array_equal(back.view(np.uint32), t.view(np.uint32))


def test_file_size_for_nf4_g128(tmp_path, rng):
    w = rng.standard_normal((4, 256)).astype(np.float32)
    q = quantize_tensor(w, "nf4", "fp-asym", 128)
    path = tmp_path / "q.afq"
    storage.save_quantized(q, path)
    assert path.stat().st_size == 604 == 28 + 512 + 64
    assert storage.quantized_size(4, 256, FormatId.NF4, QuantMode.FP_ASYM, 128) == 604


@pytest.mark.parametrize("fmt,mode", valid_pairs())
@pytest.mark.parametrize("gs", [-1, 16, 24])
def test_quantized_parity(fmt, mode, gs, rng):
    w = rng.standard_normal((3, 50)).astype(np.float32)
    q = quantize_tensor(w, fmt, mode, gs)
    buf = io.BytesIO()
    storage.save_quantized(q, buf)
    back = storage.load_quantized(io.BytesIO(buf.getvalue()))
    assert back == q
    assert np.array_equal(back.codes(), q.codes())
    assert np.array_equal(dequantize_tensor(back).view(np.uint32), dequantize_tensor(q).view(np.uint32))
    assert storage.quantized_to_bytes(back) == buf.getvalue()


def _q_bytes(rng):
    return storage.quantized_to_bytes(
        quantize_tensor(rng.standard_normal((2, 16)).astype(np.float32), "nf3", "fp-sym", 8))


def test_bad_magic_and_version(rng):
    raw = _q_bytes(rng)
    with pytest.raises(ContainerError, match="magic"):
        storage.quantized_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ContainerError, match="version"):
        storage.quantized_from_bytes(raw[:4] + b"\x02" + raw[5:])
    f = storage.float_to_bytes(np.zeros((1, 1)))
    with pytest.raises(ContainerError, match="magic"):
        storage.float_from_bytes(raw)
    with pytest.raises(ContainerError, match="magic"):
        storage.quantized_from_bytes(f)


def test_truncation_and_trailing_bytes(rng):
    raw = _q_bytes(rng)
    for cut in (3, storage.QUANT_HEADER_SIZE - 1, storage.QUANT_HEADER_SIZE + 5, len(raw) - 1):
        with pytest.raises(ContainerError):
            storage.quantized_from_bytes(raw[:cut])
    with pytest.raises(ContainerError, match="trailing"):
        storage.quantized_from_bytes(raw + b"\x00")
    f = storage.float_to_bytes(np.ones((2, 2)))
    with pytest.raises(ContainerError):
        storage.float_from_bytes(f[:-1])
    with pytest.raises(ContainerError):
        storage.float_from_bytes(f + b"\x00")


def test_invalid_header_fields(rng):
    raw = bytearray(_q_bytes(rng))
    bad_fmt = bytes(raw[:5]) + b"\x09" + bytes(raw[6:])
    with pytest.raises(ContainerError):
        storage.quantized_from_bytes(bad_fmt)
    bad_ppg = bytes(raw[:27]) + b"\x02" + bytes(raw[28:])
    with pytest.raises(ContainerError, match="params_per_group"):
        storage.quantized_from_bytes(bad_ppg)
    bad_gs = bytes(raw[:7]) + struct.pack("<i", 0) + bytes(raw[11:])
    with pytest.raises(ContainerError):
        storage.quantized_from_bytes(bad_gs)


def test_nan_rejected(rng):
    f = bytearray(storage.float_to_bytes(np.ones((1, 2))))
    f[-4:] = struct.pack("<f", float("nan"))
    with pytest.raises(ContainerError, match="NaN"):
        storage.float_from_bytes(bytes(f))
    raw = bytearray(_q_bytes(rng))
    off = storage.QUANT_HEADER_SIZE
    raw[off:off + 4] = struct.pack("<f", float("inf"))
    with pytest.raises(ContainerError):
        storage.quantized_from_bytes(bytes(raw))


def test_shape_errors():
    with pytest.raises(ValueError):
        storage.float_to_bytes(np.zeros(3))
    with pytest.raises(ValueError):
        storage.float_to_bytes(np.zeros((1, 2, 3)))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    storage.save_float(np.ones((1, 1)), tmp_path / "a.aft")
    storage.save_float(np.zeros((1, 1)), tmp_path / "a.aft")
    assert [p.name for p in tmp_path.iterdir()] == ["a.aft"]
    assert storage.load_float(tmp_path / "a.aft")[0, 0] == 0.0


def test_sniff(tmp_path):
    storage.save_float(np.ones((1, 1)), tmp_path / "a.aft")
    assert storage.sniff(tmp_path / "a.aft") == storage.FLOAT_MAGIC
    assert storage.sniff(io.BytesIO(b"AFQ1rest")) == storage.QUANT_MAGIC
