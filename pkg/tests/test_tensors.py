import math

import numpy as np
import pytest

from codegemm import (
    BadMagicError,
    DimOverflowError,
    FormatError,
    Matrix,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
    f16_decode,
    f16_encode,
    load_tensor,
    save_tensor,
)
from codegemm.tensors import QUIET_NAN_BITS, decode_f16_array, encode_f16_array


def ref_decode(bits: int) -> float:
    # Independent of the library path: straight from the binary16 field layout.
    sign = -1.0 if bits >> 15 else 1.0
    exp = (bits >> 10) & 0x1F
    mant = bits & 0x3FF
    if exp == 0:
        return sign * mant * 2.0**-24
    if exp == 31:
        return sign * math.inf if mant == 0 else math.nan
    return sign * (1.0 + mant / 1024.0) * 2.0 ** (exp - 15)


def nearest_f16_brute(x: float) -> int:
    # Enumerate every finite pattern; nearest value, ties to even mantissa.
    best = None
    for bits in range(1 << 16):
        if (bits & 0x7C00) == 0x7C00:
            continue
        val = ref_decode(bits)
        dist = abs(val - x)
        if best is None or dist < best[0] or (dist == best[0] and bits % 2 == 0):
            best = (dist, bits, val)
    return best[1]


def test_known_encodings():
    assert f16_encode(1.0) == 0x3C00
    assert f16_encode(0.0) == 0x0000
    assert f16_decode(0x3C00) == 1.0
    assert f16_decode(0xC000) == -2.0
    assert f16_decode(0x0001) == 2.0**-24


def test_encode_2049_rounds_to_2048():
    expected = nearest_f16_brute(2049.0)
    assert f16_decode(expected) == 2048.0
    assert f16_encode(2049.0) == expected == 0x6800


@pytest.mark.parametrize("x", [0.1, -1.5, 3.14159, 1e-5, 60000.0, -2.0**-20])
def test_encode_matches_brute_force_nearest(x):
    got = f16_encode(x)
    want = nearest_f16_brute(x)
    # Compare decoded values (0x0000 vs 0x8000 both decode to 0.0).
    assert f16_decode(got) == ref_decode(want)


def test_exhaustive_finite_roundtrip():
    all16 = np.arange(1 << 16, dtype=np.uint16)
    finite = all16[(all16 & 0x7C00) != 0x7C00]
    assert finite.size == 63488
    values = decode_f16_array(finite)
    assert np.array_equal(encode_f16_array(values), finite)
    # spot-check against the independent formula
    for bits in (0x0001, 0x03FF, 0x0400, 0x3C00, 0x7BFF, 0x8001, 0xFBFF):
        assert f16_decode(bits) == ref_decode(bits)


def test_nan_and_overflow_handling():
    assert f16_encode(math.nan) == QUIET_NAN_BITS
    assert f16_encode(math.inf) == 0x7C00
    assert f16_encode(-math.inf) == 0xFC00
    assert f16_encode(1e9) == 0x7C00  # saturates to +inf
    assert f16_encode(-1e9) == 0xFC00


def test_encode_monotone_on_finite_values():
    rng = np.random.default_rng(0)
    xs = np.sort(np.concatenate([
        rng.standard_normal(500) * 100.0,
        rng.uniform(-6e4, 6e4, 500),  # stays inside the finite binary16 range
        np.array([0.0, -0.0, 2.0**-25, -(2.0**-25)]),
    ]))
    decoded = decode_f16_array(encode_f16_array(xs))
    assert np.all(np.diff(decoded) >= 0)


def test_matrix_validation():
    with pytest.raises(ShapeError):
        Matrix(np.zeros(4, dtype=np.float16))
    with pytest.raises(ShapeError):
        Matrix(np.zeros((0, 3), dtype=np.float16))
    with pytest.raises(ShapeError):
        Matrix(np.zeros((2, 2), dtype=np.float32))
    m = Matrix.from_array([[1.0, 2.0], [3.0, 4.0]])
    assert (m.rows, m.cols) == (2, 2)
    with pytest.raises(ValueError):
        m.data[0, 0] = 1.0  # read-only buffer


def test_matrix_from_array_canonicalizes_nan():
    m = Matrix.from_array([[math.nan, 1.0]])
    assert int(m.bits[0, 0]) == QUIET_NAN_BITS


def test_file_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    for trial in range(25):
        rows = int(rng.integers(1, 40))
        cols = int(rng.integers(1, 40))
        scale = float(rng.choice([1e-6, 1.0, 1e4]))
        m = Matrix.from_array(rng.standard_normal((rows, cols)) * scale)
        path = tmp_path / f"t{trial}.cgt"
        save_tensor(m, path)
        back = load_tensor(path)
        assert back.bit_equal(m)


def test_file_roundtrip_3x5(tmp_path):
    m = Matrix.from_array(np.random.default_rng(1).standard_normal((3, 5)))
    path = tmp_path / "m.cgt"
    save_tensor(m, path)
    assert load_tensor(path).bit_equal(m)


def _valid_file_bytes() -> bytes:
    import struct

    m = Matrix.from_array(np.arange(6, dtype=np.float64).reshape(2, 3))
    return (
        struct.pack("<4sII", b"CGT1", 1, 2)
        + struct.pack("<QQ", 2, 3)
        + m.data.tobytes()
    )


def test_load_errors(tmp_path):
    import struct

    good = _valid_file_bytes()

    p = tmp_path / "magic.cgt"
    p.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(BadMagicError):
        load_tensor(p)

    p = tmp_path / "version.cgt"
    p.write_bytes(good[:4] + b"\x02\x00\x00\x00" + good[8:])
    with pytest.raises(UnsupportedVersionError):
        load_tensor(p)

    p = tmp_path / "rank.cgt"
    p.write_bytes(good[:8] + b"\x03\x00\x00\x00" + good[12:])
    with pytest.raises(FormatError):
        load_tensor(p)

    p = tmp_path / "short.cgt"
    p.write_bytes(good[:-2])  # payload 2 bytes short
    with pytest.raises(TruncatedFileError):
        load_tensor(p)

    p = tmp_path / "tiny.cgt"
    p.write_bytes(good[:3])
    with pytest.raises(TruncatedFileError):
        load_tensor(p)

    p = tmp_path / "trailing.cgt"
    p.write_bytes(good + b"\x00")
    with pytest.raises(FormatError):
        load_tensor(p)

    p = tmp_path / "overflow.cgt"
    p.write_bytes(
        struct.pack("<4sII", b"CGT1", 1, 2) + struct.pack("<QQ", 2**62, 4)
    )
    with pytest.raises(DimOverflowError):
        load_tensor(p)

    p = tmp_path / "zerodim.cgt"
    p.write_bytes(struct.pack("<4sII", b"CGT1", 1, 2) + struct.pack("<QQ", 0, 4))
    with pytest.raises(FormatError):
        load_tensor(p)
