import struct

import numpy as np
import pytest

from codegemm import (
    BadMagicError,
    IntegrityError,
    Matrix,
    QuantConfig,
    TruncatedFileError,
    UnsupportedVersionError,
    bit_breakdown,
    deserialize,
    payload_bits,
    quantize_layer,
    random_layer,
    serialize,
)

_HEADER_SIZE = struct.calcsize("<4sIQQHHBqQ")


def test_roundtrip_random_layer(tmp_path):
    layer = random_layer(9, 48, QuantConfig(v=4, m=3, b=5, g=16, seed=2), seed=11)
    path = tmp_path / "layer.cgmm"
    serialize(layer, path)
    assert deserialize(path).bitwise_equal(layer)


def test_roundtrip_fitted_layer(tmp_path):
    rng = np.random.default_rng(4)
    w = Matrix.from_array(rng.standard_normal((8, 32)))
    layer = quantize_layer(w, QuantConfig(v=4, m=2, b=3, g=8, seed=6, kmeans_iters=7))
    path = tmp_path / "layer.cgmm"
    serialize(layer, path)
    back = deserialize(path)
    # kmeans_iters is a fitting knob, not layer content; everything stored
    # round-trips bit-exactly.
    assert back.bitwise_equal(layer)
    assert back.config.kmeans_iters == 25


def test_any_byte_is_a_valid_b8_code(tmp_path):
    layer = random_layer(2, 8, QuantConfig(v=4, m=1, b=8, seed=1), seed=1)
    path = tmp_path / "layer.cgmm"
    serialize(layer, path)
    raw = bytearray(path.read_bytes())
    raw[-1] = 0xFF  # last code byte
    path.write_bytes(bytes(raw))
    loaded = deserialize(path)
    assert loaded.planes[0].codes[-1, -1] == 0xFF


def test_corrupt_zero_scale_rejected(tmp_path):
    layer = random_layer(4, 16, QuantConfig(v=4, m=1, b=2, g=8, seed=0), seed=3)
    path = tmp_path / "layer.cgmm"
    serialize(layer, path)
    raw = bytearray(path.read_bytes())
    raw[_HEADER_SIZE : _HEADER_SIZE + 2] = b"\x00\x00"  # first scale := +0.0
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        deserialize(path)


def test_header_errors(tmp_path):
    layer = random_layer(4, 16, QuantConfig(v=4, m=1, b=2, g=8, seed=0), seed=3)
    good_path = tmp_path / "good.cgmm"
    serialize(layer, good_path)
    good = good_path.read_bytes()

    p = tmp_path / "magic.cgmm"
    p.write_bytes(b"NOPE" + good[4:])
    with pytest.raises(BadMagicError):
        deserialize(p)

    p = tmp_path / "version.cgmm"
    p.write_bytes(good[:4] + struct.pack("<I", 9) + good[8:])
    with pytest.raises(UnsupportedVersionError):
        deserialize(p)

    for cut in (2, _HEADER_SIZE - 1, _HEADER_SIZE + 3, len(good) - 1):
        p = tmp_path / f"cut{cut}.cgmm"
        p.write_bytes(good[:cut])
        with pytest.raises(TruncatedFileError):
            deserialize(p)

    p = tmp_path / "trailing.cgmm"
    p.write_bytes(good + b"\x00")
    with pytest.raises(IntegrityError):
        deserialize(p)

    # header with g < v is an invariant violation, not a crash
    bad_header = struct.pack("<4sIQQHHBqQ", b"CGMM", 1, 4, 16, 8, 1, 2, 4, 0)
    p = tmp_path / "badcfg.cgmm"
    p.write_bytes(bad_header + good[_HEADER_SIZE:])
    with pytest.raises(IntegrityError):
        deserialize(p)


def test_payload_bits_match_accounting(tmp_path):
    rng = np.random.default_rng(50)
    checked = 0
    while checked < 50:
        v = int(rng.choice([1, 2, 4, 8, 16]))
        m = int(rng.integers(1, 4))
        b = int(rng.integers(1, 17))
        g = int(rng.choice([-1, v, 2 * v, 4 * v]))
        base = v if g == -1 else g
        cols = base * int(rng.integers(1, 9))
        rows = int(rng.integers(1, 33))
        cfg = QuantConfig(v=v, m=m, b=b, g=g, seed=checked)
        layer = random_layer(rows, cols, cfg, seed=checked)
        expected = bit_breakdown(cfg, rows, cols).total_bits
        assert payload_bits(layer) == expected

        path = tmp_path / f"l{checked}.cgmm"
        serialize(layer, path)
        # On-disk sections are the payload rounded up to whole bytes per
        # code plane, plus the fixed header.
        scale_bytes = 2 * layer.scales.scales.size
        book_bytes = sum(2 * bk.entries.size for bk in layer.books)
        plane_bytes = sum((b * pl.codes.size + 7) // 8 for pl in layer.planes)
        assert path.stat().st_size == _HEADER_SIZE + scale_bytes + book_bytes + plane_bytes
        assert deserialize(path).bitwise_equal(layer)
        checked += 1
