"""Single-file container for a QuantizedLayer, bit-exact round trip.

Layout ("CGMM", all integers little-endian, no alignment padding):

    offset  size  field
    0       4     magic  b"CGMM"
    4       4     u32 version, currently 1
    8       8     u64 rows (M)
    16      8     u64 cols (K)
    24      2     u16 v
    26      2     u16 m
    28      1     u8  b
    29      8     i64 g  (-1 means one scale per row)
    37      8     u64 seed
    45      ...   scales: rows * (cols / g_eff) binary16, row-major
            ...   codebooks: m blocks of 2**b * v binary16 each
            ...   code planes: m blocks, each rows * (cols / v) codes packed
                  b bits per code, least-significant bit first, each block
                  padded to a whole byte

The header carries the full quantization config except kmeans_iters, which
is a fitting knob rather than layer content; loaded layers get the default.
Per-plane byte padding is a format artifact: the logical payload is exactly
payload_bits(layer) bits.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    IntegrityError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .quantizer import (
    Codebook,
    CodePlane,
    QuantConfig,
    QuantizedLayer,
    ScalePlane,
    pack_codes,
    unpack_codes,
)

LAYER_MAGIC = b"CGMM"
LAYER_VERSION = 1

_HEADER = struct.Struct("<4sIQQHHBqQ")
_F16 = np.dtype("<f2")


def payload_bits(q: QuantizedLayer) -> int:
    """Logical payload size in bits: scales + codebooks + codes.

    Counts 16 bits per stored binary16 element and b bits per code, from
    the actual array shapes; equals accounting.bit_breakdown(...).total_bits.
    """
    cfg = q.config
    bits = 16 * q.scales.scales.size
    bits += sum(16 * book.entries.size for book in q.books)
    bits += sum(cfg.b * plane.codes.size for plane in q.planes)
    return bits


def serialize(q: QuantizedLayer, path) -> None:
    """Write a layer to its container file."""
    cfg = q.config
    header = _HEADER.pack(
        LAYER_MAGIC, LAYER_VERSION, q.rows, q.cols, cfg.v, cfg.m, cfg.b, cfg.g, cfg.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.scales.scales.tobytes())
        for book in q.books:
            fh.write(book.entries.tobytes())
        for plane in q.planes:
            fh.write(pack_codes(plane, cfg.b))


def _take(raw: bytes, offset: int, size: int, path, what: str) -> bytes:
    if len(raw) < offset + size:
        raise TruncatedFileError(
            f"{os.fspath(path)}: truncated in {what} "
            f"(need {offset + size} bytes, have {len(raw)})"
        )
    return raw[offset : offset + size]


def deserialize(path) -> QuantizedLayer:
    """Read a layer container.

    Raises:
        BadMagicError: wrong magic bytes.
        UnsupportedVersionError: version field is not 1.
        TruncatedFileError: any section ends early.
        IntegrityError: header fields or payload violate layer invariants
            (bad hyperparameters, non-positive or non-finite scale,
            non-finite codebook entry, code out of range, trailing bytes).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{os.fspath(path)}: too short for magic")
    if raw[:4] != LAYER_MAGIC:
        raise BadMagicError(f"{os.fspath(path)}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{os.fspath(path)}: truncated header")
    _, version, rows, cols, v, m, b, g, seed = _HEADER.unpack_from(raw, 0)
    if version != LAYER_VERSION:
        raise UnsupportedVersionError(f"{os.fspath(path)}: version {version}")
    try:
        cfg = QuantConfig(v=v, m=m, b=b, g=g, seed=seed)
        cfg.validate_shape(rows, cols)
    except ConfigError as exc:
        raise IntegrityError(f"{os.fspath(path)}: bad header: {exc}") from exc

    g_eff = cfg.group_size_for(cols)
    groups = cols // g_eff
    segs = cols // v
    k = 2**b
    offset = _HEADER.size

    section = _take(raw, offset, rows * groups * 2, path, "scales")
    offset += len(section)
    scales_arr = np.frombuffer(section, dtype=_F16).reshape(rows, groups).copy()
    try:
        scales = ScalePlane(scales_arr)
    except IntegrityError as exc:
        raise IntegrityError(f"{os.fspath(path)}: {exc}") from exc

    books = []
    for t in range(m):
        section = _take(raw, offset, k * v * 2, path, f"codebook {t}")
        offset += len(section)
        entries = np.frombuffer(section, dtype=_F16).reshape(k, v).copy()
        try:
            books.append(Codebook(entries))
        except IntegrityError as exc:
            raise IntegrityError(f"{os.fspath(path)}: codebook {t}: {exc}") from exc

    plane_bytes = (rows * segs * b + 7) // 8
    planes = []
    for t in range(m):
        section = _take(raw, offset, plane_bytes, path, f"code plane {t}")
        offset += len(section)
        plane = unpack_codes(section, rows, segs, b)
        if plane.codes.max(initial=0) >= k:
            raise IntegrityError(f"{os.fspath(path)}: code out of range in plane {t}")
        planes.append(plane)

    if offset != len(raw):
        raise IntegrityError(f"{os.fspath(path)}: {len(raw) - offset} trailing bytes")

    return QuantizedLayer(rows, cols, cfg, scales, tuple(planes), tuple(books))
