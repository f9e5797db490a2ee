"""Dense row-major matrices stored as IEEE 754 binary16, plus a tiny tensor file format.

binary16 is a storage format only: every arithmetic consumer widens to
binary32 (or binary64) before multiplying or accumulating. Encoding uses
round-to-nearest-even; overflow saturates to +/-inf per IEEE 754; NaN
payloads are canonicalized to a single quiet NaN (0x7E00).

Tensor file layout ("CGT1", all integers little-endian):

    offset  size  field
    0       4     magic  b"CGT1"
    4       4     u32 version, currently 1
    8       4     u32 rank, must be 2
    12      16    2 x u64 dims (rows, cols)
    28      ...   rows*cols binary16 values, row-major, little-endian
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    BadMagicError,
    DimOverflowError,
    FormatError,
    ShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)

TENSOR_MAGIC = b"CGT1"
TENSOR_VERSION = 1
QUIET_NAN_BITS = 0x7E00

_HEADER = struct.Struct("<4sII")
_DIMS = struct.Struct("<QQ")
_F16LE = np.dtype("<f2")

# Largest payload byte count we accept from a header (fits in a signed 64-bit
# offset; anything above is a corrupt or hostile header).
_MAX_PAYLOAD_BYTES = 2**63 - 1


def encode_f16_array(values) -> np.ndarray:
    """Round an array to binary16 bit patterns (uint16), NaNs canonicalized."""
    arr = np.asarray(values, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        half = arr.astype(_F16LE)
    bits = half.view(np.uint16).copy()
    nan_mask = np.isnan(arr)
    if nan_mask.any():
        bits[nan_mask] = QUIET_NAN_BITS
    return bits


def decode_f16_array(bits) -> np.ndarray:
    """Widen binary16 bit patterns (uint16) to exact binary64 values."""
    arr = np.ascontiguousarray(bits, dtype=np.uint16)
    return arr.view(_F16LE).astype(np.float64)


def f16_encode(x: float) -> int:
    """Encode one real number as a binary16 bit pattern.

    Rounding is to-nearest-even; values beyond the binary16 range become
    +/-inf; any NaN becomes the canonical quiet NaN 0x7E00.
    """
    return int(encode_f16_array(np.float64(x))[()])


def f16_decode(bits: int) -> float:
    """Decode one binary16 bit pattern to its exact real value."""
    if not 0 <= bits <= 0xFFFF:
        raise ValueError(f"bit pattern out of range: {bits:#x}")
    return float(decode_f16_array(np.array([bits], dtype=np.uint16))[0])


class Matrix:
    """Immutable 2-D row-major array of binary16 values.

    Construct with a float16 ndarray, or use :meth:`from_array` to round
    arbitrary float data. The backing buffer is made read-only; share
    instances freely across workers.
    """

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray, copy: bool = True):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ShapeError(f"matrix must be 2-D, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"matrix dims must be >= 1, got {arr.shape}")
        if arr.dtype != _F16LE:
            raise ShapeError(f"matrix data must be little-endian float16, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        if copy:
            arr = arr.copy()
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_array(cls, values) -> "Matrix":
        """Round any 2-D float array to binary16 (NaNs canonicalized)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"matrix must be 2-D, got ndim={arr.ndim}")
        bits = encode_f16_array(arr)
        return cls(bits.view(_F16LE), copy=False)

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Read-only float16 array of shape (rows, cols)."""
        return self._data

    @property
    def bits(self) -> np.ndarray:
        """The same storage viewed as uint16 bit patterns."""
        return self._data.view(np.uint16)

    def widened(self, dtype=np.float32) -> np.ndarray:
        """Widened copy for arithmetic (binary16 -> binary32 is exact)."""
        return self._data.astype(dtype)

    def bit_equal(self, other: "Matrix") -> bool:
        return (
            self._data.shape == other._data.shape
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __repr__(self) -> str:
        return f"Matrix(rows={self.rows}, cols={self.cols})"


def save_tensor(m: Matrix, path) -> None:
    """Write a matrix in the CGT1 format (bit-exact round trip)."""
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, 2)
    dims = _DIMS.pack(m.rows, m.cols)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(m.data.tobytes())


def load_tensor(path) -> Matrix:
    """Read a CGT1 tensor file.

    Raises:
        BadMagicError: first four bytes are not b"CGT1".
        UnsupportedVersionError: version field is not 1.
        FormatError: rank is not 2, a dim is zero, or trailing bytes exist.
        DimOverflowError: dims imply a payload beyond 2**63 - 1 bytes.
        TruncatedFileError: file is shorter than the header promises.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{os.fspath(path)}: too short for magic")
    if raw[:4] != TENSOR_MAGIC:
        raise BadMagicError(f"{os.fspath(path)}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size + _DIMS.size:
        raise TruncatedFileError(f"{os.fspath(path)}: truncated header")
    _, version, rank = _HEADER.unpack_from(raw, 0)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"{os.fspath(path)}: version {version}")
    if rank != 2:
        raise FormatError(f"{os.fspath(path)}: rank {rank}, only rank 2 supported")
    rows, cols = _DIMS.unpack_from(raw, _HEADER.size)
    if rows < 1 or cols < 1:
        raise FormatError(f"{os.fspath(path)}: zero dimension in header")
    count = rows * cols
    if count > _MAX_PAYLOAD_BYTES // 2:
        raise DimOverflowError(f"{os.fspath(path)}: dims {rows}x{cols} overflow")
    offset = _HEADER.size + _DIMS.size
    expected = offset + 2 * count
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{os.fspath(path)}: payload short by {expected - len(raw)} bytes"
        )
    if len(raw) > expected:
        raise FormatError(f"{os.fspath(path)}: {len(raw) - expected} trailing bytes")
    payload = np.frombuffer(raw, dtype=_F16LE, count=count, offset=offset)
    return Matrix(payload.reshape(rows, cols), copy=True)
