"""Value-level encoding for branch columns.

Four leaf types are supported:

``F64``
    8-byte IEEE-754 doubles.
``QF64``
    doubles declared with a value range and a number of significant bits.
    On disk each value is the integer ``round((v - min) * (2**nbits - 1) /
    (max - min))`` stored in the narrowest of 1, 2 or 4 bytes. Reading a
    ``QF64`` column always yields doubles, so quantized data is readable
    wherever plain doubles are expected.
``I64``
    8-byte two's complement integers.
``STR``
    UTF-8 strings, each prefixed by a 32-bit length.

Block compression is raw DEFLATE with a store fallback. Every call to
:func:`compress` and :func:`decompress` is counted in :data:`stats`, which is
how the merge code proves that its fast path never inflates a basket.
"""

from __future__ import annotations

import enum
import math
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CodecError

STORE = 0
DEFLATE = 1
CODEC_IDS = (STORE, DEFLATE)


class LeafKind(enum.IntEnum):
    F64 = 0
    QF64 = 1
    I64 = 2
    STR = 3


@dataclass(frozen=True)
class QuantSpec:
    """Range and bit count for a quantized double column."""

    min: float
    max: float
    nbits: int

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise CodecError(f"quantization bounds must be finite: {self}")
        if not self.min < self.max:
            raise CodecError(f"quantization requires min < max: {self}")
        if isinstance(self.nbits, bool) or not isinstance(self.nbits, (int, np.integer)):
            raise CodecError(f"nbits must be an integer: {self.nbits!r}")
        if not 2 <= self.nbits <= 32:
            raise CodecError(f"nbits must be in [2, 32]: {self.nbits}")

    @property
    def max_code(self) -> int:
        return (1 << self.nbits) - 1

    @property
    def width(self) -> int:
        """Bytes used per value on disk."""
        if self.nbits <= 8:
            return 1
        if self.nbits <= 16:
            return 2
        return 4

    @property
    def max_error(self) -> float:
        """Largest reconstruction error for an in-range value."""
        return (self.max - self.min) / (2 * self.max_code)


@dataclass(frozen=True)
class LeafType:
    kind: LeafKind
    quant: Optional[QuantSpec] = None

    def __post_init__(self):
        if (self.kind == LeafKind.QF64) != (self.quant is not None):
            raise CodecError("a QuantSpec is required for QF64 and only for QF64")

    @classmethod
    def quantized(cls, min: float, max: float, nbits: int) -> "LeafType":
        return cls(LeafKind.QF64, QuantSpec(float(min), float(max), int(nbits)))

    @property
    def width(self) -> Optional[int]:
        """Fixed encoded width in bytes, or None for strings."""
        if self.kind == LeafKind.QF64:
            return self.quant.width
        if self.kind == LeafKind.STR:
            return None
        return 8

    @property
    def is_numeric(self) -> bool:
        return self.kind != LeafKind.STR

    def __str__(self):
        if self.quant is not None:
            q = self.quant
            return f"QF64[{q.min:g},{q.max:g},{q.nbits}]"
        return self.kind.name


F64 = LeafType(LeafKind.F64)
I64 = LeafType(LeafKind.I64)
STR = LeafType(LeafKind.STR)


class CodecStats:
    """Monotonic, thread-safe counters for block (de)compression."""

    _fields = ("compress_calls", "decompress_calls", "bytes_in", "bytes_out")

    def __init__(self):
        self._lock = threading.Lock()
        self.compress_calls = 0
        self.decompress_calls = 0
        self.bytes_in = 0
        self.bytes_out = 0

    def _record(self, kind, n_in, n_out):
        with self._lock:
            if kind == "compress":
                self.compress_calls += 1
            else:
                self.decompress_calls += 1
            self.bytes_in += n_in
            self.bytes_out += n_out

    def snapshot(self) -> dict:
        with self._lock:
            return {name: getattr(self, name) for name in self._fields}

    def delta(self, since: dict) -> dict:
        now = self.snapshot()
        return {name: now[name] - since[name] for name in self._fields}


stats = CodecStats()


# quantization ----------------------------------------------------------------


def _check_finite(arr):
    if arr.size and not np.isfinite(arr).all():
        bad = arr[~np.isfinite(arr)][0]
        raise CodecError(f"cannot quantize non-finite value {bad!r}")


def quantize_array(values, spec: QuantSpec) -> np.ndarray:
    """Vectorized :func:`quantize`; returns uint64 codes."""
    v = np.asarray(values, dtype=np.float64)
    _check_finite(v)
    scaled = (np.clip(v, spec.min, spec.max) - spec.min) * float(spec.max_code) / (
        spec.max - spec.min
    )
    # half away from zero; scaled is never negative
    base = np.floor(scaled)
    codes = base + (scaled - base >= 0.5)
    return np.clip(codes, 0, spec.max_code).astype(np.uint64)


def quantize(v: float, spec: QuantSpec) -> int:
    """Map a finite double onto ``[0, 2**nbits - 1]``.

    Values outside ``[min, max]`` are clamped first. NaN and infinities
    raise :class:`CodecError`.

    >>> quantize(0.3, QuantSpec(0.0, 1.0, 8))
    77
    """
    return int(quantize_array([v], spec)[0])


def dequantize_array(codes, spec: QuantSpec) -> np.ndarray:
    q = np.asarray(codes)
    if q.size and (q.min() < 0 or q.max() > spec.max_code):
        raise CodecError(f"quantized code out of range for {spec.nbits} bits")
    q = q.astype(np.float64)
    out = spec.min + q * (spec.max - spec.min) / float(spec.max_code)
    # keep the upper endpoint exact regardless of rounding in the product
    return np.where(q == spec.max_code, spec.max, out)


def dequantize(q: int, spec: QuantSpec) -> float:
    if isinstance(q, bool) or not 0 <= q <= spec.max_code:
        raise CodecError(f"quantized code {q!r} out of range for {spec.nbits} bits")
    return float(dequantize_array([q], spec)[0])


# columns -------------------------------------------------------------------

_LEN = struct.Struct("<I")
_QDTYPES = {1: "<u1", 2: "<u2", 4: "<u4"}


def _as_float_array(values):
    if isinstance(values, np.ndarray):
        if values.dtype.kind not in "fiub":
            raise CodecError(f"expected numeric values, got dtype {values.dtype}")
        return values.astype(np.float64, copy=False)
    for v in values:
        if isinstance(v, (str, bytes)) or v is None:
            raise CodecError(f"expected a number, got {v!r}")
    return np.asarray(values, dtype=np.float64)


def _as_int_array(values):
    if isinstance(values, np.ndarray):
        if values.dtype.kind not in "iub":
            raise CodecError(f"expected integer values, got dtype {values.dtype}")
        return values.astype(np.int64, copy=False)
    for v in values:
        if not isinstance(v, (int, np.integer)):
            raise CodecError(f"expected an integer, got {v!r}")
    try:
        return np.asarray(values, dtype=np.int64)
    except OverflowError as exc:
        raise CodecError(str(exc)) from None


def encode_column(values: Sequence, leaf: LeafType) -> bytes:
    """Serialize a homogeneous sequence of leaf values."""
    kind = leaf.kind
    if kind == LeafKind.F64:
        return _as_float_array(values).astype("<f8", copy=False).tobytes()
    if kind == LeafKind.QF64:
        codes = quantize_array(_as_float_array(values), leaf.quant)
        return codes.astype(_QDTYPES[leaf.quant.width]).tobytes()
    if kind == LeafKind.I64:
        return _as_int_array(values).astype("<i8", copy=False).tobytes()
    parts = []
    for v in values:
        if not isinstance(v, str):
            raise CodecError(f"expected a string, got {v!r}")
        try:
            b = v.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise CodecError(f"string is not valid UTF-8: {exc}") from None
        parts.append(_LEN.pack(len(b)))
        parts.append(b)
    return b"".join(parts)


def decode_column(data: bytes, leaf: LeafType, n_values: int):
    """Inverse of :func:`encode_column`.

    Numeric leaves decode to numpy arrays (float64 for F64 and QF64, int64
    for I64); strings decode to a list of ``str``.
    """
    width = leaf.width
    if width is not None:
        if len(data) != n_values * width:
            raise CodecError(
                f"{leaf} column of {n_values} values needs {n_values * width} bytes, "
                f"got {len(data)}"
            )
        if leaf.kind == LeafKind.F64:
            return np.frombuffer(data, dtype="<f8").astype(np.float64, copy=False)
        if leaf.kind == LeafKind.I64:
            return np.frombuffer(data, dtype="<i8").astype(np.int64, copy=False)
        codes = np.frombuffer(data, dtype=_QDTYPES[width])
        return dequantize_array(codes, leaf.quant)

    out = []
    pos = 0
    view = memoryview(data)
    for _ in range(n_values):
        if pos + 4 > len(data):
            raise CodecError("truncated string stream")
        (n,) = _LEN.unpack_from(view, pos)
        pos += 4
        if pos + n > len(data):
            raise CodecError("truncated string stream")
        try:
            out.append(bytes(view[pos:pos + n]).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CodecError(f"malformed string stream: {exc}") from None
        pos += n
    if pos != len(data):
        raise CodecError(f"{len(data) - pos} trailing bytes after {n_values} strings")
    return out


# block compression -----------------------------------------------------------


def compress(data: bytes, level: int = 6) -> tuple[bytes, int]:
    """Compress a raw basket, returning ``(payload, codec_id)``.

    Level 0 stores. Higher levels use raw DEFLATE unless that fails to shrink
    the input, in which case the input is stored verbatim.
    """
    if isinstance(level, bool) or not 0 <= level <= 9:
        raise CodecError(f"compression level must be 0-9, got {level!r}")
    data = bytes(data)
    payload, codec_id = data, STORE
    if level > 0:
        c = zlib.compressobj(level, zlib.DEFLATED, -15)
        packed = c.compress(data) + c.flush()
        if len(packed) < len(data):
            payload, codec_id = packed, DEFLATE
    stats._record("compress", len(data), len(payload))
    return payload, codec_id


def decompress(payload: bytes, codec_id: int, raw_length: int) -> bytes:
    if codec_id == STORE:
        out = bytes(payload)
    elif codec_id == DEFLATE:
        try:
            d = zlib.decompressobj(-15)
            out = d.decompress(payload, raw_length + 1)
            if not d.eof or d.unused_data:
                raise CodecError("corrupt deflate stream")
        except zlib.error as exc:
            raise CodecError(f"corrupt deflate stream: {exc}") from None
    else:
        raise CodecError(f"unknown codec id {codec_id}")
    if len(out) != raw_length:
        raise CodecError(f"decompressed {len(out)} bytes, expected {raw_length}")
    stats._record("decompress", len(payload), len(out))
    return out
