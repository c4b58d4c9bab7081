"""Scalable sets of selected entry numbers.

Entries are grouped into blocks of 64000 consecutive entry numbers. A block
stores its members either as a sorted array of 16-bit local offsets or as a
64000-bit bitmap, whichever is smaller: an array of 4000 offsets is exactly
as large as the 8000-byte bitmap, so blocks with more than 4000 members use
the bitmap and all others use the array. Absent blocks are empty, which
keeps sparse selections small and lets a list be split or merged block by
block.
"""

from __future__ import annotations

import bisect
import struct
from array import array
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import FormatError, UsageError

BLOCK_SIZE = 64000
ARRAY_MAX = BLOCK_SIZE // 16  # 4000
BITMAP_BYTES = BLOCK_SIZE // 8  # 8000

ARRAY = 0
BITMAP = 1

_HEAD = struct.Struct("<Q")
_BLOCK_HEAD = struct.Struct("<QBI")


def _bits_to_offsets(bits: int) -> np.ndarray:
    raw = np.frombuffer(bits.to_bytes(BITMAP_BYTES, "little"), dtype=np.uint8)
    return np.flatnonzero(np.unpackbits(raw, bitorder="little"))


def _offsets_to_bits(offsets) -> int:
    flags = np.zeros(BLOCK_SIZE, dtype=np.uint8)
    flags[np.asarray(offsets).astype(np.int64)] = 1
    return int.from_bytes(np.packbits(flags, bitorder="little").tobytes(), "little")


def _u16(offsets) -> array:
    out = array("H")
    out.frombytes(np.asarray(offsets).astype(np.uint16).tobytes())
    return out


class Block:
    """Members of one 64000-entry block, as local offsets."""

    __slots__ = ("_offsets", "_bits", "_count")

    def __init__(self):
        # array form keeps offsets packed as u16, like the on-disk payload
        self._offsets: Optional[array] = array("H")
        self._bits: Optional[int] = None
        self._count = 0

    @classmethod
    def from_offsets(cls, offsets) -> "Block":
        """Build from sorted, unique offsets."""
        b = cls()
        b._count = len(offsets)
        if b._count > ARRAY_MAX:
            b._offsets, b._bits = None, _offsets_to_bits(offsets)
        else:
            b._offsets = _u16(offsets)
        return b

    @classmethod
    def from_bits(cls, bits: int) -> "Block":
        b = cls()
        b._count = bits.bit_count() if hasattr(bits, "bit_count") else bin(bits).count("1")
        if b._count > ARRAY_MAX:
            b._offsets, b._bits = None, bits
        else:
            b._offsets = _u16(_bits_to_offsets(bits)) if bits else array("H")
        return b

    @property
    def is_bitmap(self) -> bool:
        return self._bits is not None

    @property
    def form(self) -> int:
        return BITMAP if self.is_bitmap else ARRAY

    def __len__(self):
        return self._count

    @property
    def payload_bytes(self) -> int:
        return BITMAP_BYTES if self.is_bitmap else 2 * self._count

    def bits(self) -> int:
        if self._bits is not None:
            return self._bits
        if len(self._offsets) > 64:
            return _offsets_to_bits(self._offsets)
        bits = 0
        for o in self._offsets:
            bits |= 1 << o
        return bits

    def add(self, off: int) -> bool:
        if self._bits is not None:
            mask = 1 << off
            if self._bits & mask:
                return False
            self._bits |= mask
            self._count += 1
            return True
        i = bisect.bisect_left(self._offsets, off)
        if i < len(self._offsets) and self._offsets[i] == off:
            return False
        self._offsets.insert(i, off)
        self._count += 1
        if self._count > ARRAY_MAX:
            self._bits = _offsets_to_bits(self._offsets)
            self._offsets = None
        return True

    def __contains__(self, off: int) -> bool:
        if self._bits is not None:
            return bool(self._bits >> off & 1)
        i = bisect.bisect_left(self._offsets, off)
        return i < len(self._offsets) and self._offsets[i] == off

    def next_after(self, off: int) -> Optional[int]:
        """Smallest member strictly greater than ``off`` (which may be -1)."""
        if self._bits is not None:
            rest = self._bits >> (off + 1)
            if not rest:
                return None
            return off + 1 + (rest & -rest).bit_length() - 1
        i = bisect.bisect_right(self._offsets, off)
        return self._offsets[i] if i < len(self._offsets) else None

    def offsets(self) -> list:
        if self._bits is not None:
            return _bits_to_offsets(self._bits).tolist()
        return self._offsets.tolist()

    def offsets_array(self) -> np.ndarray:
        if self._bits is not None:
            return _bits_to_offsets(self._bits)
        return np.frombuffer(self._offsets, dtype=np.uint16).astype(np.int64)

    def union(self, other: "Block") -> "Block":
        if not self.is_bitmap and not other.is_bitmap:
            return Block.from_offsets(np.union1d(self.offsets_array(), other.offsets_array()))
        return Block.from_bits(self.bits() | other.bits())

    def restrict(self, lo: int, hi: int) -> "Block":
        """Members with local offset in ``[lo, hi)``."""
        if self._bits is not None:
            mask = ((1 << hi) - 1) ^ ((1 << lo) - 1)
            return Block.from_bits(self._bits & mask)
        i = bisect.bisect_left(self._offsets, lo)
        j = bisect.bisect_left(self._offsets, hi)
        return Block.from_offsets(self._offsets[i:j])

    def payload(self) -> bytes:
        if self._bits is not None:
            return self._bits.to_bytes(BITMAP_BYTES, "little")
        return np.frombuffer(self._offsets, dtype=np.uint16).astype("<u2").tobytes()

    def check(self) -> None:
        """Assert the representation rule; raises AssertionError on violation."""
        if self._count > ARRAY_MAX:
            assert self.is_bitmap, "block above crossover must be a bitmap"
        else:
            assert not self.is_bitmap, "block at or below crossover must be an array"
            assert all(a < b for a, b in zip(self._offsets, self._offsets[1:]))
            assert all(0 <= o < BLOCK_SIZE for o in self._offsets)
        assert self.payload_bytes <= BITMAP_BYTES

    def __eq__(self, other):
        if not isinstance(other, Block):
            return NotImplemented
        return self._count == other._count and self.bits() == other.bits()


class EntryList:
    """A set of non-negative entry numbers, blocked by 64000.

    >>> el = EntryList([5, 70000])
    >>> el.next_after(5)
    70000
    """

    def __init__(self, entries: Iterable[int] = ()):
        self._blocks: dict = {}
        self._keys: list = []
        self._count = 0
        self.update(entries)

    # building ------------------------------------------------------------

    def _block(self, k: int) -> Block:
        b = self._blocks.get(k)
        if b is None:
            b = self._blocks[k] = Block()
            bisect.insort(self._keys, k)
        return b

    def add(self, entry: int) -> None:
        if entry < 0 or entry >= 1 << 64:
            raise UsageError(f"entry number {entry} is not a 64-bit unsigned integer")
        k, off = divmod(int(entry), BLOCK_SIZE)
        if self._block(k).add(off):
            self._count += 1

    def update(self, entries: Iterable[int]) -> None:
        """Add many entries; much faster than repeated :meth:`add`."""
        arr = np.asarray(list(entries) if not isinstance(entries, np.ndarray) else entries)
        if arr.size == 0:
            return
        if arr.dtype.kind not in "iu" or arr.min() < 0:
            raise UsageError("entry numbers must be non-negative integers")
        arr = np.unique(arr.astype(np.uint64))
        keys = arr // BLOCK_SIZE
        cuts = np.flatnonzero(np.diff(keys)) + 1
        for chunk in np.split(arr, cuts):
            k = int(chunk[0] // BLOCK_SIZE)
            offs = (chunk % BLOCK_SIZE).astype(np.int64)
            old = self._blocks.get(k)
            new = Block.from_offsets(offs)
            if old is not None:
                self._count -= len(old)
                new = old.union(new)
            else:
                bisect.insort(self._keys, k)
            self._blocks[k] = new
            self._count += len(new)

    # queries ---------------------------------------------------------------

    def __len__(self):
        return self._count

    @property
    def count(self) -> int:
        return self._count

    def contains(self, entry: int) -> bool:
        if entry < 0:
            return False
        k, off = divmod(int(entry), BLOCK_SIZE)
        b = self._blocks.get(k)
        return b is not None and off in b

    __contains__ = contains

    def next_after(self, entry: int) -> Optional[int]:
        """Smallest member strictly greater than ``entry``, or None."""
        if entry < -1:
            entry = -1
        k, off = divmod(int(entry) + 1, BLOCK_SIZE)
        off -= 1
        i = bisect.bisect_left(self._keys, k)
        while i < len(self._keys):
            key = self._keys[i]
            found = self._blocks[key].next_after(off if key == k else -1)
            if found is not None:
                return key * BLOCK_SIZE + found
            i += 1
        return None

    def __iter__(self) -> Iterator[int]:
        for k in self._keys:
            base = k * BLOCK_SIZE
            for off in self._blocks[k].offsets():
                yield base + off

    def to_array(self) -> np.ndarray:
        parts = [self._blocks[k].offsets_array().astype(np.uint64) + np.uint64(k * BLOCK_SIZE)
                 for k in self._keys]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)

    def blocks(self) -> Iterator[tuple]:
        """``(block_index, Block)`` pairs in ascending order."""
        for k in self._keys:
            yield k, self._blocks[k]

    def __eq__(self, other):
        if not isinstance(other, EntryList):
            return NotImplemented
        mine = {k: b for k, b in self._blocks.items() if len(b)}
        theirs = {k: b for k, b in other._blocks.items() if len(b)}
        return mine == theirs

    def __repr__(self):
        return f"<EntryList {self._count} entries in {len(self._keys)} blocks>"

    def check(self) -> None:
        """Verify every block invariant (used by tests and ``elist info``)."""
        assert self._count == sum(len(b) for b in self._blocks.values())
        assert self._keys == sorted(self._blocks)
        for b in self._blocks.values():
            b.check()

    # combining -----------------------------------------------------------

    def union(self, other: "EntryList") -> "EntryList":
        out = EntryList()
        for k in sorted(set(self._keys).union(other._keys)):
            a, b = self._blocks.get(k), other._blocks.get(k)
            if a is not None and b is not None:
                merged = a.union(b)
            else:
                merged = (a if a is not None else b).union(Block())
            if len(merged):
                out._blocks[k] = merged
                out._keys.append(k)
                out._count += len(merged)
        return out

    __or__ = union

    def split(self, boundaries) -> list:
        """Partition by half-open ranges ``[b_i, b_{i+1})``; numbers are kept."""
        bounds = [int(b) for b in boundaries]
        if any(b < 0 for b in bounds) or any(a >= b for a, b in zip(bounds, bounds[1:])):
            raise UsageError(f"split boundaries must be strictly ascending: {bounds}")
        edges = [0] + bounds + [None]
        parts = []
        for lo, hi in zip(edges, edges[1:]):
            part = EntryList()
            first = lo // BLOCK_SIZE
            i = bisect.bisect_left(self._keys, first)
            while i < len(self._keys):
                k = self._keys[i]
                base = k * BLOCK_SIZE
                if hi is not None and base >= hi:
                    break
                local_lo = max(lo - base, 0)
                local_hi = BLOCK_SIZE if hi is None else min(hi - base, BLOCK_SIZE)
                piece = self._blocks[k].restrict(local_lo, local_hi)
                if len(piece):
                    part._blocks[k] = piece
                    part._keys.append(k)
                    part._count += len(piece)
                i += 1
            parts.append(part)
        return parts

    # serialization -------------------------------------------------------

    def serialize(self) -> bytes:
        keys = [k for k in self._keys if len(self._blocks[k])]
        out = [_HEAD.pack(len(keys))]
        for k in keys:
            b = self._blocks[k]
            out.append(_BLOCK_HEAD.pack(k, b.form, len(b)))
            out.append(b.payload())
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "EntryList":
        data = bytes(data)
        if len(data) < _HEAD.size:
            raise FormatError("entry list is truncated")
        (n_blocks,) = _HEAD.unpack_from(data, 0)
        pos = _HEAD.size
        out = cls()
        prev = -1
        for _ in range(n_blocks):
            if pos + _BLOCK_HEAD.size > len(data):
                raise FormatError("entry list is truncated")
            k, form, count = _BLOCK_HEAD.unpack_from(data, pos)
            pos += _BLOCK_HEAD.size
            if k <= prev:
                raise FormatError("entry list blocks are not in ascending order")
            prev = k
            if form == ARRAY:
                size = 2 * count
                if count > ARRAY_MAX or pos + size > len(data):
                    raise FormatError("bad array block")
                offsets = np.frombuffer(data, dtype="<u2", count=count, offset=pos).astype(np.int64)
                if np.any(np.diff(offsets) <= 0) or (count and offsets[-1] >= BLOCK_SIZE):
                    raise FormatError("array block offsets are not strictly increasing")
                block = Block.from_offsets(offsets)
            elif form == BITMAP:
                size = BITMAP_BYTES
                if pos + size > len(data):
                    raise FormatError("bad bitmap block")
                block = Block.from_bits(int.from_bytes(data[pos:pos + size], "little"))
                if len(block) != count or count <= ARRAY_MAX:
                    raise FormatError("bitmap block count does not match its form")
            else:
                raise FormatError(f"unknown block form {form}")
            if count == 0:
                raise FormatError("empty block in entry list")
            pos += size
            out._blocks[k] = block
            out._keys.append(k)
            out._count += len(block)
        if pos != len(data):
            raise FormatError("trailing bytes after entry list")
        return out
