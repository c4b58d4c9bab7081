"""Binary container: header, basket payloads, footer directory.

Layout (all integers little-endian, see FORMAT.md for the field-level
description)::

    +--------------------+  offset 0
    | header (24 bytes)  |  "RTIO", version, reserved, footer_offset, footer_length
    +--------------------+  offset 24
    | basket payloads    |  written verbatim, in append order
    +--------------------+  footer_offset
    | directory          |
    | crc32(directory)   |
    | "OITR"             |
    +--------------------+  footer_offset + footer_length == file size

The body is append-only; the header is patched once at :meth:`finalize`.
Opening a file reads the header and footer only, basket payloads are read
lazily through :meth:`ContainerReader.read_basket_raw`.
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .codec import LeafKind, LeafType, QuantSpec
from .errors import (
    BadMagicError,
    ChecksumError,
    ClosedHandleError,
    FormatError,
    SchemaError,
    ShortReadError,
    TruncatedFileError,
    UnsupportedVersionError,
    UsageError,
)
from .histogram import Histogram1D

MAGIC = b"RTIO"
TRAILER = b"OITR"
VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = HEADER.size  # 24
FOOTER_TAIL = 8  # crc32 + trailer magic

_BASKET = struct.Struct("<IQQIIIBI")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


def crc32(data) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


# directory model -------------------------------------------------------------


@dataclass(frozen=True)
class BasketIndexEntry:
    branch_id: int
    file_offset: int
    first_entry: int
    n_entries: int
    raw_length: int
    compressed_length: int
    codec_id: int
    checksum: int

    @property
    def last_entry(self) -> int:
        """One past the final entry covered by this basket."""
        return self.first_entry + self.n_entries


@dataclass
class BranchDescriptor:
    name: str
    branch_id: int
    leaf: LeafType
    baskets: list = field(default_factory=list)

    @property
    def n_entries(self) -> int:
        return sum(b.n_entries for b in self.baskets)


@dataclass
class TreeDescriptor:
    name: str
    n_entries: int
    branches: list = field(default_factory=list)

    def branch(self, name: str) -> BranchDescriptor:
        for b in self.branches:
            if b.name == name:
                return b
        raise SchemaError(f"tree {self.name!r} has no branch {name!r}")


@dataclass
class EntryListRecord:
    name: str
    data: bytes


@dataclass
class Directory:
    trees: list = field(default_factory=list)
    histograms: list = field(default_factory=list)
    entry_lists: list = field(default_factory=list)

    def tree(self, name: str) -> TreeDescriptor:
        for t in self.trees:
            if t.name == name:
                return t
        raise UsageError(f"no tree named {name!r}")

    def histogram(self, name: str) -> Histogram1D:
        for h in self.histograms:
            if h.name == name:
                return h
        raise UsageError(f"no histogram named {name!r}")

    def entry_list_record(self, name: str) -> EntryListRecord:
        for e in self.entry_lists:
            if e.name == name:
                return e
        raise UsageError(f"no entry list named {name!r}")

    def iter_baskets(self):
        for t in self.trees:
            for b in t.branches:
                yield from b.baskets

    def validate(self, body_end: Optional[int] = None) -> None:
        for kind, items in (("tree", self.trees), ("histogram", self.histograms),
                            ("entry list", self.entry_lists)):
            names = [i.name for i in items]
            if len(set(names)) != len(names):
                raise FormatError(f"duplicate {kind} names in directory")
        for t in self.trees:
            for b in t.branches:
                expected = 0
                for e in b.baskets:
                    if e.branch_id != b.branch_id:
                        raise FormatError(f"basket of branch {b.name!r} has foreign branch id")
                    if e.n_entries < 1 or e.first_entry != expected:
                        raise FormatError(f"baskets of branch {t.name}.{b.name} are not contiguous")
                    if e.codec_id not in codec.CODEC_IDS:
                        raise FormatError(f"unknown codec id {e.codec_id}")
                    if body_end is not None and not (
                        HEADER_SIZE <= e.file_offset
                        and e.file_offset + e.compressed_length <= body_end
                    ):
                        raise FormatError(f"basket of {t.name}.{b.name} lies outside the body")
                    expected = e.last_entry
                if expected != t.n_entries:
                    raise FormatError(
                        f"branch {t.name}.{b.name} holds {expected} entries, "
                        f"tree declares {t.n_entries}"
                    )


# directory serialization ----------------------------------------------------


def _put_str(out: list, s: str) -> None:
    b = s.encode("utf-8")
    out.append(_U32.pack(len(b)))
    out.append(b)


def _put_leaf(out: list, leaf: LeafType) -> None:
    out.append(_U8.pack(int(leaf.kind)))
    if leaf.kind == LeafKind.QF64:
        q = leaf.quant
        out.append(struct.pack("<ddB", q.min, q.max, q.nbits))


def serialize_directory(d: Directory) -> bytes:
    out: list = []
    out.append(_U64.pack(len(d.trees)))
    for t in d.trees:
        _put_str(out, t.name)
        out.append(_U64.pack(t.n_entries))
        out.append(_U64.pack(len(t.branches)))
        for b in t.branches:
            _put_str(out, b.name)
            out.append(_U32.pack(b.branch_id))
            _put_leaf(out, b.leaf)
            out.append(_U64.pack(len(b.baskets)))
            for e in b.baskets:
                out.append(_BASKET.pack(
                    e.branch_id, e.file_offset, e.first_entry, e.n_entries,
                    e.raw_length, e.compressed_length, e.codec_id, e.checksum,
                ))
    out.append(_U64.pack(len(d.histograms)))
    for h in d.histograms:
        _put_str(out, h.name)
        out.append(struct.pack("<Idd", h.n_bins, h.lo, h.hi))
        out.append(struct.pack(f"<{h.n_bins + 2}d", *h.counts))
    out.append(_U64.pack(len(d.entry_lists)))
    for e in d.entry_lists:
        _put_str(out, e.name)
        out.append(_U32.pack(len(e.data)))
        out.append(bytes(e.data))
    return b"".join(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError("directory is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def u8(self) -> int:
        return self.unpack(_U8)[0]

    def u32(self) -> int:
        return self.unpack(_U32)[0]

    def u64(self) -> int:
        return self.unpack(_U64)[0]

    def string(self) -> str:
        try:
            return bytes(self.take(self.u32())).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("directory contains an invalid name") from None

    def count(self) -> int:
        n = self.u64()
        # every listed item takes at least one byte
        if n > len(self.data) - self.pos:
            raise FormatError("directory item count exceeds its size")
        return n


def _get_leaf(cur: _Cursor) -> LeafType:
    tag = cur.u8()
    try:
        kind = LeafKind(tag)
    except ValueError:
        raise FormatError(f"unknown leaf type tag {tag}") from None
    if kind == LeafKind.QF64:
        lo, hi, nbits = cur.unpack(struct.Struct("<ddB"))
        try:
            return LeafType(kind, QuantSpec(lo, hi, nbits))
        except codec.CodecError as exc:
            raise FormatError(str(exc)) from None
    return LeafType(kind)


def parse_directory(data: bytes) -> Directory:
    cur = _Cursor(data)
    d = Directory()
    for _ in range(cur.count()):
        t = TreeDescriptor(cur.string(), cur.u64())
        for _ in range(cur.count()):
            b = BranchDescriptor(cur.string(), cur.u32(), _get_leaf(cur))
            for _ in range(cur.count()):
                b.baskets.append(BasketIndexEntry(*cur.unpack(_BASKET)))
            t.branches.append(b)
        d.trees.append(t)
    for _ in range(cur.count()):
        name = cur.string()
        n_bins, lo, hi = cur.unpack(struct.Struct("<Idd"))
        counts = list(cur.unpack(struct.Struct(f"<{n_bins + 2}d")))
        try:
            d.histograms.append(Histogram1D(name, n_bins, lo, hi, counts))
        except UsageError as exc:
            raise FormatError(str(exc)) from None
    for _ in range(cur.count()):
        name = cur.string()
        d.entry_lists.append(EntryListRecord(name, bytes(cur.take(cur.u32()))))
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes after directory")
    return d


# writing -------------------------------------------------------------------

_open_paths: set = set()
_open_lock = threading.Lock()


class ContainerWriter:
    """Append-only writer for one container file.

    Obtained from :func:`create_file`. Baskets are written as they arrive;
    the directory lives in memory until :meth:`finalize`.
    """

    def __init__(self, path, fh):
        self.path = path
        self._fh = fh
        self._pos = HEADER_SIZE
        self.directory = Directory()
        self._branches: dict = {}
        self._next_entry: dict = {}
        self._writers: list = []
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self):
        if self._closed:
            raise ClosedHandleError(f"container {self.path} is already finalized")

    def register_tree(self, name: str, leaves) -> TreeDescriptor:
        """Declare a tree; ``leaves`` is a sequence of ``(name, LeafType)``."""
        self._check_open()
        if any(t.name == name for t in self.directory.trees):
            raise SchemaError(f"tree {name!r} already exists in {self.path}")
        leaves = list(leaves)
        if not leaves:
            raise SchemaError(f"tree {name!r} needs at least one branch")
        tree = TreeDescriptor(name, 0)
        for leaf_name, leaf in leaves:
            bid = len(self._branches)
            branch = BranchDescriptor(leaf_name, bid, leaf)
            self._branches[bid] = (tree, branch)
            self._next_entry[bid] = 0
            tree.branches.append(branch)
        self.directory.trees.append(tree)
        return tree

    def create_tree(self, name, schema, basket_capacity_bytes=16384, level=6):
        from .tree import TreeWriter

        return TreeWriter(self, name, schema, basket_capacity_bytes, level)

    def _adopt_writer(self, w) -> None:
        self._writers.append(w)

    def append_basket(self, branch_id: int, first_entry: int, payload: bytes,
                      raw_length: int, codec_id: int, n_entries: int) -> BasketIndexEntry:
        """Write ``payload`` verbatim and record its index entry."""
        self._check_open()
        if branch_id not in self._branches:
            raise UsageError(f"unknown branch id {branch_id}")
        if not payload:
            raise UsageError("basket payload must not be empty")
        if n_entries < 1:
            raise UsageError("a basket must hold at least one entry")
        if codec_id not in codec.CODEC_IDS:
            raise UsageError(f"unknown codec id {codec_id}")
        expected = self._next_entry[branch_id]
        if first_entry != expected:
            raise UsageError(
                f"entry discontinuity on branch id {branch_id}: basket starts at "
                f"{first_entry}, expected {expected}"
            )
        payload = bytes(payload)
        entry = BasketIndexEntry(
            branch_id=branch_id,
            file_offset=self._pos,
            first_entry=first_entry,
            n_entries=n_entries,
            raw_length=raw_length,
            compressed_length=len(payload),
            codec_id=codec_id,
            checksum=crc32(payload),
        )
        self._fh.write(payload)
        self._pos += len(payload)
        self._next_entry[branch_id] = first_entry + n_entries
        self._branches[branch_id][1].baskets.append(entry)
        return entry

    def add_histogram(self, hist: Histogram1D) -> None:
        self._check_open()
        if any(h.name == hist.name for h in self.directory.histograms):
            raise UsageError(f"histogram {hist.name!r} already exists")
        self.directory.histograms.append(
            Histogram1D(hist.name, hist.n_bins, hist.lo, hist.hi, list(hist.counts)))

    def add_entry_list(self, name: str, elist) -> None:
        self._check_open()
        if any(e.name == name for e in self.directory.entry_lists):
            raise UsageError(f"entry list {name!r} already exists")
        data = elist if isinstance(elist, (bytes, bytearray)) else elist.serialize()
        self.directory.entry_lists.append(EntryListRecord(name, bytes(data)))

    def finalize(self) -> None:
        """Flush pending trees, write the footer and patch the header."""
        self._check_open()
        try:
            for w in self._writers:
                w.close()
            for t in self.directory.trees:
                sums = {b.n_entries for b in t.branches}
                if len(sums) != 1:
                    raise FormatError(f"branches of tree {t.name!r} disagree on entry count")
                t.n_entries = sums.pop()
            body = serialize_directory(self.directory)
            footer_offset = self._pos
            self._fh.write(body)
            self._fh.write(_U32.pack(crc32(body)))
            self._fh.write(TRAILER)
            self._fh.seek(0)
            self._fh.write(HEADER.pack(MAGIC, VERSION, 0, footer_offset, len(body) + FOOTER_TAIL))
            self._fh.flush()
        finally:
            self._closed = True
            self._fh.close()
            with _open_lock:
                _open_paths.discard(self._key)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if not self._closed:
            if exc_type is None:
                self.finalize()
            else:
                self._closed = True
                self._fh.close()
                with _open_lock:
                    _open_paths.discard(self._key)


def create_file(path, overwrite: bool = False) -> ContainerWriter:
    """Create a container at ``path`` and return its writer."""
    key = os.path.abspath(os.fspath(path))
    with _open_lock:
        if key in _open_paths:
            raise UsageError(f"{path} is already open for writing")
        fh = open(path, "wb" if overwrite else "xb")
        _open_paths.add(key)
    fh.write(HEADER.pack(MAGIC, VERSION, 0, 0, 0))
    w = ContainerWriter(path, fh)
    w._key = key
    return w


# reading -------------------------------------------------------------------


@dataclass(frozen=True)
class FileHeader:
    magic: bytes
    version: int
    footer_offset: int
    footer_length: int


def _parse_header(raw: bytes, size: int) -> FileHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError("file is shorter than the header")
    magic, version, _reserved, footer_offset, footer_length = HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    if footer_offset < HEADER_SIZE or footer_length < FOOTER_TAIL:
        raise TruncatedFileError("header does not point at a footer (unfinalized file?)")
    if footer_offset + footer_length > size:
        raise TruncatedFileError(
            f"footer ends at {footer_offset + footer_length}, file has {size} bytes")
    return FileHeader(magic, version, footer_offset, footer_length)


class ContainerReader:
    """Read-only view of a finalized container.

    ``source`` is a storage adapter (see :mod:`rtio.remote`); it may be
    swapped, e.g. for a prefetching cache, without reparsing.
    """

    def __init__(self, source, header: FileHeader, directory: Directory):
        self.source = source
        self.header = header
        self.directory = directory
        self._known = frozenset(directory.iter_baskets())

    @property
    def tree_names(self) -> list:
        return [t.name for t in self.directory.trees]

    def tree(self, name: str):
        from .tree import TreeReader

        return TreeReader(self, self.directory.tree(name))

    def histogram(self, name: str) -> Histogram1D:
        return self.directory.histogram(name)

    def entry_list(self, name: str):
        from .entrylist import EntryList

        return EntryList.deserialize(self.directory.entry_list_record(name).data)

    def read_basket_raw(self, entry: BasketIndexEntry) -> bytes:
        """Return a basket's on-disk payload, checksum-verified, never inflated."""
        if entry not in self._known:
            raise UsageError("basket index entry does not belong to this file")
        payload = bytes(self.source.read_at(entry.file_offset, entry.compressed_length))
        if len(payload) != entry.compressed_length:
            raise ShortReadError(
                f"short read at {entry.file_offset}: {len(payload)} of "
                f"{entry.compressed_length} bytes")
        if crc32(payload) != entry.checksum:
            raise ChecksumError(f"checksum mismatch for basket at offset {entry.file_offset}")
        return payload

    def read_basket(self, entry: BasketIndexEntry) -> bytes:
        """Read and decompress a basket into its raw column bytes."""
        return codec.decompress(self.read_basket_raw(entry), entry.codec_id, entry.raw_length)

    def use_prefetch(self, window_baskets: int = 20):
        """Route basket reads through a read-ahead cache; returns the cache."""
        from .remote import PrefetchCache

        cache = PrefetchCache(self.source, self.directory, window_baskets)
        self.source = cache
        return cache

    def close(self) -> None:
        close = getattr(self.source, "close", None)
        if close is not None:
            close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_file(source) -> ContainerReader:
    """Open a finalized container from a path or storage adapter.

    Costs exactly two transactions on the adapter: one for the header and
    one for the footer.
    """
    if isinstance(source, (str, os.PathLike)):
        from .remote import LocalFileAdapter

        source = LocalFileAdapter(source)
    size = source.size()
    header = _parse_header(bytes(source.read_at(0, HEADER_SIZE)), size)
    footer = bytes(source.read_at(header.footer_offset, header.footer_length))
    if len(footer) != header.footer_length:
        raise TruncatedFileError("footer is truncated")
    body, crc_raw, trailer = footer[:-8], footer[-8:-4], footer[-4:]
    if trailer != TRAILER:
        raise BadMagicError(f"bad trailer {trailer!r}, expected {TRAILER!r}")
    if _U32.unpack(crc_raw)[0] != crc32(body):
        raise ChecksumError("footer checksum mismatch")
    directory = parse_directory(body)
    directory.validate(body_end=header.footer_offset)
    return ContainerReader(source, header, directory)
