"""Row-oriented tree writing and column-oriented reading."""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import codec
from .codec import LeafKind, LeafType
from .errors import ClosedHandleError, CodecError, SchemaError, UsageError

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

DEFAULT_BASKET_CAPACITY = 16384
DEFAULT_LEVEL = 6


@dataclass(frozen=True)
class Leaf:
    name: str
    leaf_type: LeafType


class Schema(Sequence):
    """Ordered, uniquely named, typed columns."""

    def __init__(self, leaves):
        leaves = [l if isinstance(l, Leaf) else Leaf(*l) for l in leaves]
        if not leaves:
            raise SchemaError("schema must have at least one leaf")
        seen = set()
        for leaf in leaves:
            if not _IDENT.match(leaf.name):
                raise SchemaError(f"invalid leaf name {leaf.name!r}")
            if leaf.name in seen:
                raise SchemaError(f"duplicate leaf name {leaf.name!r}")
            seen.add(leaf.name)
        self._leaves = tuple(leaves)
        self._index = {l.name: i for i, l in enumerate(leaves)}

    def __getitem__(self, i):
        return self._leaves[i]

    def __len__(self):
        return len(self._leaves)

    def __eq__(self, other):
        return isinstance(other, Schema) and self._leaves == other._leaves

    def __hash__(self):
        return hash(self._leaves)

    def __repr__(self):
        return "Schema(" + ":".join(f"{l.name}/{l.leaf_type}" for l in self._leaves) + ")"

    @property
    def names(self) -> list:
        return [l.name for l in self._leaves]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown leaf {name!r}") from None

    def leaf(self, name: str) -> Leaf:
        return self._leaves[self.index(name)]

    @classmethod
    def from_branches(cls, branches) -> "Schema":
        return cls(Leaf(b.name, b.leaf) for b in branches)


def _check_value(leaf: Leaf, v):
    kind = leaf.leaf_type.kind
    if kind == LeafKind.STR:
        if not isinstance(v, str):
            raise SchemaError(f"leaf {leaf.name!r} expects a string, got {v!r}")
        return v
    if kind == LeafKind.I64:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise SchemaError(f"leaf {leaf.name!r} expects an integer, got {v!r}")
        if not -(1 << 63) <= int(v) < (1 << 63):
            raise SchemaError(f"leaf {leaf.name!r}: {v} does not fit in 64 bits")
        return int(v)
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise SchemaError(f"leaf {leaf.name!r} expects a number, got {v!r}")
    v = float(v)
    if kind == LeafKind.QF64 and not math.isfinite(v):
        raise CodecError(f"leaf {leaf.name!r} is quantized and cannot store {v!r}")
    return v


class _BranchBuffer:
    __slots__ = ("branch_id", "leaf", "pieces", "count", "nbytes", "first_entry", "per_basket")

    def __init__(self, branch_id, leaf, capacity):
        self.branch_id = branch_id
        self.leaf = leaf
        self.pieces = []
        self.count = 0
        self.nbytes = 0
        self.first_entry = 0
        width = leaf.leaf_type.width
        self.per_basket = max(1, capacity // width) if width else None


class TreeWriter:
    """Buffers rows per branch and flushes full baskets to the container.

    A branch is flushed as soon as adding another value would push its
    encoded buffer past ``basket_capacity_bytes``; each branch decides
    independently. Remaining partial baskets are written by :meth:`close`,
    which the container's ``finalize`` calls automatically.
    """

    def __init__(self, handle, name: str, schema, basket_capacity_bytes: int = DEFAULT_BASKET_CAPACITY,
                 level: int = DEFAULT_LEVEL):
        if not isinstance(schema, Schema):
            schema = Schema(schema)
        if basket_capacity_bytes < 1:
            raise UsageError("basket capacity must be positive")
        if not 0 <= level <= 9:
            raise UsageError(f"compression level must be 0-9, got {level}")
        tree = handle.register_tree(name, [(l.name, l.leaf_type) for l in schema])
        self.handle = handle
        self.name = name
        self.schema = schema
        self.capacity = basket_capacity_bytes
        self.level = level
        self.entries = 0
        self._buffers = [
            _BranchBuffer(b.branch_id, leaf, basket_capacity_bytes)
            for b, leaf in zip(tree.branches, schema)
        ]
        self._closed = False
        handle._adopt_writer(self)

    def _row_values(self, row):
        if isinstance(row, Mapping):
            if set(row) != set(self.schema.names):
                raise SchemaError(f"row keys {sorted(row)} do not match schema {self.schema.names}")
            row = [row[n] for n in self.schema.names]
        if len(row) != len(self.schema):
            raise SchemaError(f"row has {len(row)} values, schema has {len(self.schema)} leaves")
        return [_check_value(leaf, v) for leaf, v in zip(self.schema, row)]

    def fill(self, row) -> None:
        """Append one entry; ``row`` is a sequence in schema order or a mapping."""
        if self._closed:
            raise ClosedHandleError(f"tree {self.name!r} is closed")
        values = self._row_values(row)
        for buf, v in zip(self._buffers, values):
            if buf.per_basket is None:
                size = 4 + len(v.encode("utf-8"))
                if buf.count and buf.nbytes + size > self.capacity:
                    self._flush(buf)
                buf.pieces.append([v])
                buf.count += 1
                buf.nbytes += size
            else:
                buf.pieces.append([v])
                buf.count += 1
                if buf.count == buf.per_basket:
                    self._flush(buf)
        self.entries += 1

    def fill_columns(self, columns) -> int:
        """Append many entries at once from equal-length columns.

        Produces the same baskets as calling :meth:`fill` row by row.
        """
        if self._closed:
            raise ClosedHandleError(f"tree {self.name!r} is closed")
        if isinstance(columns, Mapping):
            if set(columns) != set(self.schema.names):
                raise SchemaError(f"columns {sorted(columns)} do not match schema {self.schema.names}")
            columns = [columns[n] for n in self.schema.names]
        if len(columns) != len(self.schema):
            raise SchemaError(f"got {len(columns)} columns, schema has {len(self.schema)} leaves")
        prepared = []
        for leaf, col in zip(self.schema, columns):
            kind = leaf.leaf_type.kind
            if kind == LeafKind.STR:
                prepared.append([_check_value(leaf, v) for v in col])
                continue
            arr = np.asarray(col)
            if arr.ndim != 1:
                raise SchemaError(f"column {leaf.name!r} must be one-dimensional")
            if kind == LeafKind.I64:
                if arr.size and arr.dtype.kind not in "iu":
                    raise SchemaError(f"leaf {leaf.name!r} expects integers, got dtype {arr.dtype}")
                arr = arr.astype(np.int64)
            else:
                if arr.size and arr.dtype.kind not in "iuf":
                    raise SchemaError(f"leaf {leaf.name!r} expects numbers, got dtype {arr.dtype}")
                arr = arr.astype(np.float64)
                if kind == LeafKind.QF64 and not np.isfinite(arr).all():
                    raise CodecError(f"leaf {leaf.name!r} is quantized and cannot store non-finite values")
            prepared.append(arr)
        lengths = {len(c) for c in prepared}
        if len(lengths) > 1:
            raise SchemaError("columns have different lengths")
        n = lengths.pop()
        for buf, col in zip(self._buffers, prepared):
            if buf.per_basket is None:
                for v in col:
                    size = 4 + len(v.encode("utf-8"))
                    if buf.count and buf.nbytes + size > self.capacity:
                        self._flush(buf)
                    buf.pieces.append([v])
                    buf.count += 1
                    buf.nbytes += size
                continue
            pos = 0
            while pos < n:
                take = min(buf.per_basket - buf.count, n - pos)
                buf.pieces.append(col[pos:pos + take])
                buf.count += take
                pos += take
                if buf.count == buf.per_basket:
                    self._flush(buf)
        self.entries += n
        return n

    def _flush(self, buf: _BranchBuffer) -> None:
        if not buf.count:
            return
        leaf_type = buf.leaf.leaf_type
        if leaf_type.kind == LeafKind.STR:
            values = [v for piece in buf.pieces for v in piece]
        else:
            values = np.concatenate([np.asarray(p) for p in buf.pieces])
        raw = codec.encode_column(values, leaf_type)
        payload, codec_id = codec.compress(raw, self.level)
        self.handle.append_basket(buf.branch_id, buf.first_entry, payload, len(raw),
                                  codec_id, buf.count)
        buf.first_entry += buf.count
        buf.pieces = []
        buf.count = 0
        buf.nbytes = 0

    def close(self) -> None:
        if self._closed:
            return
        for buf in self._buffers:
            self._flush(buf)
        self._closed = True


def create_tree(handle, name, schema, basket_capacity_bytes=DEFAULT_BASKET_CAPACITY,
                level=DEFAULT_LEVEL) -> TreeWriter:
    return TreeWriter(handle, name, schema, basket_capacity_bytes, level)


def _scalar(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


class TreeReader:
    """Column access to one tree of an open container.

    Keeps the most recently decoded basket of each branch, so sequential
    access decompresses every basket exactly once.
    """

    def __init__(self, container, descriptor):
        self.container = container
        self.descriptor = descriptor
        self.name = descriptor.name
        self.schema = Schema.from_branches(descriptor.branches)
        self._branches = {b.name: b for b in descriptor.branches}
        self._starts = {
            b.name: [e.first_entry for e in b.baskets] for b in descriptor.branches
        }
        self._cache: dict = {}

    def get_entries(self) -> int:
        return self.descriptor.n_entries

    def __len__(self):
        return self.descriptor.n_entries

    def _branch(self, name):
        try:
            return self._branches[name]
        except KeyError:
            raise SchemaError(f"tree {self.name!r} has no leaf {name!r}") from None

    def _basket_values(self, name, idx):
        cached = self._cache.get(name)
        if cached is not None and cached[0] == idx:
            return cached[1]
        branch = self._branches[name]
        entry = branch.baskets[idx]
        raw = self.container.read_basket(entry)
        values = codec.decode_column(raw, branch.leaf, entry.n_entries)
        self._cache[name] = (idx, values)
        return values

    def _basket_index(self, name, i):
        return bisect.bisect_right(self._starts[name], i) - 1

    def read_entry(self, i: int) -> tuple:
        n = self.descriptor.n_entries
        if not 0 <= i < n:
            raise IndexError(f"entry {i} out of range for tree {self.name!r} with {n} entries")
        row = []
        for name in self.schema.names:
            idx = self._basket_index(name, i)
            values = self._basket_values(name, idx)
            row.append(_scalar(values[i - self._branches[name].baskets[idx].first_entry]))
        return tuple(row)

    def read_branch(self, name: str, start: int = 0, stop=None):
        """Values of one leaf for entries ``[start, stop)``.

        Numeric leaves come back as a numpy array, strings as a list.
        """
        branch = self._branch(name)
        n = self.descriptor.n_entries
        stop = n if stop is None else min(stop, n)
        start = max(0, start)
        is_str = branch.leaf.kind == LeafKind.STR
        if start >= stop:
            return [] if is_str else np.empty(0, dtype=np.int64 if branch.leaf.kind == LeafKind.I64 else np.float64)
        parts = []
        idx = self._basket_index(name, start)
        while idx < len(branch.baskets) and branch.baskets[idx].first_entry < stop:
            e = branch.baskets[idx]
            values = self._basket_values(name, idx)
            lo = max(start, e.first_entry) - e.first_entry
            hi = min(stop, e.last_entry) - e.first_entry
            parts.append(values[lo:hi])
            idx += 1
        if is_str:
            return [v for p in parts for v in p]
        return np.concatenate(parts)

    def iter_branch(self, name: str) -> Iterator:
        """Yield every value of one leaf in entry order."""
        branch = self._branch(name)
        for idx in range(len(branch.baskets)):
            for v in self._basket_values(name, idx):
                yield _scalar(v)

    def iter_entries(self) -> Iterator[tuple]:
        for i in range(self.descriptor.n_entries):
            yield self.read_entry(i)
