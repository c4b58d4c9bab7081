"""rtio: a columnar event-data container and its tools.

Quick tour::

    from rtio import create_file, open_file, F64, I64

    with create_file("events.rtio") as f:
        t = f.create_tree("t1", [("x", F64), ("n", I64)])
        t.fill((1.5, 3))

    r = open_file("events.rtio")
    tree = r.tree("t1")
    tree.read_entry(0)          # (1.5, 3)
"""

from .codec import (
    F64,
    I64,
    STR,
    CodecStats,
    LeafKind,
    LeafType,
    QuantSpec,
    compress,
    decode_column,
    decompress,
    dequantize,
    encode_column,
    quantize,
    stats,
)
from .entrylist import Block, EntryList
from .errors import (
    BadMagicError,
    BinningMismatchError,
    ChecksumError,
    ClosedHandleError,
    CodecError,
    ExprError,
    ExprSyntaxError,
    ExprTypeError,
    FormatError,
    IncompatibleSchemaError,
    IngestError,
    RtioError,
    ScanFormatError,
    SchemaError,
    ShortReadError,
    StorageError,
    TruncatedFileError,
    UnknownLeafError,
    UnsupportedVersionError,
    UsageError,
)
from .format import (
    BasketIndexEntry,
    ContainerReader,
    ContainerWriter,
    Directory,
    create_file,
    open_file,
)
from .histogram import Histogram1D
from .ingest import parse_leaflist, read_ascii
from .merge import MergePlan, MergeReport, fast_merge, hadd, merge_histograms, slow_merge
from .query import count_entries, parse_expr, scan, select_entries
from .remote import (
    LatencySimAdapter,
    LocalFileAdapter,
    PrefetchCache,
    StorageAdapter,
    cache_open,
    cp,
    open_adapter,
    open_many,
)
from .tree import Leaf, Schema, TreeReader, TreeWriter, create_tree

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "BasketIndexEntry",
    "BinningMismatchError",
    "Block",
    "ChecksumError",
    "ClosedHandleError",
    "CodecError",
    "CodecStats",
    "ContainerReader",
    "ContainerWriter",
    "Directory",
    "EntryList",
    "ExprError",
    "ExprSyntaxError",
    "ExprTypeError",
    "F64",
    "FormatError",
    "Histogram1D",
    "I64",
    "IncompatibleSchemaError",
    "IngestError",
    "LatencySimAdapter",
    "Leaf",
    "LeafKind",
    "LeafType",
    "LocalFileAdapter",
    "MergePlan",
    "MergeReport",
    "PrefetchCache",
    "QuantSpec",
    "RtioError",
    "STR",
    "ScanFormatError",
    "Schema",
    "SchemaError",
    "ShortReadError",
    "StorageAdapter",
    "StorageError",
    "TreeReader",
    "TreeWriter",
    "TruncatedFileError",
    "UnknownLeafError",
    "UnsupportedVersionError",
    "UsageError",
    "cache_open",
    "compress",
    "count_entries",
    "cp",
    "create_file",
    "create_tree",
    "decode_column",
    "decompress",
    "dequantize",
    "encode_column",
    "fast_merge",
    "hadd",
    "merge_histograms",
    "open_adapter",
    "open_file",
    "open_many",
    "parse_expr",
    "parse_leaflist",
    "quantize",
    "read_ascii",
    "scan",
    "select_entries",
    "slow_merge",
    "stats",
]
