"""Build trees from whitespace-delimited ASCII files.

The column layout is given as a leaflist such as ``"x:y:z"``. Each token is
``name`` optionally followed by ``/T`` where ``T`` is ``D`` (double, the
default), ``L`` (64-bit integer) or ``C`` (string). As an rtio extension a
double may carry a quantization annotation, ``name/D[min,max,nbits]``,
which stores the column as ``nbits``-bit integers over ``[min, max]``.
"""

from __future__ import annotations

import math
import re

from .codec import F64, I64, STR, LeafType
from .errors import CodecError, IngestError, SchemaError
from .tree import Leaf, Schema

_TOKEN = re.compile(
    r"""^(?P<name>[A-Za-z_][A-Za-z0-9_]*)
        (?:/(?P<code>[A-Za-z])
           (?:\[(?P<quant>[^\]]*)\])?
        )?$""",
    re.VERBOSE,
)
_CODES = {"D": F64, "L": I64, "C": STR}


def parse_leaflist(text: str) -> Schema:
    if not text or not text.strip():
        raise SchemaError("leaflist is empty")
    leaves = []
    for tok in text.strip().split(":"):
        m = _TOKEN.match(tok.strip())
        if m is None:
            raise SchemaError(f"malformed leaflist token {tok!r}")
        code = m["code"] or "D"
        if code not in _CODES:
            raise SchemaError(f"unknown type code {code!r} in {tok!r}")
        leaf_type = _CODES[code]
        if m["quant"] is not None:
            if code != "D":
                raise SchemaError(f"quantization only applies to /D leaves: {tok!r}")
            parts = m["quant"].split(",")
            if len(parts) != 3:
                raise SchemaError(f"quantization needs [min,max,nbits]: {tok!r}")
            try:
                lo, hi, nbits = float(parts[0]), float(parts[1]), int(parts[2])
                leaf_type = LeafType.quantized(lo, hi, nbits)
            except (ValueError, CodecError) as exc:
                raise SchemaError(f"bad quantization in {tok!r}: {exc}") from None
        leaves.append(Leaf(m["name"], leaf_type))
    return Schema(leaves)


def _convert(field: str, leaf: Leaf, lineno: int):
    kind = leaf.leaf_type.kind.name
    try:
        if kind == "STR":
            return field
        if kind == "I64":
            return int(field)
        v = float(field)
    except ValueError:
        raise IngestError(f"cannot parse {field!r} for leaf {leaf.name!r}", lineno) from None
    if kind == "QF64" and not math.isfinite(v):
        raise IngestError(f"leaf {leaf.name!r} is quantized and cannot store {field!r}", lineno)
    return v


def iter_rows(lines, schema: Schema):
    """Yield ``(line_number, row)`` for each data line."""
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != len(schema):
            raise IngestError(f"expected {len(schema)} fields, got {len(fields)}", lineno)
        yield lineno, tuple(_convert(f, leaf, lineno) for f, leaf in zip(fields, schema))


def read_ascii(path, leaflist, tree_name: str, handle, basket_capacity_bytes=16384,
               level=6) -> int:
    """Ingest an ASCII file into a new tree of an open container writer.

    Returns the number of rows ingested.
    """
    schema = leaflist if isinstance(leaflist, Schema) else parse_leaflist(leaflist)
    writer = handle.create_tree(tree_name, schema, basket_capacity_bytes, level)
    with open(path, encoding="utf-8") as fh:
        for lineno, row in iter_rows(fh, schema):
            try:
                writer.fill(row)
            except (SchemaError, CodecError) as exc:
                raise IngestError(str(exc), lineno) from None
    return writer.entries
