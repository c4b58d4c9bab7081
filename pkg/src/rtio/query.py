"""Selection expressions, entry counting, entry-list building and scanning.

Expressions use C-like syntax over leaf names::

    x > 0 && (tag == "mu" || n / 2 >= 3)

Evaluation is vectorized over column chunks and total: integer division by
zero gives inf or NaN as in IEEE-754, comparisons with NaN are false, and a
value selects an entry when it is nonzero and not NaN. Integer arithmetic
is 64-bit and wraps on overflow.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codec import LeafKind
from .entrylist import EntryList
from .errors import ExprSyntaxError, ExprTypeError, ScanFormatError, UnknownLeafError

CHUNK_ENTRIES = 64000

INT, FLOAT, BOOL, STRT = "int", "float", "bool", "str"
_LEAF_TYPES = {LeafKind.F64: FLOAT, LeafKind.QF64: FLOAT, LeafKind.I64: INT, LeafKind.STR: STRT}

_TOKENS = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<str>"[^"]*"|'[^']*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||==|!=|<=|>=|[-+*/<>!()])
    """,
    re.VERBOSE,
)

_BINARY_POWER = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
}
_UNARY_POWER = 7


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKENS.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        if m.lastgroup != "ws":
            tokens.append(Token(m.lastgroup, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text, i):
    return len(text[:i].encode("utf-8"))


# AST -----------------------------------------------------------------------


class Expr:
    type: str

    def leaves(self) -> set:
        return set()

    def evaluate(self, columns: dict, n: int):
        raise NotImplementedError


@dataclass
class Literal(Expr):
    value: object
    type: str

    def evaluate(self, columns, n):
        if self.type == STRT:
            out = np.empty(n, dtype=object)
            out[:] = self.value
            return out
        return np.full(n, self.value, dtype=np.float64 if self.type == FLOAT else np.int64)


@dataclass
class LeafRef(Expr):
    name: str
    index: int
    type: str

    def leaves(self):
        return {self.name}

    def evaluate(self, columns, n):
        col = columns[self.name]
        if self.type == STRT and not isinstance(col, np.ndarray):
            arr = np.empty(len(col), dtype=object)
            arr[:] = col
            return arr
        return col


@dataclass
class Unary(Expr):
    op: str
    operand: Expr
    type: str

    def leaves(self):
        return self.operand.leaves()

    def evaluate(self, columns, n):
        v = self.operand.evaluate(columns, n)
        if self.op == "!":
            return ~truthy(v)
        with np.errstate(all="ignore"):
            return -_numeric(v)


@dataclass
class Binary(Expr):
    op: str
    left: Expr
    right: Expr
    type: str

    def leaves(self):
        return self.left.leaves() | self.right.leaves()

    def evaluate(self, columns, n):
        a = self.left.evaluate(columns, n)
        b = self.right.evaluate(columns, n)
        op = self.op
        if op == "&&":
            return truthy(a) & truthy(b)
        if op == "||":
            return truthy(a) | truthy(b)
        if op in ("==", "!=") and self.left.type == STRT:
            eq = np.fromiter((x == y for x, y in zip(a, b)), dtype=bool, count=len(a))
            return eq if op == "==" else ~eq
        a, b = _numeric(a), _numeric(b)
        with np.errstate(all="ignore"):
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return np.true_divide(a, b, dtype=np.float64)
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            if op == ">=":
                return a >= b
            if op == "==":
                return a == b
            return a != b


def _numeric(v):
    v = np.asarray(v)
    if v.dtype == bool:
        return v.astype(np.int64)
    return v


def truthy(v) -> np.ndarray:
    """Selection truth: nonzero and not NaN."""
    v = np.asarray(v)
    if v.dtype == bool:
        return v
    if v.dtype.kind == "f":
        return (v != 0) & ~np.isnan(v)
    return v != 0


# parsing -------------------------------------------------------------------


class _Parser:
    def __init__(self, text, schema):
        self.text = text
        self.schema = schema
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return e

    def expr(self, min_power: int) -> Expr:
        left = self.prefix()
        while True:
            tok = self.peek()
            power = _BINARY_POWER.get(tok.text) if tok.kind == "op" else None
            if power is None or power <= min_power:
                return left
            self.next()
            right = self.expr(power)
            left = _binary(tok, left, right)

    def prefix(self) -> Expr:
        tok = self.next()
        if tok.kind == "int":
            value = int(tok.text)
            if value >= 1 << 63:
                raise ExprSyntaxError(f"integer literal {tok.text} does not fit in 64 bits", tok.offset)
            return Literal(value, INT)
        if tok.kind == "float":
            return Literal(float(tok.text), FLOAT)
        if tok.kind == "str":
            return Literal(tok.text[1:-1], STRT)
        if tok.kind == "name":
            if self.schema is None:
                raise UnknownLeafError(f"unknown leaf {tok.text!r}")
            names = self.schema.names
            if tok.text not in names:
                raise UnknownLeafError(f"unknown leaf {tok.text!r} at offset {tok.offset}")
            idx = names.index(tok.text)
            return LeafRef(tok.text, idx, _LEAF_TYPES[self.schema[idx].leaf_type.kind])
        if tok.kind == "op" and tok.text in ("-", "!"):
            operand = self.expr(_UNARY_POWER)
            if operand.type == STRT:
                raise ExprTypeError(f"operator {tok.text!r} at offset {tok.offset} needs a number")
            if tok.text == "!":
                return Unary("!", operand, BOOL)
            return Unary("-", operand, FLOAT if operand.type == FLOAT else INT)
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr(0)
            close = self.next()
            if close.text != ")":
                raise ExprSyntaxError("expected ')'", close.offset)
            return inner
        what = "end of expression" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.offset)


def _binary(tok: Token, left: Expr, right: Expr) -> Expr:
    op = tok.text
    lt, rt = left.type, right.type
    if op in ("==", "!="):
        if (lt == STRT) != (rt == STRT):
            raise ExprTypeError(f"cannot compare string with number at offset {tok.offset}")
        return Binary(op, left, right, BOOL)
    if STRT in (lt, rt):
        raise ExprTypeError(f"operator {op!r} at offset {tok.offset} cannot take strings")
    if op in ("&&", "||", "<", "<=", ">", ">="):
        return Binary(op, left, right, BOOL)
    if op == "/":
        return Binary(op, left, right, FLOAT)
    return Binary(op, left, right, FLOAT if FLOAT in (lt, rt) else INT)


def parse_expr(text: str, schema=None) -> Expr:
    """Parse ``text`` and bind leaf names against ``schema``."""
    return _Parser(text, schema).parse()


def _parse_selection(text, schema) -> Optional[Expr]:
    if text is None or not text.strip():
        return None
    expr = parse_expr(text, schema)
    if expr.type == STRT:
        raise ExprTypeError("a selection must be numeric or boolean, not a string")
    return expr


# evaluation over trees ---------------------------------------------------------


def _chunks(reader, exprs, chunk=CHUNK_ENTRIES):
    names = set()
    for e in exprs:
        if e is not None:
            names |= e.leaves()
    n = reader.get_entries()
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        cols = {name: reader.read_branch(name, start, stop) for name in names}
        yield start, stop, cols


def _mask(expr, cols, n):
    if expr is None:
        return np.ones(n, dtype=bool)
    return truthy(expr.evaluate(cols, n))


def count_entries(reader, selection: str = "") -> int:
    """Number of entries for which ``selection`` is true."""
    expr = _parse_selection(selection, reader.schema)
    if expr is None:
        return reader.get_entries()
    total = 0
    for start, stop, cols in _chunks(reader, [expr]):
        total += int(np.count_nonzero(_mask(expr, cols, stop - start)))
    return total


def select_entries(reader, selection: str = "") -> EntryList:
    """Entry numbers passing ``selection``, as an :class:`EntryList`."""
    expr = _parse_selection(selection, reader.schema)
    out = EntryList()
    for start, stop, cols in _chunks(reader, [expr]):
        out.update(np.flatnonzero(_mask(expr, cols, stop - start)) + start)
    return out


# scanning -------------------------------------------------------------------

DEFAULT_WIDTH = 10
DEFAULT_PRECISION = 6

_FORMAT_TOKEN = re.compile(r"^(?P<width>\d+)?(?:\.(?P<prec>\d+))?(?P<style>#x|c)?$")


@dataclass(frozen=True)
class ColumnFormat:
    width: int = DEFAULT_WIDTH
    precision: Optional[int] = None
    style: str = "default"


def parse_scan_format(spec: Optional[str], n_columns: int) -> list:
    """Parse ``"col=fmt1:fmt2:..."`` into one :class:`ColumnFormat` per column.

    Each token is ``[width][.precision][#x|c]``; an empty token keeps the
    defaults (width 10, 6 significant digits for floats).
    """
    formats = [ColumnFormat()] * n_columns
    if spec is None or not spec.strip():
        return formats
    spec = spec.strip()
    if not spec.startswith("col="):
        raise ScanFormatError(f"scan format must start with 'col=': {spec!r}")
    tokens = spec[4:].split(":")
    if len(tokens) > n_columns:
        raise ScanFormatError(f"format has {len(tokens)} column tokens for {n_columns} columns")
    for i, tok in enumerate(tokens):
        m = _FORMAT_TOKEN.match(tok.strip())
        if m is None:
            raise ScanFormatError(f"bad column format token {tok!r}")
        formats[i] = ColumnFormat(
            width=int(m["width"]) if m["width"] else DEFAULT_WIDTH,
            precision=int(m["prec"]) if m["prec"] is not None else None,
            style={"#x": "hex", "c": "char"}.get(m["style"], "default"),
        )
    return formats


def format_value(v, typ: str, fmt: ColumnFormat) -> str:
    if fmt.style == "hex":
        return format(int(v), "#x")
    if fmt.style == "char":
        code = int(v)
        return chr(code) if 0 <= code <= 0x10FFFF else "\ufffd"
    if typ == STRT:
        return v if fmt.precision is None else v[:fmt.precision]
    if typ in (INT, BOOL):
        return str(int(v))
    prec = DEFAULT_PRECISION if fmt.precision is None else fmt.precision
    return f"{float(v):.{prec}g}"


def scan(reader, columns: str, selection: str = "", format: Optional[str] = None,
         sink=None) -> int:
    """Print a bordered table of expressions for entries passing ``selection``.

    Returns the number of rows printed.
    """
    sink = sys.stdout if sink is None else sink
    texts = [c.strip() for c in columns.split(":")]
    exprs = [parse_expr(t, reader.schema) for t in texts]
    fmts = parse_scan_format(format, len(exprs))
    for e, f, t in zip(exprs, fmts, texts):
        if f.style != "default" and e.type not in (INT, BOOL):
            raise ScanFormatError(f"style {f.style!r} needs an integer column, {t!r} is {e.type}")
    sel = _parse_selection(selection, reader.schema)

    def line(cells):
        return "*" + "*".join(cells) + "*\n"

    header = line([f"{'Row':^9}"] + [f" {t[:f.width]:>{f.width}} " for t, f in zip(texts, fmts)])
    rule = "*" * (len(header) - 1) + "\n"
    sink.write(rule)
    sink.write(header)
    sink.write(rule)
    printed = 0
    for start, stop, cols in _chunks(reader, exprs + [sel]):
        n = stop - start
        keep = np.flatnonzero(_mask(sel, cols, n))
        if not keep.size:
            continue
        values = [e.evaluate(cols, n) for e in exprs]
        for j in keep:
            cells = [f"{start + j:>8} "]
            for v, e, f in zip(values, exprs, fmts):
                cells.append(f" {format_value(v[j], e.type, f):>{f.width}} ")
            sink.write(line(cells))
            printed += 1
    sink.write(rule)
    sink.write(f"==> {printed} selected entries\n")
    return printed
