"""``rtio`` command line: hadd, ingest, scan, count, inspect, cp, elist.

Exit status is 0 on success, 1 for usage errors and 2 for I/O or data
errors. Diagnostics go to stderr prefixed with ``error:``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import codec, query
from .entrylist import EntryList
from .errors import (
    CodecError,
    FormatError,
    IngestError,
    StorageError,
    UsageError,
)
from .format import create_file, open_file
from .ingest import read_ascii
from .merge import hadd
from .remote import cache_fetch, cp, open_adapter

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(f"{self.prog}: {message}")


def _open(locator):
    return open_file(open_adapter(locator))


# subcommands ---------------------------------------------------------------


def cmd_hadd(args, out, err):
    fast = {None: False, "on": True, "auto": "auto"}[args.fast]
    layout = {"branch": "branch_major", "entry": "entry_major"}[args.layout]
    report = hadd(args.inputs, args.output, force_overwrite=args.force, fast=fast,
                  level=args.level, layout=layout, only=args.only)
    if args.json:
        out.write(report.to_json() + "\n")
    else:
        for line in report.lines():
            out.write(line + "\n")
    for w in report.warnings:
        err.write(f"warning: {w}\n")
    err.write(f"merged {len(args.inputs)} file(s) in {report.elapsed:.3f} s\n")
    return EXIT_OK


def cmd_ingest(args, out, err):
    if os.path.exists(args.output) and not args.force:
        raise UsageError(f"{args.output} exists (use -f to overwrite)")
    handle = create_file(args.output, overwrite=args.force)
    try:
        n = read_ascii(args.input, args.leaflist, args.tree, handle)
        handle.finalize()
    except BaseException:
        if not handle.closed:
            handle.__exit__(RuntimeError, None, None)
        os.remove(args.output)
        raise
    out.write(f"{n} entries ingested into {args.output}:{args.tree}\n")
    return EXIT_OK


def cmd_scan(args, out, err):
    with _open(args.file) as r:
        tree = r.tree(args.tree)
        if args.output:
            with open(args.output, "w", encoding="utf-8") as sink:
                query.scan(tree, args.cols, args.sel or "", args.format, sink)
        else:
            query.scan(tree, args.cols, args.sel or "", args.format, out)
    return EXIT_OK


def cmd_count(args, out, err):
    with _open(args.file) as r:
        out.write(f"{query.count_entries(r.tree(args.tree), args.sel)}\n")
    return EXIT_OK


def _inspect_dict(r):
    trees = []
    for t in r.directory.trees:
        branches = []
        for b in t.branches:
            branches.append({
                "name": b.name,
                "type": str(b.leaf),
                "baskets": [
                    {
                        "offset": e.file_offset,
                        "first_entry": e.first_entry,
                        "n_entries": e.n_entries,
                        "raw_length": e.raw_length,
                        "compressed_length": e.compressed_length,
                        "codec": e.codec_id,
                        "checksum": f"{e.checksum:08x}",
                    }
                    for e in b.baskets
                ],
            })
        trees.append({"name": t.name, "entries": t.n_entries, "branches": branches})
    return {
        "format_version": r.header.version,
        "footer_offset": r.header.footer_offset,
        "footer_length": r.header.footer_length,
        "trees": trees,
        "histograms": [
            {"name": h.name, "n_bins": h.n_bins, "lo": h.lo, "hi": h.hi, "counts": h.counts}
            for h in r.directory.histograms
        ],
        "entry_lists": [
            {"name": e.name, "entries": len(EntryList.deserialize(e.data)), "bytes": len(e.data)}
            for e in r.directory.entry_lists
        ],
    }


def cmd_inspect(args, out, err):
    with _open(args.file) as r:
        info = _inspect_dict(r)
    if args.json:
        out.write(json.dumps(info, indent=2) + "\n")
        return EXIT_OK
    out.write(f"file {args.file} version {info['format_version']} "
              f"footer at {info['footer_offset']} ({info['footer_length']} bytes)\n")
    for t in info["trees"]:
        out.write(f"tree {t['name']} entries={t['entries']} branches={len(t['branches'])}\n")
        out.write(f"  {'branch':<12} {'type':<20} {'#':>4} {'offset':>10} {'first':>10} "
                  f"{'n':>8} {'raw':>9} {'zipped':>9} {'ratio':>6} codec\n")
        for b in t["branches"]:
            for i, e in enumerate(b["baskets"]):
                ratio = e["raw_length"] / e["compressed_length"]
                codec_name = "deflate" if e["codec"] == codec.DEFLATE else "store"
                out.write(f"  {b['name']:<12} {b['type']:<20} {i:>4} {e['offset']:>10} "
                          f"{e['first_entry']:>10} {e['n_entries']:>8} {e['raw_length']:>9} "
                          f"{e['compressed_length']:>9} {ratio:>6.2f} {codec_name}\n")
    for h in info["histograms"]:
        out.write(f"hist {h['name']} bins={h['n_bins']} range=[{h['lo']:g}, {h['hi']:g}) "
                  f"entries={sum(h['counts']):g}\n")
    for e in info["entry_lists"]:
        out.write(f"elist {e['name']} entries={e['entries']} bytes={e['bytes']}\n")
    return EXIT_OK


def cmd_cp(args, out, err):
    t0 = time.perf_counter()
    if args.cache:
        src = cache_fetch(args.source, args.cache)
        n = cp(src, args.destination)
    else:
        n = cp(args.source, args.destination)
    out.write(f"{n} bytes copied to {args.destination}\n")
    err.write(f"copy took {time.perf_counter() - t0:.3f} s\n")
    return EXIT_OK


def _write_elists(path, named, force):
    if os.path.exists(path) and not force:
        raise UsageError(f"{path} exists (use -f to overwrite)")
    with create_file(path, overwrite=force) as w:
        for name, el in named:
            w.add_entry_list(name, el)


def _load_elist(path, name):
    with _open(path) as r:
        records = r.directory.entry_lists
        if name is None:
            if len(records) != 1:
                raise UsageError(f"{path} holds {len(records)} entry lists; pick one with --name")
            name = records[0].name
        return r.entry_list(name)


def cmd_elist(args, out, err):
    if args.action == "build":
        with _open(args.file) as r:
            el = query.select_entries(r.tree(args.tree), args.sel)
        _write_elists(args.output, [(args.name, el)], args.force)
        out.write(f"{len(el)} entries selected into {args.output}:{args.name}\n")
    elif args.action == "union":
        total = EntryList()
        for path in args.inputs:
            total = total.union(_load_elist(path, args.name))
        _write_elists(args.output, [(args.name or "elist", total)], args.force)
        out.write(f"{len(total)} entries in union\n")
    elif args.action == "split":
        try:
            bounds = [int(b) for b in args.at.split(",") if b.strip()]
        except ValueError:
            raise UsageError(f"--at takes comma-separated integers, got {args.at!r}") from None
        parts = _load_elist(args.input, args.name).split(bounds)
        for i, part in enumerate(parts):
            path = f"{args.prefix}.{i}.rtio"
            _write_elists(path, [(args.name or "elist", part)], args.force)
            out.write(f"{path} {len(part)}\n")
    else:
        with _open(args.file) as r:
            for rec in r.directory.entry_lists:
                el = EntryList.deserialize(rec.data)
                out.write(f"elist {rec.name} entries={len(el)} blocks={sum(1 for _ in el.blocks())}\n")
                for k, b in el.blocks():
                    form = "bitmap" if b.is_bitmap else "array"
                    out.write(f"  block {k} {form} count={len(b)} payload={b.payload_bytes}\n")
    return EXIT_OK


# parser ----------------------------------------------------------------------


def _level(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level {text!r}") from None
    if not 0 <= v <= 9:
        raise argparse.ArgumentTypeError("level must be between 0 and 9")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtio", description="Columnar event-data file tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    h = sub.add_parser("hadd", help="merge trees and histograms from several files")
    h.add_argument("-f", dest="force", action="store_true", help="overwrite OUT")
    h.add_argument("--fast", dest="fast", action="store_const", const="on",
                   help="copy baskets without decompressing; --fast=auto falls back when incompatible")
    h.add_argument("--fast-auto", dest="fast", action="store_const", const="auto",
                   help=argparse.SUPPRESS)
    h.add_argument("-z", dest="level", type=_level, help="compression level 0-9 for re-encoded trees")
    h.add_argument("--layout", choices=["branch", "entry"], default="branch",
                   help="physical basket order for fast merges")
    h.add_argument("--only", choices=["trees", "hists", "all"], default="all")
    h.add_argument("--json", action="store_true", help="print the report as JSON")
    h.add_argument("output", metavar="OUT")
    h.add_argument("inputs", metavar="IN", nargs="+")
    h.set_defaults(func=cmd_hadd)

    i = sub.add_parser("ingest", help="create a tree from a whitespace-delimited ASCII file")
    i.add_argument("--leaflist", required=True, help='e.g. "x:y:z" or "n/L:tag/C:e/D[0,1,12]"')
    i.add_argument("--tree", default="t1")
    i.add_argument("-f", dest="force", action="store_true")
    i.add_argument("output", metavar="OUT")
    i.add_argument("input", metavar="IN")
    i.set_defaults(func=cmd_ingest)

    s = sub.add_parser("scan", help="print selected entries as a table")
    s.add_argument("file", metavar="FILE")
    s.add_argument("tree", metavar="TREE")
    s.add_argument("--cols", required=True, help='colon-separated expressions')
    s.add_argument("--sel", default="")
    s.add_argument("--format", help='e.g. "col=::#x:c:"')
    s.add_argument("-o", dest="output", help="write the table to a file")
    s.set_defaults(func=cmd_scan)

    c = sub.add_parser("count", help="count entries passing a selection")
    c.add_argument("file", metavar="FILE")
    c.add_argument("tree", metavar="TREE")
    c.add_argument("--sel", required=True)
    c.set_defaults(func=cmd_count)

    n = sub.add_parser("inspect", help="show the directory and basket layout")
    n.add_argument("file", metavar="FILE")
    n.add_argument("--json", action="store_true")
    n.set_defaults(func=cmd_inspect)

    k = sub.add_parser("cp", help="copy any file, optionally through the local cache")
    k.add_argument("source", metavar="SRC")
    k.add_argument("destination", metavar="DST")
    k.add_argument("--cache", metavar="DIR")
    k.set_defaults(func=cmd_cp)

    e = sub.add_parser("elist", help="build and combine entry lists")
    esub = e.add_subparsers(dest="action", required=True, parser_class=_Parser)
    eb = esub.add_parser("build")
    eb.add_argument("file", metavar="FILE")
    eb.add_argument("tree", metavar="TREE")
    eb.add_argument("--sel", required=True)
    eb.add_argument("-o", dest="output", required=True)
    eb.add_argument("--name", default="elist")
    eb.add_argument("-f", dest="force", action="store_true")
    eu = esub.add_parser("union")
    eu.add_argument("inputs", metavar="IN", nargs="+")
    eu.add_argument("-o", dest="output", required=True)
    eu.add_argument("--name")
    eu.add_argument("-f", dest="force", action="store_true")
    es = esub.add_parser("split")
    es.add_argument("input", metavar="IN")
    es.add_argument("--at", required=True, help="comma-separated ascending entry numbers")
    es.add_argument("-o", dest="prefix", required=True, help="output prefix")
    es.add_argument("--name")
    es.add_argument("-f", dest="force", action="store_true")
    ei = esub.add_parser("info")
    ei.add_argument("file", metavar="FILE")
    e.set_defaults(func=cmd_elist)
    return p


def _normalize(argv):
    # a bare --fast must not swallow the next positional, so the
    # auto form is spelled --fast=auto and rewritten here
    out = []
    for a in argv:
        if a.startswith("--fast="):
            value = a.partition("=")[2]
            if value not in ("on", "auto"):
                raise _ArgumentError(f"rtio hadd: --fast takes 'auto' or 'on', got {value!r}")
            a = "--fast-auto" if value == "auto" else "--fast"
        out.append(a)
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    out = sys.stdout if stdout is None else stdout
    err = sys.stderr if stderr is None else stderr
    try:
        argv = _normalize(sys.argv[1:] if argv is None else list(argv))
        args = build_parser().parse_args(argv)
        return args.func(args, out, err)
    except _ArgumentError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (UsageError, FileExistsError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (FormatError, CodecError, StorageError, IngestError, OSError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_DATA


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
