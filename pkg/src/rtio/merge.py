"""hadd-style merging of container files.

Trees with the same name are concatenated and histograms with the same name
are added bin by bin. Trees can be merged two ways:

* **fast**: every basket payload is copied byte for byte from the inputs,
  only its ``first_entry`` is shifted. Nothing is inflated or decoded, so
  the cost is essentially I/O. Requires identical schemas.
* **slow**: every basket is decompressed and decoded, and the rows are
  re-encoded at the requested compression level. Works across differing
  quantization settings.

The fast path can also re-cluster baskets physically: ``branch_major``
keeps each branch's baskets together, ``entry_major`` interleaves branches
so that a row-wise read touches neighbouring bytes.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import codec
from .codec import LeafKind
from .errors import IncompatibleSchemaError, UsageError
from .format import create_file
from .histogram import Histogram1D
from .remote import open_many
from .tree import DEFAULT_BASKET_CAPACITY, Schema

LAYOUTS = ("branch_major", "entry_major")
MODES = ("fast", "slow", "auto")
KINDS = ("all", "trees", "hists")
SLOW_CHUNK = 65536


@dataclass
class MergePlan:
    inputs: list
    mode: str = "fast"
    level: int = 6
    layout: str = "branch_major"

    def __post_init__(self):
        if not self.inputs:
            raise UsageError("merging needs at least one input")
        if self.mode not in MODES:
            raise UsageError(f"unknown merge mode {self.mode!r}")
        if self.layout not in LAYOUTS:
            raise UsageError(f"unknown layout {self.layout!r}, expected one of {LAYOUTS}")
        if not 0 <= self.level <= 9:
            raise UsageError(f"compression level must be 0-9, got {self.level}")


@dataclass
class ObjectReport:
    name: str
    kind: str
    mode: str
    n_inputs: int
    entries: int = 0
    baskets_in: int = 0
    baskets_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


@dataclass
class MergeReport:
    output: str
    objects: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    decompress_calls: int = 0
    compress_calls: int = 0
    elapsed: float = 0.0

    def object(self, name: str) -> ObjectReport:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def lines(self) -> list:
        """Deterministic, line-oriented summary (timing excluded)."""
        out = [f"output {self.output}"]
        for o in self.objects:
            if o.kind == "tree":
                out.append(
                    f"tree {o.name} mode={o.mode} inputs={o.n_inputs} entries={o.entries} "
                    f"baskets={o.baskets_in}->{o.baskets_out} bytes={o.bytes_in}->{o.bytes_out}")
            else:
                out.append(f"hist {o.name} mode={o.mode} inputs={o.n_inputs} entries={o.entries:g}")
        for w in self.warnings:
            out.append(f"warning: {w}")
        out.append(f"decompressions {self.decompress_calls}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("elapsed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# compatibility -------------------------------------------------------------


def check_fast_compatible(name: str, descriptors) -> None:
    """Raise unless every descriptor has exactly the first one's branches."""
    ref = descriptors[0]
    for d in descriptors[1:]:
        for a, b in zip(ref.branches, d.branches):
            if a.name != b.name:
                raise IncompatibleSchemaError(
                    f"tree {name!r}: branch {a.name!r} does not match branch {b.name!r}")
            if a.leaf != b.leaf:
                raise IncompatibleSchemaError(
                    f"tree {name!r}: branch {a.name!r} has type {a.leaf} vs {b.leaf}")
        if len(ref.branches) != len(d.branches):
            longer = ref if len(ref.branches) > len(d.branches) else d
            extra = longer.branches[min(len(ref.branches), len(d.branches))]
            raise IncompatibleSchemaError(f"tree {name!r}: branch {extra.name!r} missing in some inputs")


def _slow_kind(leaf):
    return "float" if leaf.kind in (LeafKind.F64, LeafKind.QF64) else leaf.kind.name


def check_slow_compatible(name: str, descriptors) -> None:
    ref = descriptors[0]
    for d in descriptors[1:]:
        if [b.name for b in ref.branches] != [b.name for b in d.branches]:
            raise IncompatibleSchemaError(
                f"tree {name!r}: branch lists differ: {[b.name for b in ref.branches]} "
                f"vs {[b.name for b in d.branches]}")
        for a, b in zip(ref.branches, d.branches):
            if _slow_kind(a.leaf) != _slow_kind(b.leaf):
                raise IncompatibleSchemaError(
                    f"tree {name!r}: branch {a.name!r} has incompatible types {a.leaf} and {b.leaf}")


# trees ---------------------------------------------------------------------


def _fast_tree(out, name, sources, layout) -> ObjectReport:
    """Copy raw baskets of one tree from every source into ``out``."""
    descs = [d for _, d in sources]
    tree = out.register_tree(name, [(b.name, b.leaf) for b in descs[0].branches])
    report = ObjectReport(name, "tree", "fast", len(sources))
    jobs = []
    base = 0
    for reader, desc in sources:
        for bi, branch in enumerate(desc.branches):
            for e in branch.baskets:
                jobs.append((bi, base + e.first_entry, reader, e))
        base += desc.n_entries
    if layout == "branch_major":
        jobs.sort(key=lambda j: (j[0], j[1]))
    else:
        jobs.sort(key=lambda j: (j[1], j[0]))
    for bi, first, reader, e in jobs:
        payload = reader.read_basket_raw(e)
        out.append_basket(tree.branches[bi].branch_id, first, payload, e.raw_length,
                          e.codec_id, e.n_entries)
        report.bytes_in += e.compressed_length
        report.bytes_out += len(payload)
    report.entries = base
    report.baskets_in = report.baskets_out = len(jobs)
    return report


def _slow_tree(out, name, sources, level, capacity) -> ObjectReport:
    """Decode every row of one tree and re-encode it into ``out``."""
    descs = [d for _, d in sources]
    schema = Schema.from_branches(descs[0].branches)
    writer = out.create_tree(name, schema, capacity, level)
    report = ObjectReport(name, "tree", "slow", len(sources))
    for reader, desc in sources:
        tr = reader.tree(desc.name)
        n = tr.get_entries()
        for start in range(0, n, SLOW_CHUNK):
            stop = min(n, start + SLOW_CHUNK)
            writer.fill_columns([tr.read_branch(b, start, stop) for b in schema.names])
        report.baskets_in += sum(len(b.baskets) for b in desc.branches)
        report.bytes_in += sum(e.compressed_length for b in desc.branches for e in b.baskets)
    writer.close()
    branches = out.directory.tree(name).branches
    report.baskets_out = sum(len(b.baskets) for b in branches)
    report.bytes_out = sum(e.compressed_length for b in branches for e in b.baskets)
    report.entries = writer.entries
    return report


def merge_histograms(hists) -> Histogram1D:
    """Bin-wise sum, including underflow and overflow."""
    hists = list(hists)
    if not hists:
        raise UsageError("no histograms to merge")
    first = hists[0]
    total = list(first.counts)
    for h in hists[1:]:
        first.check_compatible(h)
        total = [a + b for a, b in zip(total, h.counts)]
    return Histogram1D(first.name, first.n_bins, first.lo, first.hi, total)


# driver ------------------------------------------------------------------------


def _collect(readers, only):
    """Ordered ``name -> (kind, [(reader, descriptor-or-hist)])``."""
    objects: dict = {}
    for reader in readers:
        d = reader.directory
        items = []
        if only in ("all", "trees"):
            items += [("tree", t.name, t) for t in d.trees]
        if only in ("all", "hists"):
            items += [("hist", h.name, h) for h in d.histograms]
        all_names = [t.name for t in d.trees] + [h.name for h in d.histograms]
        if len(set(all_names)) != len(all_names):
            raise UsageError("an input uses one name for both a tree and a histogram")
        for kind, name, obj in items:
            prev = objects.get(name)
            if prev is None:
                objects[name] = (kind, [(reader, obj)])
            elif prev[0] != kind:
                raise UsageError(f"object {name!r} is a {prev[0]} in one input and a {kind} in another")
            else:
                prev[1].append((reader, obj))
    return objects


def hadd(inputs, output, force_overwrite: bool = False, fast=False, level: Optional[int] = None,
         layout: str = "branch_major", only: str = "all",
         basket_capacity: int = DEFAULT_BASKET_CAPACITY) -> MergeReport:
    """Merge ``inputs`` (paths or locators) into a new file ``output``.

    ``fast`` is False, True or ``"auto"``; with True an incompatible tree is
    an error, with ``"auto"`` it falls back to the slow path. A compression
    ``level`` only applies to slow merges.
    """
    mode = "auto" if fast == "auto" else ("fast" if fast else "slow")
    if only not in KINDS:
        raise UsageError(f"--only must be one of {KINDS}, got {only!r}")
    plan = MergePlan(list(inputs), mode, 6 if level is None else level, layout)
    return _run(plan, output, force_overwrite, only, level_given=level is not None,
                basket_capacity=basket_capacity)


def fast_merge(plan: MergePlan, output, overwrite: bool = False) -> MergeReport:
    """Merge by raw basket copy; never decompresses a basket."""
    if plan.mode != "fast":
        raise UsageError("fast_merge needs a plan with mode='fast'")
    return _run(plan, output, overwrite, "all", level_given=False)


def slow_merge(plan: MergePlan, output, overwrite: bool = False) -> MergeReport:
    """Merge by decoding and re-encoding every row at ``plan.level``."""
    return _run(MergePlan(plan.inputs, "slow", plan.level, plan.layout), output, overwrite, "all",
                level_given=True)


def _run(plan, output, overwrite, only, level_given, basket_capacity=DEFAULT_BASKET_CAPACITY):
    if os.path.exists(output) and not overwrite:
        raise FileExistsError(f"{output} exists (use force_overwrite)")
    t0 = time.perf_counter()
    before = codec.stats.snapshot()
    report = MergeReport(str(output))
    if plan.mode != "slow" and level_given:
        report.warnings.append(f"compression level {plan.level} ignored for fast-merged trees")
    readers = []
    try:
        for h in open_many(plan.inputs):
            readers.append(h.resolve())
        objects = _collect(readers, only)
        if any(r.directory.entry_lists for r in readers):
            report.warnings.append("entry lists are not merged")
        out = create_file(output, overwrite=overwrite)
        try:
            for name, (kind, sources) in objects.items():
                if kind == "hist":
                    h = merge_histograms(obj for _, obj in sources)
                    out.add_histogram(h)
                    report.objects.append(ObjectReport(name, "hist", "sum", len(sources),
                                                       entries=h.entries))
                    continue
                descs = [d for _, d in sources]
                use_fast = plan.mode in ("fast", "auto")
                if use_fast:
                    try:
                        check_fast_compatible(name, descs)
                    except IncompatibleSchemaError as exc:
                        if plan.mode == "fast":
                            raise
                        report.warnings.append(f"{exc}; using slow merge")
                        use_fast = False
                if use_fast:
                    report.objects.append(_fast_tree(out, name, sources, plan.layout))
                else:
                    check_slow_compatible(name, descs)
                    report.objects.append(_slow_tree(out, name, sources, plan.level, basket_capacity))
            out.finalize()
        except BaseException:
            if not out.closed:
                out.__exit__(RuntimeError, None, None)
            try:
                os.remove(output)
            except OSError:
                pass
            raise
    finally:
        for r in readers:
            r.close()
    delta = codec.stats.delta(before)
    report.decompress_calls = delta["decompress_calls"]
    report.compress_calls = delta["compress_calls"]
    report.elapsed = time.perf_counter() - t0
    return report
