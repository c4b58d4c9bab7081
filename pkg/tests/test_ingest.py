import io
import random

import pytest

from rtio import F64, I64, STR, LeafType, create_file, open_file
from rtio.errors import IngestError, SchemaError
from rtio.ingest import parse_leaflist, read_ascii
from rtio.query import count_entries, scan


def ingest(tmp_path, text, leaflist, name="t"):
    src = tmp_path / "in.dat"
    src.write_text(text)
    out = tmp_path / "out.rtio"
    with create_file(out, overwrite=True) as f:
        n = read_ascii(src, leaflist, name, f)
    return out, n


def test_parse_examples():
    s = parse_leaflist("x:y:z")
    assert s.names == ["x", "y", "z"] and all(l.leaf_type == F64 for l in s)
    s = parse_leaflist("n/L:tag/C")
    assert [l.leaf_type for l in s] == [I64, STR]
    s = parse_leaflist("e/D[0,1,12]")
    assert s[0].leaf_type == LeafType.quantized(0, 1, 12)


@pytest.mark.parametrize("text", ["", "x:x", "x/Q", "x/L[0,1,8]", "x/D[0,1]", "x/D[1,0,8]",
                                  "x/D[0,1,40]", "x/D[a,1,8]", "1x", "x::y", "x/D[0,1,8"])
def test_parse_errors(text):
    with pytest.raises(SchemaError):
        parse_leaflist(text)


def test_basic_ingest(tmp_path):
    out, n = ingest(tmp_path, "1 2 3\n4 5 6\n", "x:y:z")
    assert n == 2
    with open_file(out) as r:
        assert r.tree("t").read_entry(0) == (1.0, 2.0, 3.0)


def test_field_count_error_names_line(tmp_path):
    with pytest.raises(IngestError) as exc:
        ingest(tmp_path, "1 2 3\n# note\n\n4 5\n", "x:y:z")
    assert exc.value.line == 4 and "line 4" in str(exc.value)


def test_unparsable_field(tmp_path):
    with pytest.raises(IngestError) as exc:
        ingest(tmp_path, "1 2\n3 x\n", "a:b/L")
    assert exc.value.line == 2


def test_nan_into_quantized(tmp_path):
    with pytest.raises(IngestError) as exc:
        ingest(tmp_path, "0.5\nnan\n", "e/D[0,1,8]")
    assert exc.value.line == 2


def test_comments_tabs_and_types(tmp_path):
    text = "# header\n  1\t-7   mu\n\n#2 3 x\n2.5 8 e\n"
    out, n = ingest(tmp_path, text, "x:n/L:tag/C")
    assert n == 2
    with open_file(out) as r:
        assert list(r.tree("t").iter_entries()) == [(1.0, -7, "mu"), (2.5, 8, "e")]


def test_empty_input(tmp_path):
    out, n = ingest(tmp_path, "", "x")
    assert n == 0
    with open_file(out) as r:
        assert r.tree("t").get_entries() == 0


def test_random_round_trip(tmp_path):
    rnd = random.Random(3)
    rows = [(rnd.uniform(-1e6, 1e6), rnd.randint(-(1 << 63), (1 << 63) - 1), f"w{rnd.randrange(99)}")
            for _ in range(2000)]
    text = "".join(f"{a!r} {b} {c}\n" for a, b, c in rows)
    out, n = ingest(tmp_path, text, "a:b/L:c/C")
    with open_file(out) as r:
        t = r.tree("t")
        assert list(t.iter_entries()) == rows
        assert count_entries(t, "1") == n == len(rows)


def test_scan_reproduces_input(tmp_path):
    lines = [f"{i} {i * 3 - 7} {-i}" for i in range(50)]
    out, _ = ingest(tmp_path, "\n".join(lines) + "\n", "x:y:z")
    buf = io.StringIO()
    with open_file(out) as r:
        scan(r.tree("t"), "x:y:z", sink=buf)
    got = [" ".join(c.strip() for c in line.split("*")[2:-1]) for line in buf.getvalue().splitlines()[3:-2]]
    assert got == lines
