import random
import struct
import zlib

import pytest

from rtio import codec, create_file, open_file
from rtio.codec import F64, STR, LeafKind, LeafType, QuantSpec
from rtio.errors import (BadMagicError, ChecksumError, ClosedHandleError, FormatError,
                         TruncatedFileError, UnsupportedVersionError, UsageError)
from rtio.format import (HEADER_SIZE, BasketIndexEntry, BranchDescriptor, Directory,
                         EntryListRecord, TreeDescriptor, crc32, parse_directory,
                         serialize_directory)
from rtio.histogram import Histogram1D
from rtio.remote import LatencySimAdapter


def test_crc32_check_value():
    assert crc32(b"123456789") == 0xCBF43926


def test_empty_container(tmp_path):
    p = tmp_path / "e.rtio"
    create_file(p).finalize()
    r = open_file(p)
    assert r.tree_names == [] and r.directory == Directory()
    raw = p.read_bytes()
    assert raw[:4] == b"RTIO" and raw[-4:] == b"OITR"


def test_create_existing_path(tmp_path):
    p = tmp_path / "e.rtio"
    p.write_bytes(b"")
    with pytest.raises(FileExistsError):
        create_file(p)
    create_file(p, overwrite=True).finalize()


def test_second_handle_on_same_path(tmp_path):
    p = tmp_path / "e.rtio"
    w = create_file(p)
    with pytest.raises(UsageError):
        create_file(p, overwrite=True)
    w.finalize()


def _one_branch(w):
    return w.register_tree("t", [("x", F64)]).branches[0].branch_id


def test_append_basket_fields_and_read_back(tmp_path):
    p = tmp_path / "b.rtio"
    payload = bytes(range(100))
    w = create_file(p)
    bid = _one_branch(w)
    e = w.append_basket(bid, 0, payload, 100, codec.STORE, 100 // 8 or 1)
    assert e.compressed_length == 100 and e.checksum == zlib.crc32(payload)
    assert e.file_offset == HEADER_SIZE
    w.finalize()
    r = open_file(p)
    [got] = r.directory.tree("t").branches[0].baskets
    assert got == e
    assert r.read_basket_raw(got) == payload


def test_contiguity(tmp_path):
    w = create_file(tmp_path / "c.rtio")
    bid = _one_branch(w)
    a = w.append_basket(bid, 0, b"a" * 400, 400, 0, 50)
    b = w.append_basket(bid, 50, b"b" * 400, 400, 0, 50)
    assert b.first_entry == a.first_entry + a.n_entries
    with pytest.raises(UsageError):
        w.append_basket(bid, 120, b"c" * 8, 8, 0, 1)
    with pytest.raises(UsageError):
        w.append_basket(bid, 100, b"", 0, 0, 1)
    w.finalize()
    assert open_file(tmp_path / "c.rtio").directory.tree("t").n_entries == 100


def test_finalize_twice(tmp_path):
    w = create_file(tmp_path / "f.rtio")
    w.finalize()
    with pytest.raises(ClosedHandleError):
        w.finalize()


def test_tree_order_preserved(tmp_path):
    p = tmp_path / "o.rtio"
    with create_file(p) as w:
        for name in ("zeta", "alpha", "mid"):
            w.create_tree(name, [("x", F64)]).fill((1.0,))
    assert open_file(p).tree_names == ["zeta", "alpha", "mid"]


def greedy_baskets(sizes, capacity):
    count, used = 0, 0
    for s in sizes:
        if count == 0 or used + s > capacity:
            count, used = count + 1, 0
        used += s
    return count


def test_two_branch_round_trip(tmp_path):
    p = tmp_path / "two.rtio"
    w = create_file(p)
    t = w.create_tree("t", [("a", F64), ("b", STR)], basket_capacity_bytes=64)
    strings = ["v" * (i % 7) for i in range(30)]
    for i, s in enumerate(strings):
        t.fill((float(i), s))
    w.finalize()
    r = open_file(p)
    assert [b.name for b in r.directory.tree("t").branches] == ["a", "b"]
    expected_counts = [greedy_baskets([8] * 30, 64), greedy_baskets([4 + len(s) for s in strings], 64)]
    assert [len(b.baskets) for b in r.directory.tree("t").branches] == expected_counts
    assert r.directory == w.directory


def _patch(path, offset, data):
    raw = bytearray(path.read_bytes())
    raw[offset:offset + len(data)] = data
    path.write_bytes(bytes(raw))


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "s.rtio"
    with create_file(p) as w:
        w.create_tree("t", [("x", F64)]).fill((2.0,))
    return p


def test_bad_magic(small):
    _patch(small, 0, b"XXXX")
    with pytest.raises(BadMagicError):
        open_file(small)


def test_bad_version(small):
    _patch(small, 4, struct.pack("<H", 2))
    with pytest.raises(UnsupportedVersionError):
        open_file(small)


def test_truncated(small):
    raw = small.read_bytes()
    small.write_bytes(raw[:-3])
    with pytest.raises(TruncatedFileError):
        open_file(small)


def test_footer_beyond_eof(small):
    _patch(small, 8, struct.pack("<Q", 10_000))
    with pytest.raises(TruncatedFileError):
        open_file(small)


def test_unfinalized_file(tmp_path):
    p = tmp_path / "u.rtio"
    w = create_file(p)
    w._fh.flush()
    with pytest.raises(TruncatedFileError):
        open_file(p)
    w.finalize()


def test_footer_checksum(small):
    r = open_file(small)
    _patch(small, r.header.footer_offset, b"\xff")
    with pytest.raises(ChecksumError):
        open_file(small)


def test_bad_trailer(small):
    raw = small.read_bytes()
    small.write_bytes(raw[:-4] + b"XXXX")
    with pytest.raises(BadMagicError):
        open_file(small)


def test_payload_corruption_detected(small):
    r = open_file(small)
    [e] = r.directory.tree("t").branches[0].baskets
    r.close()
    raw = bytearray(small.read_bytes())
    raw[e.file_offset] ^= 0x01
    small.write_bytes(bytes(raw))
    r = open_file(small)
    with pytest.raises(ChecksumError):
        r.read_basket_raw(e)


def test_foreign_index_entry(small):
    r = open_file(small)
    with pytest.raises(UsageError):
        r.read_basket_raw(BasketIndexEntry(0, 24, 0, 1, 8, 8, 0, 0))


def test_raw_read_is_one_transaction_and_no_inflate(small):
    adapter = LatencySimAdapter(small, latency_ms=0)
    r = open_file(adapter)
    assert adapter.transactions == 2
    [e] = r.directory.tree("t").branches[0].baskets
    before = codec.stats.snapshot()
    r.read_basket_raw(e)
    assert adapter.transactions == 3
    assert codec.stats.delta(before)["decompress_calls"] == 0


def test_baskets_lie_in_body(mixed_file):
    path, _ = mixed_file
    r = open_file(path)
    for e in r.directory.iter_baskets():
        assert HEADER_SIZE <= e.file_offset
        assert e.file_offset + e.compressed_length <= r.header.footer_offset


def _random_directory(rnd):
    d = Directory()
    bid = 0
    for ti in range(rnd.randint(0, 3)):
        n = rnd.randint(0, 50)
        t = TreeDescriptor(f"t{ti}", n)
        for bi in range(rnd.randint(1, 4)):
            kind = rnd.choice(list(LeafKind))
            if kind == LeafKind.QF64:
                lo = rnd.uniform(-100, 100)
                leaf = LeafType(kind, QuantSpec(lo, lo + rnd.uniform(0.1, 50), rnd.randint(2, 32)))
            else:
                leaf = LeafType(kind)
            b = BranchDescriptor(f"b{bi}_é", bid, leaf)
            first = 0
            while first < n:
                k = rnd.randint(1, n - first)
                b.baskets.append(BasketIndexEntry(
                    bid, rnd.randint(24, 1 << 40), first, k, rnd.randint(0, 1 << 32 - 1),
                    rnd.randint(1, (1 << 32) - 1), rnd.choice([0, 1]), rnd.getrandbits(32)))
                first += k
            t.branches.append(b)
            bid += 1
        d.trees.append(t)
    for hi in range(rnd.randint(0, 3)):
        nb = rnd.randint(1, 20)
        d.histograms.append(Histogram1D(f"h{hi}", nb, -1.5, rnd.uniform(0, 9),
                                        [rnd.uniform(0, 100) for _ in range(nb + 2)]))
    for ei in range(rnd.randint(0, 2)):
        d.entry_lists.append(EntryListRecord(f"e{ei}", rnd.randbytes(rnd.randint(0, 64))))
    return d


def test_directory_round_trip_randomized():
    rnd = random.Random(7)
    for _ in range(1000):
        d = _random_directory(rnd)
        assert parse_directory(serialize_directory(d)) == d


def test_directory_trailing_garbage():
    with pytest.raises(FormatError):
        parse_directory(serialize_directory(Directory()) + b"\x00")


def test_directory_truncated():
    d = _random_directory(random.Random(3))
    while not d.trees:
        d = _random_directory(random.Random(4))
    data = serialize_directory(d)
    with pytest.raises(FormatError):
        parse_directory(data[:-5])
