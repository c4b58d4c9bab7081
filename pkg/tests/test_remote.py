import hashlib
import math
import os
import random
import time

import numpy as np
import pytest

from rtio import F64, I64, open_file
from rtio.errors import FormatError, StorageError, UsageError
from rtio.remote import CHUNK_SIZE, LatencySimAdapter, LocalFileAdapter, PendingOpen, \
    cache_fetch, cache_key, cache_open, cp, default_cache_dir, \
    open_adapter, open_many

from conftest import write_columns


def basket_file(path, n_branches=4, n_baskets=50, per_basket=128):
    """Every branch gets exactly ``n_baskets`` baskets of ``per_basket`` F64 values."""
    n = n_baskets * per_basket
    rng = np.random.default_rng(0)
    schema = [(f"b{i}", F64) for i in range(n_branches)]
    write_columns(path, schema, [rng.normal(size=n) for _ in schema], capacity=8 * per_basket)
    return path


def test_vectored_equals_individual(tmp_path):
    p = tmp_path / "blob"
    p.write_bytes(os.urandom(5000))
    a = LocalFileAdapter(p)
    ranges = [(0, 10), (4990, 10), (100, 0), (17, 300)]
    assert a.vectored_read(ranges) == b"".join(a.read_at(o, n) for o, n in ranges)
    assert a.counters() == (1 + len(ranges), 2 * 320)
    with pytest.raises(StorageError):
        a.read_at(-1, 3)
    a.close()


def test_open_costs_two_transactions(tmp_path):
    p = basket_file(tmp_path / "f.rtio", 1, 3)
    a = LocalFileAdapter(p)
    open_file(a)
    assert a.transactions == 2


def test_latency_sim_elapsed(tmp_path):
    p = tmp_path / "blob"
    p.write_bytes(b"x" * 10_000)
    a = LatencySimAdapter(p, latency_ms=10, bandwidth=1_000_000)
    t0 = time.perf_counter()
    for _ in range(3):
        a.read_at(0, 5000)
    assert time.perf_counter() - t0 >= 3 * (0.010 + 0.005)


def test_sim_locator_parsing(tmp_path):
    p = tmp_path / "blob"
    p.write_bytes(b"abc")
    a = open_adapter(f"sim://{p}?latency_ms=7&bandwidth=1e6")
    assert isinstance(a, LatencySimAdapter) and a.latency_ms == 7 and a.bandwidth == 1e6
    assert open_adapter(f"sim://{p}").latency_ms == 50
    assert type(open_adapter(str(p))) is LocalFileAdapter
    with pytest.raises(UsageError):
        open_adapter(f"sim://{p}?latency=3")
    with pytest.raises(UsageError):
        open_adapter(f"sim://{p}?latency_ms=abc")
    with pytest.raises(StorageError):
        open_adapter(tmp_path / "missing")


def _scan_rows(reader):
    t = reader.tree("t")
    return list(t.iter_entries())


def _scan_branches(reader):
    t = reader.tree("t")
    return [t.read_branch(name).tolist() for name in t.schema.names]


@pytest.mark.parametrize("scan", [_scan_rows, _scan_branches])
def test_window_zero_is_pass_through(tmp_path, scan):
    p = basket_file(tmp_path / "f.rtio", 4, 10)
    r = open_file(LocalFileAdapter(p))
    inner = r.source
    cache = r.use_prefetch(0)
    scan(r)
    assert inner.transactions - 2 == 40 == cache.misses


@pytest.mark.parametrize("scan", [_scan_rows, _scan_branches])
def test_transaction_bound(tmp_path, scan):
    p = basket_file(tmp_path / "f.rtio", 4, 50)
    plain = open_file(LocalFileAdapter(p))
    expected = scan(plain)
    naive = plain.source.transactions - 2
    r = open_file(LocalFileAdapter(p))
    inner = r.source
    r.use_prefetch(20)
    assert scan(r) == expected
    used = inner.transactions - 2
    assert naive == 200
    assert used <= math.ceil(200 / 20) + 4
    assert used * 10 <= naive


def test_transparency_random_access(tmp_path):
    p = basket_file(tmp_path / "f.rtio", 3, 30, per_basket=40)
    rnd = random.Random(4)
    ref = open_file(LocalFileAdapter(p))
    entries = list(ref.directory.iter_baskets())
    size = os.path.getsize(p)
    for window in (0, 1, 5, 40):
        r = open_file(LocalFileAdapter(p))
        cache = r.use_prefetch(window)
        for _ in range(300):
            if rnd.random() < 0.8:
                e = rnd.choice(entries)
                assert r.read_basket_raw(e) == ref.read_basket_raw(e)
            else:
                off = rnd.randrange(size)
                n = rnd.randrange(0, 200)
                assert cache.read_at(off, n) == ref.source.read_at(off, n)
        rows = list(r.tree("t").iter_entries())
        assert rows == list(ref.tree("t").iter_entries())


def test_prefetch_wall_clock(tmp_path):
    p = basket_file(tmp_path / "f.rtio", 4, 25)
    t0 = time.perf_counter()
    _scan_rows(open_file(LatencySimAdapter(p, 5)))
    plain = time.perf_counter() - t0
    r = open_file(LatencySimAdapter(p, 5))
    r.use_prefetch(20)
    t0 = time.perf_counter()
    _scan_rows(r)
    assert time.perf_counter() - t0 < plain / 3


def test_negative_window(tmp_path):
    p = basket_file(tmp_path / "f.rtio", 1, 2)
    with pytest.raises(UsageError):
        open_file(p).use_prefetch(-1)


# copy -------------------------------------------------------------------------


def test_cp_10mib(tmp_path):
    src = tmp_path / "blob"
    data = os.urandom(10 * CHUNK_SIZE + 123)
    src.write_bytes(data)
    a = LocalFileAdapter(src)
    assert cp(a, tmp_path / "copy") == len(data)
    assert a.transactions == math.ceil(len(data) / CHUNK_SIZE)
    assert hashlib.sha256((tmp_path / "copy").read_bytes()).digest() == hashlib.sha256(data).digest()
    assert not (tmp_path / "copy.part").exists()


def test_cp_empty(tmp_path):
    (tmp_path / "e").write_bytes(b"")
    a = LocalFileAdapter(tmp_path / "e")
    assert cp(a, tmp_path / "o") == 0 and a.transactions == 0
    assert (tmp_path / "o").read_bytes() == b""


class FailingAdapter(LocalFileAdapter):
    def _read(self, offset, length):
        if offset > 0:
            raise OSError("connection reset")
        return super()._read(offset, length)


def test_cp_failure_removes_partial(tmp_path):
    src = tmp_path / "blob"
    src.write_bytes(b"z" * (CHUNK_SIZE + 5))
    with pytest.raises(OSError):
        cp(FailingAdapter(src), tmp_path / "o")
    assert not (tmp_path / "o").exists() and not (tmp_path / "o.part").exists()


# cache-read -----------------------------------------------------------------


def test_cache_open_cold_warm_stale(tmp_path):
    remote = tmp_path / "remote.rtio"
    write_columns(remote, [("k", I64)], [np.arange(300_000)], level=0)
    cache_dir = tmp_path / "cache"
    size = os.path.getsize(remote)

    src = LocalFileAdapter(remote)
    with cache_open(str(remote), cache_dir, source=src) as r:
        assert r.tree("t").get_entries() == 300_000
    assert src.transactions == math.ceil(size / CHUNK_SIZE)
    assert (cache_dir / cache_key(str(remote))).exists()

    src = LocalFileAdapter(remote)
    cache_open(str(remote), cache_dir, source=src).close()
    assert src.transactions == 2

    write_columns(tmp_path / "new.rtio", [("k", I64)], [np.arange(300_000) + 1], level=0)
    assert os.path.getsize(tmp_path / "new.rtio") == size
    os.replace(tmp_path / "new.rtio", remote)
    src = LocalFileAdapter(remote)
    with cache_open(str(remote), cache_dir, source=src) as r:
        assert r.tree("t").read_entry(0) == (1,)
    assert src.transactions == 2 + math.ceil(size / CHUNK_SIZE)


def test_cache_refetch_on_size_change(tmp_path):
    remote = tmp_path / "r.rtio"
    write_columns(remote, [("x", F64)], [np.arange(10.0)])
    cache_dir = tmp_path / "c"
    cache_fetch(str(remote), cache_dir)
    write_columns(tmp_path / "n.rtio", [("x", F64)], [np.arange(20.0)])
    os.replace(tmp_path / "n.rtio", remote)
    path = cache_fetch(str(remote), cache_dir)
    assert path.read_bytes() == remote.read_bytes()


def test_cache_dir_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("RTIO_CACHE_DIR", str(tmp_path / "envcache"))
    assert default_cache_dir() == tmp_path / "envcache"


def test_cache_dir_unwritable(tmp_path):
    (tmp_path / "file").write_bytes(b"")
    with pytest.raises(StorageError):
        cache_fetch(str(tmp_path / "file"), tmp_path / "file" / "sub")


# multi-open -----------------------------------------------------------------


def test_open_many_concurrent(tmp_path):
    paths = [basket_file(tmp_path / f"f{i}.rtio", 1, 2) for i in range(8)]
    t0 = time.perf_counter()
    open_file(LatencySimAdapter(paths[0], 30))
    single = time.perf_counter() - t0
    t0 = time.perf_counter()
    handles = open_many([f"sim://{p}?latency_ms=30" for p in paths])
    assert time.perf_counter() - t0 < 0.03
    readers = [h.resolve() for h in handles]
    assert time.perf_counter() - t0 <= 2 * single
    assert all(r.tree("t").get_entries() == 256 for r in readers)


def test_open_many_isolates_errors(tmp_path):
    paths = [str(basket_file(tmp_path / f"f{i}.rtio", 1, 1)) for i in range(7)]
    (tmp_path / "bad.rtio").write_bytes(b"garbage" * 10)
    handles = open_many(paths[:3] + [str(tmp_path / "bad.rtio")] + paths[3:])
    for i, h in enumerate(handles):
        if i == 3:
            with pytest.raises(FormatError):
                h.resolve()
        else:
            assert h.tree_names == ["t"]


def test_open_many_singleton(tmp_path):
    p = basket_file(tmp_path / "f.rtio", 2, 3)
    [h] = open_many([p])
    assert isinstance(h, PendingOpen)
    assert h.resolve().directory == open_file(p).directory
    assert h.resolve() is h.resolve()
    with pytest.raises(UsageError):
        open_many([])
