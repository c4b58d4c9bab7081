"""Storage adapters, transaction accounting and latency hiding.

Every adapter call that touches the backend (``read_at`` or
``vectored_read``) is one *transaction*. :class:`LatencySimAdapter` charges a
fixed delay per transaction so the effect of batching requests can be
measured on a desk: :class:`PrefetchCache` turns a sequential basket scan
into a handful of vectored reads, :func:`open_many` overlaps the header and
footer fetches of many files, and :func:`cache_open` keeps a local copy of
a remote file.

Locators are plain paths or ``sim://PATH?latency_ms=L&bandwidth=B``.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from urllib.parse import parse_qs

from .errors import StorageError, UsageError

log = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 20
ACTIVE_HISTORY = 64
PROBE_HEAD = 24
PROBE_TAIL = 8


class StorageAdapter:
    """Byte-range access to an immutable blob with transaction counters.

    Subclasses implement :meth:`_read` and :meth:`size`.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.transactions = 0
        self.bytes_read = 0

    def _count(self, nbytes: int) -> None:
        with self._lock:
            self.transactions += 1
            self.bytes_read += nbytes

    def counters(self) -> tuple:
        with self._lock:
            return self.transactions, self.bytes_read

    def _read(self, offset: int, length: int) -> bytes:
        raise NotImplementedError

    def _delay(self, nbytes: int) -> None:
        pass

    def size(self) -> int:
        raise NotImplementedError

    def _check_range(self, offset, length):
        if offset < 0 or length < 0:
            raise StorageError(f"invalid range ({offset}, {length})")

    def read_at(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        data = self._read(offset, length)
        self._delay(len(data))
        self._count(len(data))
        return data

    def vectored_read(self, ranges) -> bytes:
        """Read several ranges in a single transaction, concatenated."""
        ranges = list(ranges)
        for off, n in ranges:
            self._check_range(off, n)
        data = b"".join(self._read(off, n) for off, n in ranges)
        self._delay(len(data))
        self._count(len(data))
        return data

    def close(self) -> None:
        pass


class LocalFileAdapter(StorageAdapter):
    def __init__(self, path):
        super().__init__()
        self.path = os.fspath(path)
        try:
            self._fd = os.open(self.path, os.O_RDONLY)
        except OSError as exc:
            raise StorageError(f"cannot open {self.path}: {exc.strerror}") from None

    def _read(self, offset, length):
        return os.pread(self._fd, length, offset)

    def size(self) -> int:
        return os.fstat(self._fd).st_size

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __repr__(self):
        return f"{type(self).__name__}({self.path!r})"


class LatencySimAdapter(LocalFileAdapter):
    """Local file that behaves like a high-latency remote server.

    Each transaction sleeps ``latency_ms`` plus ``bytes / bandwidth`` seconds
    when a bandwidth (bytes per second) is given.
    """

    def __init__(self, path, latency_ms: float = 50.0, bandwidth=None):
        super().__init__(path)
        self.latency_ms = float(latency_ms)
        self.bandwidth = float(bandwidth) if bandwidth else None

    def _delay(self, nbytes):
        t = self.latency_ms / 1000.0
        if self.bandwidth:
            t += nbytes / self.bandwidth
        time.sleep(t)


def open_adapter(locator) -> StorageAdapter:
    """Build an adapter from a path or a ``sim://`` locator."""
    if isinstance(locator, StorageAdapter):
        return locator
    loc = os.fspath(locator)
    if not loc.startswith("sim://"):
        return LocalFileAdapter(loc)
    path, _, query = loc[len("sim://"):].partition("?")
    params = parse_qs(query)
    unknown = set(params) - {"latency_ms", "bandwidth"}
    if unknown:
        raise UsageError(f"unknown locator parameters: {', '.join(sorted(unknown))}")
    try:
        latency = float(params.get("latency_ms", ["50"])[0])
        bandwidth = float(params["bandwidth"][0]) if "bandwidth" in params else None
    except ValueError:
        raise UsageError(f"bad numeric parameter in locator {loc!r}") from None
    return LatencySimAdapter(path, latency, bandwidth)


# prefetching ---------------------------------------------------------------


class PrefetchCache(StorageAdapter):
    """Index-driven read-ahead over another adapter.

    On a miss for a basket, one vectored read fetches that basket plus the
    next ``window_baskets`` baskets of every recently active branch, as
    listed in the file's basket index. Hits cost no transaction. The
    counters of this object count requests served; the wrapped adapter's
    counters count real transactions.
    """

    def __init__(self, inner: StorageAdapter, directory, window_baskets: int = 20):
        super().__init__()
        if window_baskets < 0:
            raise UsageError("window_baskets must be >= 0")
        self.inner = inner
        self.window = window_baskets
        self._lists: dict = {}
        self._where: dict = {}
        for tree in directory.trees:
            for br in tree.branches:
                entries = sorted(br.baskets, key=lambda e: e.first_entry)
                self._lists[br.branch_id] = entries
                for pos, e in enumerate(entries):
                    self._where[e.file_offset] = (br.branch_id, pos)
        self._offsets = sorted(self._where)
        self._cache: dict = {}
        self._last_pos: dict = {}
        self._recent = deque(maxlen=ACTIVE_HISTORY)
        self.hits = 0
        self.misses = 0

    def size(self) -> int:
        return self.inner.size()

    def _locate(self, offset, length):
        i = bisect.bisect_right(self._offsets, offset) - 1
        if i < 0:
            return None
        bid, pos = self._where[self._offsets[i]]
        e = self._lists[bid][pos]
        if offset + length <= e.file_offset + e.compressed_length:
            return bid, pos, e
        return None

    def read_through(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        self._count(length)
        found = self._locate(offset, length)
        if found is None:
            return self.inner.read_at(offset, length)
        bid, pos, entry = found
        self._recent.append(bid)
        self._last_pos[bid] = pos
        blob = self._cache.get(entry.file_offset)
        if blob is None:
            self.misses += 1
            self._fill(bid, pos)
            blob = self._cache[entry.file_offset]
        else:
            self.hits += 1
        # baskets behind the reader's position on this branch are done with
        for p in range(max(0, pos - self.window - 1), pos):
            self._cache.pop(self._lists[bid][p].file_offset, None)
        start = offset - entry.file_offset
        return blob[start:start + length]

    read_at = read_through

    def _fill(self, bid, pos):
        wanted = {self._lists[bid][pos]}
        for b in set(self._recent):
            base = pos if b == bid else self._last_pos.get(b, -1)
            for e in self._lists[b][base + 1: base + 1 + self.window]:
                wanted.add(e)
        wanted = sorted((e for e in wanted if e.file_offset not in self._cache),
                        key=lambda e: e.file_offset)
        # coalesce adjacent ranges into single requests
        ranges = []
        for e in wanted:
            end = e.file_offset + e.compressed_length
            if ranges and ranges[-1][1] == e.file_offset:
                ranges[-1][1] = end
            else:
                ranges.append([e.file_offset, end])
        data = self.inner.vectored_read([(a, b - a) for a, b in ranges])
        got = {}
        pos_in = 0
        for a, b in ranges:
            got[a] = (data[pos_in:pos_in + b - a])
            pos_in += b - a
        starts = [a for a, _ in ranges]
        for e in wanted:
            i = bisect.bisect_right(starts, e.file_offset) - 1
            a = starts[i]
            rel = e.file_offset - a
            self._cache[e.file_offset] = got[a][rel:rel + e.compressed_length]

    def vectored_read(self, ranges) -> bytes:
        return b"".join(self.read_through(o, n) for o, n in ranges)

    def close(self) -> None:
        self._cache.clear()
        self.inner.close()


# copying and caching ---------------------------------------------------------


def cp(source, destination) -> int:
    """Stream ``source`` into a new file at ``destination`` in 1 MiB chunks.

    Works on any byte stream. Returns the number of bytes copied; on failure
    the partial destination is removed.
    """
    src = open_adapter(source)
    owned = src is not source
    dst = Path(destination)
    tmp = dst.with_name(dst.name + ".part")
    copied = 0
    try:
        total = src.size()
        with open(tmp, "wb") as out:
            while copied < total:
                chunk = src.read_at(copied, min(CHUNK_SIZE, total - copied))
                if not chunk:
                    raise StorageError(f"source ended early at byte {copied}")
                out.write(chunk)
                copied += len(chunk)
        os.replace(tmp, dst)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    finally:
        if owned:
            src.close()
    return copied


def default_cache_dir() -> Path:
    env = os.environ.get("RTIO_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "rtio"


def cache_key(locator) -> str:
    return hashlib.sha256(os.fspath(locator).encode("utf-8")).hexdigest()


def _probe(adapter, size):
    head = adapter.read_at(0, min(PROBE_HEAD, size))
    tail = adapter.read_at(max(0, size - PROBE_TAIL), min(PROBE_TAIL, size))
    return head, tail


def cache_fetch(locator, cache_dir=None, source=None) -> Path:
    """Ensure a fresh local copy of ``locator`` exists; return its path.

    A cached copy is reused unless the remote size differs or its header
    and footer tail (which carries the directory checksum) changed.
    """
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cache directory {cache_dir} is not writable: {exc}") from None
    src = source if source is not None else open_adapter(locator)
    try:
        return _refresh(src, locator, cache_dir / cache_key(locator))
    finally:
        if source is None:
            src.close()


def _refresh(src, locator, cached: Path) -> Path:
    if cached.exists():
        size = src.size()
        if cached.stat().st_size == size:
            local = LocalFileAdapter(cached)
            try:
                fresh = _probe(src, size) == _probe(local, size)
            finally:
                local.close()
            if fresh:
                log.debug("cache hit for %s", locator)
                return cached
        log.debug("cached copy of %s is stale", locator)
    cp(src, cached)
    return cached


def cache_open(locator, cache_dir=None, source=None):
    """Open ``locator`` through a local cache copy (CACHEREAD-style)."""
    from .format import open_file

    return open_file(LocalFileAdapter(cache_fetch(locator, cache_dir, source)))


# asynchronous multi-open -----------------------------------------------------


class PendingOpen:
    """Handle to a container that is being opened in the background.

    :meth:`resolve` blocks until the open finishes and returns the
    :class:`~rtio.format.ContainerReader` or raises the open error.
    Attribute access resolves implicitly.
    """

    def __init__(self, locator, future):
        self.locator = locator
        self._future = future

    @property
    def done(self) -> bool:
        return self._future.done()

    def resolve(self):
        return self._future.result()

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self.resolve(), name)

    def __repr__(self):
        state = "done" if self.done else "pending"
        return f"<PendingOpen {self.locator!r} {state}>"


def open_locator(locator):
    from .format import open_file

    return open_file(open_adapter(locator))


def open_many(locators) -> list:
    """Start opening every locator concurrently; never blocks.

    Errors for one locator surface only when that handle is resolved.
    """
    locators = list(locators)
    if not locators:
        raise UsageError("open_many needs at least one locator")
    pool = ThreadPoolExecutor(max_workers=len(locators), thread_name_prefix="rtio-open")
    handles = [PendingOpen(loc, pool.submit(open_locator, loc)) for loc in locators]
    pool.shutdown(wait=False)
    return handles
