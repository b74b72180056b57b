"""Paged relations over two backends with exact I/O accounting.

A record is ``record_size`` bytes: an 8-byte little-endian key followed by the
8-byte payload tag tiled over the remaining bytes (truncated when the record
is shorter than 16 bytes).  Pages hold ``page_size // record_size`` records
and carry no header; the tail of each page is zero padding.

Every page access goes through :class:`Backend`, which classifies it: a read
or write of page ``p`` is sequential when ``p`` directly follows the previous
page touched on the same relation with the same access kind, or when ``p`` is
0 (start of a scan); anything else is random.  Partition flushes pass
``random=True`` because writes to many partitions interleave on the device.
"""

from dataclasses import dataclass, field
import itertools
import os
from pathlib import Path

import numpy as np

from .core_types import KEY_SIZE, IoStats, ceil_div

TAG_SIZE = 8
READ, WRITE = "read", "write"
DEFAULT_SCAN_PAGES = 4096

_EMPTY = np.zeros(0, dtype=np.uint64)


class StorageError(Exception):
    pass


@dataclass(eq=False)
class Relation:
    name: str
    record_size: int
    page_size: int
    backend: "Backend" = field(repr=False)
    n: int = 0
    closed: bool = False

    @property
    def records_per_page(self) -> int:
        return self.page_size // self.record_size

    @property
    def pages(self) -> int:
        return ceil_div(self.n, self.records_per_page)


class Backend:
    """Owns the relations of one execution context and their IoStats."""

    def __init__(self, page_size: int):
        if page_size < KEY_SIZE:
            raise ValueError(f"page size {page_size} is smaller than a key")
        self.page_size = page_size
        self.stats = IoStats()
        self._last = {}
        self._relations = {}
        self._names = itertools.count()

    # accounting

    def _count(self, rel: Relation, kind: str, first: int, count: int, random: bool):
        if count <= 0:
            return
        key = (id(rel), kind)
        if random:
            rnd, seq = count, 0
        else:
            contiguous = first == 0 or self._last.get(key) == first - 1
            rnd = 0 if contiguous else 1
            seq = count - rnd
        self._last[key] = first + count - 1
        if kind == READ:
            self.stats.seq_reads += seq
            self.stats.rand_reads += rnd
        else:
            self.stats.seq_writes += seq
            self.stats.rand_writes += rnd

    # relation lifecycle

    def create(self, name: str, record_size: int) -> Relation:
        if not KEY_SIZE <= record_size <= self.page_size:
            raise ValueError(f"record size {record_size} outside [8, {self.page_size}]")
        if name in self._relations:
            raise StorageError(f"relation {name!r} already exists")
        rel = Relation(name, record_size, self.page_size, self)
        self._relations[name] = rel
        self._create(rel)
        return rel

    def temp(self, prefix: str, record_size: int) -> Relation:
        return self.create(f"{prefix}.{next(self._names)}", record_size)

    def drop(self, rel: Relation):
        self._relations.pop(rel.name, None)
        for kind in (READ, WRITE):
            self._last.pop((id(rel), kind), None)
        self._drop(rel)

    def get(self, name: str) -> Relation:
        return self._relations[name]

    # page I/O

    def write_records(self, rel: Relation, keys, tags, random: bool = False, final=False):
        """Append records; all but a ``final`` write must fill whole pages."""
        if rel.closed:
            raise StorageError(f"relation {rel.name!r} is closed for writing")
        keys = np.asarray(keys, dtype=np.uint64)
        tags = np.asarray(tags, dtype=np.uint64)
        if len(keys) != len(tags):
            raise ValueError("keys and tags differ in length")
        b = rel.records_per_page
        if len(keys) % b and not final:
            raise StorageError("partial page written before the end of the relation")
        if rel.n % b:
            raise StorageError(f"relation {rel.name!r} already ends in a partial page")
        if len(keys) == 0:
            return
        first = rel.pages
        npages = ceil_div(len(keys), b)
        self._write(rel, first, keys, tags)
        rel.n += len(keys)
        self._count(rel, WRITE, first, npages, random)

    def read_pages(self, rel: Relation, first: int, count: int, random: bool = False):
        count = max(0, min(count, rel.pages - first))
        if count == 0:
            return _EMPTY, _EMPTY
        b = rel.records_per_page
        lo, hi = first * b, min(rel.n, (first + count) * b)
        keys, tags = self._read(rel, first, count, lo, hi)
        self._count(rel, READ, first, count, random)
        return keys, tags

    def close(self, rel: Relation):
        rel.closed = True
        self._flush(rel)

    # backend hooks

    def _create(self, rel):
        raise NotImplementedError

    def _drop(self, rel):
        raise NotImplementedError

    def _write(self, rel, first_page, keys, tags):
        raise NotImplementedError

    def _read(self, rel, first_page, count, lo, hi):
        raise NotImplementedError

    def _flush(self, rel):
        pass

    def shutdown(self):
        for rel in list(self._relations.values()):
            self._flush(rel)


class SimBackend(Backend):
    """In-memory pages; only keys and tags are kept, the filler is implied."""

    def __init__(self, page_size: int):
        super().__init__(page_size)
        self._data = {}

    def _create(self, rel):
        self._data[id(rel)] = ([], [], [None, None])

    def _drop(self, rel):
        self._data.pop(id(rel), None)

    def _write(self, rel, first_page, keys, tags):
        kc, tc, cache = self._data[id(rel)]
        kc.append(keys.copy())
        tc.append(tags.copy())
        cache[0] = cache[1] = None

    def _arrays(self, rel):
        kc, tc, cache = self._data[id(rel)]
        if cache[0] is None:
            cache[0] = np.concatenate(kc) if kc else _EMPTY
            cache[1] = np.concatenate(tc) if tc else _EMPTY
            kc[:] = [cache[0]]
            tc[:] = [cache[1]]
        return cache[0], cache[1]

    def _read(self, rel, first_page, count, lo, hi):
        keys, tags = self._arrays(rel)
        return keys[lo:hi], tags[lo:hi]


def encode_records(keys, tags, record_size: int) -> np.ndarray:
    """(n, record_size) byte matrix: key LE, then the tag tiled as filler."""
    n = len(keys)
    out = np.empty((n, record_size), dtype=np.uint8)
    out[:, :KEY_SIZE] = np.asarray(keys, dtype="<u8").view(np.uint8).reshape(n, KEY_SIZE)
    rest = record_size - KEY_SIZE
    if rest:
        tag_bytes = np.asarray(tags, dtype="<u8").view(np.uint8).reshape(n, TAG_SIZE)
        reps = ceil_div(rest, TAG_SIZE)
        out[:, KEY_SIZE:] = np.tile(tag_bytes, (1, reps))[:, :rest]
    return out


def decode_records(raw: np.ndarray):
    n, rs = raw.shape
    keys = np.ascontiguousarray(raw[:, :KEY_SIZE]).view("<u8").reshape(n).astype(np.uint64)
    tag_bytes = np.zeros((n, TAG_SIZE), dtype=np.uint8)
    width = min(TAG_SIZE, rs - KEY_SIZE)
    if width > 0:
        tag_bytes[:, :width] = raw[:, KEY_SIZE:KEY_SIZE + width]
    tags = tag_bytes.view("<u8").reshape(n).astype(np.uint64)
    return keys, tags


def tag_mask(record_size: int) -> np.uint64:
    """Bits of the tag that survive a round trip through a record of this size."""
    width = min(TAG_SIZE, record_size - KEY_SIZE)
    return np.uint64((1 << (8 * width)) - 1) if width < TAG_SIZE else np.uint64(2**64 - 1)


class FileBackend(Backend):
    """One data file plus a ``.meta`` sidecar per relation, accessed with pread/pwrite."""

    def __init__(self, page_size: int, directory, sync_writes: bool = False):
        super().__init__(page_size)
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.sync_writes = sync_writes
        self._fds = {}

    def path(self, rel) -> Path:
        return self.directory / f"{rel.name}.dat"

    def _create(self, rel):
        flags = os.O_RDWR | os.O_CREAT | os.O_TRUNC
        if self.sync_writes:
            flags |= getattr(os, "O_SYNC", 0)
        self._fds[id(rel)] = os.open(self.path(rel), flags, 0o644)

    def _drop(self, rel):
        fd = self._fds.pop(id(rel), None)
        if fd is not None:
            os.close(fd)
        for p in (self.path(rel), self.directory / f"{rel.name}.meta"):
            p.unlink(missing_ok=True)

    def _write(self, rel, first_page, keys, tags):
        b, ps, rs = rel.records_per_page, self.page_size, rel.record_size
        npages = ceil_div(len(keys), b)
        recs = encode_records(keys, tags, rs)
        buf = np.zeros((npages, ps), dtype=np.uint8)
        padded = np.zeros((npages * b, rs), dtype=np.uint8)
        padded[:len(keys)] = recs
        buf[:, :b * rs] = padded.reshape(npages, b * rs)
        data = buf.tobytes()
        written = os.pwrite(self._fds[id(rel)], data, first_page * ps)
        if written != len(data):
            raise StorageError(f"short write on {rel.name!r}: {written} of {len(data)} bytes")
        self._write_meta(rel, rel.n + len(keys))

    def _read(self, rel, first_page, count, lo, hi):
        ps, b, rs = self.page_size, rel.records_per_page, rel.record_size
        data = os.pread(self._fds[id(rel)], count * ps, first_page * ps)
        if len(data) < ceil_div(hi - lo, b) * ps - (ps - b * rs):
            raise StorageError(f"truncated relation {rel.name!r}")
        pages = np.frombuffer(data, dtype=np.uint8)
        pages = np.pad(pages, (0, count * ps - len(pages))).reshape(count, ps)
        recs = pages[:, :b * rs].reshape(count * b, rs)[:hi - lo]
        return decode_records(recs)

    def _write_meta(self, rel, n):
        meta = self.directory / f"{rel.name}.meta"
        meta.write_text(f"name={rel.name},n={n},record_size={rel.record_size}\n")

    def _flush(self, rel):
        fd = self._fds.get(id(rel))
        if fd is not None:
            self._write_meta(rel, rel.n)

    def open_existing(self, name: str) -> Relation:
        """Attach a relation previously written to this directory."""
        meta = read_meta(self.directory / f"{name}.meta")
        rel = Relation(meta["name"], int(meta["record_size"]), self.page_size, self,
                       int(meta["n"]), closed=True)
        self._relations[rel.name] = rel
        self._fds[id(rel)] = os.open(self.path(rel), os.O_RDWR)
        return rel

    def shutdown(self):
        super().shutdown()
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()


def read_meta(path) -> dict:
    text = Path(path).read_text().strip()
    fields = dict(part.split("=", 1) for part in text.split(","))
    missing = {"name", "n", "record_size"} - fields.keys()
    if missing:
        raise StorageError(f"metadata {path} lacks {sorted(missing)}")
    return fields


def make_backend(kind: str, page_size: int, directory=None, sync_writes=False) -> Backend:
    if kind == "sim":
        return SimBackend(page_size)
    if kind == "file":
        if directory is None:
            raise ValueError("the file backend needs a directory")
        return FileBackend(page_size, directory, sync_writes)
    raise ValueError(f"unknown backend {kind!r}")


def store(backend: Backend, name: str, record_size: int, keys, tags) -> Relation:
    """Write a whole relation sequentially and close it."""
    rel = backend.create(name, record_size)
    backend.write_records(rel, keys, tags, final=True)
    backend.close(rel)
    return rel


def scan(rel: Relation, pages_per_batch: int = DEFAULT_SCAN_PAGES):
    """Yield (keys, tags) batches covering the relation once, one read per page."""
    for first in range(0, rel.pages, pages_per_batch):
        yield rel.backend.read_pages(rel, first, pages_per_batch)


def scan_records(rel: Relation, pages_per_batch: int = DEFAULT_SCAN_PAGES):
    for keys, tags in scan(rel, pages_per_batch):
        yield from zip(keys.tolist(), tags.tolist())


def read_all(rel: Relation):
    parts = list(scan(rel))
    if not parts:
        return _EMPTY, _EMPTY
    return np.concatenate([k for k, _ in parts]), np.concatenate([t for _, t in parts])


class PartitionFile:
    """A partition that is staged in memory until spilled.

    While staged, records cost no I/O.  Once spilled, every full page is
    written immediately (random write) and :meth:`finish` writes the tail.
    """

    def __init__(self, backend: Backend, prefix: str, record_size: int, pid: int):
        self.backend = backend
        self.prefix = prefix
        self.record_size = record_size
        self.pid = pid
        self.spilled = False
        self.relation = None
        self._keys, self._tags = [], []
        self._buffered = 0
        self._b = backend.page_size // record_size

    @property
    def buffered(self) -> int:
        return self._buffered

    @property
    def n(self) -> int:
        written = self.relation.n if self.relation is not None else 0
        return written + self._buffered

    def append(self, keys, tags):
        if len(keys) == 0:
            return
        self._keys.append(np.asarray(keys, dtype=np.uint64))
        self._tags.append(np.asarray(tags, dtype=np.uint64))
        self._buffered += len(keys)
        if self.spilled:
            self._flush_full_pages()

    def spill(self):
        if self.spilled:
            return
        self.spilled = True
        self.relation = self.backend.temp(f"{self.prefix}.p{self.pid}", self.record_size)
        self._flush_full_pages()

    def staged(self):
        """Buffered records (all of them while staged)."""
        if not self._keys:
            return _EMPTY, _EMPTY
        keys, tags = np.concatenate(self._keys), np.concatenate(self._tags)
        self._keys, self._tags = [keys], [tags]
        return keys, tags

    def _flush_full_pages(self):
        full = (self._buffered // self._b) * self._b
        if full == 0:
            return
        keys, tags = self.staged()
        self.backend.write_records(self.relation, keys[:full], tags[:full], random=True)
        self._keys, self._tags = [keys[full:]], [tags[full:]]
        self._buffered -= full

    def finish(self):
        """Write the tail of a spilled partition; returns its relation (or None if staged)."""
        if not self.spilled:
            return None
        keys, tags = self.staged()
        if len(keys):
            self.backend.write_records(self.relation, keys, tags, random=True, final=True)
        self._keys, self._tags, self._buffered = [], [], 0
        self.backend.close(self.relation)
        return self.relation

    def discard(self):
        self._keys, self._tags, self._buffered = [], [], 0
