import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrjoin.core_types import IoStats
from corrjoin.storage import (FileBackend, PartitionFile, SimBackend, StorageError,
                              decode_records, encode_records, make_backend, read_all,
                              read_meta, scan, store)


def _keys(n):
    return np.arange(n, dtype=np.uint64) * np.uint64(7919)


def _reads_of_scan(n, record_size=1024):
    backend = SimBackend(4096)
    rel = store(backend, "R", record_size, _keys(n), _keys(n))
    before = backend.stats.copy()
    total = sum(len(k) for k, _ in scan(rel))
    assert total == n
    return backend.stats - before


@pytest.mark.parametrize("n,pages", [(0, 0), (4, 1), (4000, 1000), (4001, 1001)])
def test_scan_reads_each_page_once(n, pages):
    assert _reads_of_scan(n) == IoStats(seq_reads=pages)


def test_staged_partition_costs_nothing():
    backend = SimBackend(4096)
    part = PartitionFile(backend, "p", 1024, 0)
    part.append(_keys(10), _keys(10))
    assert part.finish() is None
    assert backend.stats == IoStats()


def test_one_spilled_page():
    backend = SimBackend(4096)
    part = PartitionFile(backend, "p", 1024, 0)
    part.spill()
    part.append(_keys(4), _keys(4))
    part.finish()
    assert backend.stats == IoStats(rand_writes=1)


def test_spilled_pages_are_random_writes_then_sequential_reads():
    backend = SimBackend(4096)
    part = PartitionFile(backend, "p", 1024, 0)
    part.spill()
    for _ in range(10):
        part.append(_keys(4), _keys(4))
    rel = part.finish()
    assert backend.stats == IoStats(rand_writes=10)
    keys, _ = read_all(rel)
    assert len(keys) == 40
    assert backend.stats == IoStats(seq_reads=10, rand_writes=10)


def test_noncontiguous_read_is_random():
    backend = SimBackend(4096)
    rel = store(backend, "R", 1024, _keys(40), _keys(40))
    before = backend.stats.copy()
    backend.read_pages(rel, 3, 2)
    backend.read_pages(rel, 5, 1)
    assert backend.stats - before == IoStats(seq_reads=2, rand_reads=1)


def test_partial_page_only_at_end():
    backend = SimBackend(4096)
    rel = backend.create("R", 1024)
    with pytest.raises(StorageError):
        backend.write_records(rel, _keys(3), _keys(3))
    backend.write_records(rel, _keys(3), _keys(3), final=True)
    with pytest.raises(StorageError):
        backend.write_records(rel, _keys(4), _keys(4))


def test_record_encoding_little_endian():
    raw = encode_records(np.array([1], dtype=np.uint64), np.array([2], dtype=np.uint64), 32)
    assert raw.shape == (1, 32)
    assert raw[0, :8].tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    keys, tags = decode_records(raw)
    assert keys.tolist() == [1] and tags.tolist() == [2]


def test_file_backend_round_trip_and_sidecar(tmp_path):
    backend = FileBackend(4096, tmp_path)
    keys = _keys(4001)
    tags = keys ^ np.uint64(0xABCDEF)
    rel = store(backend, "R", 1024, keys, tags)
    assert (tmp_path / "R.dat").stat().st_size == rel.pages * 4096
    meta = read_meta(tmp_path / "R.meta")
    assert meta == {"name": "R", "n": "4001", "record_size": "1024"}
    back_k, back_t = read_all(rel)
    assert np.array_equal(back_k, keys) and np.array_equal(back_t, tags)
    backend.shutdown()
    again = FileBackend(4096, tmp_path)
    rel2 = again.open_existing("R")
    assert rel2.n == 4001
    assert np.array_equal(read_all(rel2)[0], keys)
    again.shutdown()


def test_truncated_file_detected(tmp_path):
    backend = FileBackend(4096, tmp_path)
    store(backend, "R", 1024, _keys(400), _keys(400))
    backend.shutdown()
    with open(tmp_path / "R.dat", "r+b") as fh:
        fh.truncate(4096 * 10)
    again = FileBackend(4096, tmp_path)
    with pytest.raises(StorageError):
        read_all(again.open_existing("R"))
    again.shutdown()


def test_make_backend_kinds(tmp_path):
    assert isinstance(make_backend("sim", 4096), SimBackend)
    assert isinstance(make_backend("file", 4096, tmp_path), FileBackend)
    with pytest.raises(ValueError):
        make_backend("tape", 4096)


def _replay(backend, ops):
    """Apply a random operation log; returns the relation contents read back."""
    parts = [PartitionFile(backend, "x", 256, j) for j in range(3)]
    for kind, pid, n in ops:
        if kind == "spill":
            parts[pid].spill()
        else:
            parts[pid].append(_keys(n) + np.uint64(pid), _keys(n))
    rels = [p.finish() for p in parts]
    return [read_all(r)[0].tolist() if r is not None else None for r in rels]


ops_strategy = st.lists(st.tuples(st.sampled_from(["spill", "append", "append"]),
                                  st.integers(0, 2), st.integers(1, 40)), max_size=25)


@settings(max_examples=30, deadline=None)
@given(ops_strategy)
def test_sim_and_file_backends_count_identically(tmp_path_factory, ops):
    sim = SimBackend(4096)
    fb = FileBackend(4096, tmp_path_factory.mktemp("fb"))
    assert _replay(sim, ops) == _replay(fb, ops)
    assert sim.stats == fb.stats
    fb.shutdown()


@settings(max_examples=50, deadline=None)
@given(ops_strategy)
def test_pages_written_equal_pages_read_back(ops):
    backend = SimBackend(4096)
    parts = [PartitionFile(backend, "x", 256, j) for j in range(3)]
    for kind, pid, n in ops:
        if kind == "spill":
            parts[pid].spill()
        else:
            parts[pid].append(_keys(n), _keys(n))
    rels = [p.finish() for p in parts]
    written = backend.stats.seq_writes + backend.stats.rand_writes
    for rel in rels:
        if rel is not None:
            read_all(rel)
    read = backend.stats.seq_reads + backend.stats.rand_reads
    assert written == read == sum(r.pages for r in rels if r is not None)
