"""Executable joins over the storage layer.

Every executor returns a :class:`JoinResult` whose ``io`` is the delta of the
backend's counters over the join, so relations generated beforehand on the
same backend do not leak into the measurement.  In-memory hash tables are
sorted key arrays; they are charged ``ceil(records * F / b_R)`` pages.
"""

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .core_types import IoStats, JoinConfig, ceil_div
from .cost_model import (GHJ, NBJ, SMJ, dhh_layout, ghj_cost,
                         nbj_chunks, nbj_cost, pick_partition_join)
from .hashing import MASK64, mix64, mix64_int, split_hash
from .nocap import McvList, PartitionPlan, nocap_plan, rounded_part_id
from .storage import PartitionFile, Relation, read_all, scan

MAX_RECURSION = 3
HOT_MEMORY_SHARE = 0.02
HOT_FREQUENCY_SHARE = 0.02
SKEW_MODES = ("off", "fixed", "histojoin")

_EMPTY = np.zeros(0, dtype=np.uint64)


@dataclass
class JoinResult:
    output_count: int
    digest: int
    io: IoStats
    wall_ms: float
    algo: str
    details: dict = field(default_factory=dict)

    def normalized(self, config: JoinConfig) -> float:
        return self.io.normalized(config.device)


def verify(a, b) -> bool:
    return a.output_count == b.output_count and a.digest == b.digest


# output digest

def pair_hash(keys, r_tags, s_tags) -> np.ndarray:
    inner = mix64(np.asarray(s_tags, dtype=np.uint64), 3) ^ np.asarray(r_tags, dtype=np.uint64)
    return mix64(np.asarray(keys, dtype=np.uint64) ^ mix64(inner, 2), 1)


def pair_hash_int(key, r_tag, s_tag) -> int:
    inner = mix64_int(s_tag, 3) ^ r_tag
    return mix64_int(key ^ mix64_int(inner, 2), 1)


class _Output:
    def __init__(self):
        self.count = 0
        self.digest = 0

    def add(self, keys, r_tags, s_tags):
        if len(keys) == 0:
            return
        self.count += len(keys)
        h = pair_hash(keys, r_tags, s_tags)
        self.digest = (self.digest + int(h.sum(dtype=np.uint64))) & MASK64


def oracle_join(r_keys, r_tags, s_keys, s_tags):
    """(count, digest) by a plain dictionary join; independent of the paged executors."""
    table = dict(zip(np.asarray(r_keys).tolist(), np.asarray(r_tags).tolist()))
    count = digest = 0
    for key, s_tag in zip(np.asarray(s_keys).tolist(), np.asarray(s_tags).tolist()):
        r_tag = table.get(key)
        if r_tag is not None:
            count += 1
            digest = (digest + pair_hash_int(key, r_tag, s_tag)) & MASK64
    return count, digest


class HashTable:
    """In-memory build side with unique keys."""

    def __init__(self, keys=_EMPTY, tags=_EMPTY):
        order = np.argsort(keys, kind="stable")
        self.keys = np.asarray(keys, dtype=np.uint64)[order]
        self.tags = np.asarray(tags, dtype=np.uint64)[order]
        if len(self.keys) > 1 and np.any(self.keys[1:] == self.keys[:-1]):
            raise ValueError("build side has duplicate keys; R must be keyed")

    def __len__(self):
        return len(self.keys)

    def contains(self, keys) -> np.ndarray:
        if len(self.keys) == 0:
            return np.zeros(len(keys), dtype=bool)
        idx = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
        return self.keys[idx] == keys

    def probe(self, keys, tags, out: _Output) -> np.ndarray:
        """Join probe records into ``out``; returns the matched mask."""
        if len(self.keys) == 0 or len(keys) == 0:
            return np.zeros(len(keys), dtype=bool)
        idx = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
        hit = self.keys[idx] == keys
        out.add(keys[hit], self.tags[idx[hit]], tags[hit])
        return hit


class _Meter:
    def __init__(self, backend, algo):
        self.backend = backend
        self.algo = algo
        self.start_io = backend.stats.copy()
        self.start = time.perf_counter()
        self.out = _Output()
        self.details = {}

    def result(self) -> JoinResult:
        return JoinResult(self.out.count, self.out.digest,
                          self.backend.stats - self.start_io,
                          (time.perf_counter() - self.start) * 1000, self.algo, self.details)


def _check(R: Relation, S: Relation, B: int, minimum: int):
    if B < minimum:
        raise ValueError(f"need at least {minimum} buffer pages, got B={B}")
    if R.backend is not S.backend:
        raise ValueError("R and S must live on the same backend")


# nested block join

def _nbj(R: Relation, S: Relation, cfg: JoinConfig, out: _Output, stats: dict):
    """Chunked nested block join with R as the build side.

    The chunk count follows the page-level estimate unless the record
    capacity of a chunk demands more.  A page straddling two chunks is read
    once and its remaining records carry over to the next chunk.
    """
    if R.n == 0:
        return
    chunks = max(nbj_chunks(R.pages, cfg.B, cfg.F), ceil_div(R.n, cfg.c_R))
    per_chunk = ceil_div(R.n, chunks)
    b = R.records_per_page
    carry_k, carry_t = _EMPTY, _EMPTY
    next_page = 0
    done = 0
    for _ in range(chunks):
        want = min(per_chunk, R.n - done)
        need_pages = ceil_div(done + want, b) - next_page
        keys, tags = R.backend.read_pages(R, next_page, need_pages)
        next_page += need_pages
        keys, tags = np.concatenate([carry_k, keys]), np.concatenate([carry_t, tags])
        table = HashTable(keys[:want], tags[:want])
        carry_k, carry_t = keys[want:], tags[want:]
        done += want
        for s_keys, s_tags in scan(S):
            table.probe(s_keys, s_tags, out)
    stats["nbj_chunks"] = stats.get("nbj_chunks", 0) + chunks


def run_nbj(R: Relation, S: Relation, B: int, config: JoinConfig) -> JoinResult:
    _check(R, S, B, 3)
    cfg = config.with_buffer(B)
    meter = _Meter(R.backend, NBJ)
    _nbj(R, S, cfg, meter.out, meter.details)
    return meter.result()


# partitioning helpers

def _partition(rel: Relation, pids_of, fanout: int, prefix: str, spill_all=True):
    """Hash-partition a relation into spilled PartitionFiles (one input page, fanout outputs)."""
    parts = [PartitionFile(rel.backend, prefix, rel.record_size, j) for j in range(fanout)]
    if spill_all:
        for p in parts:
            p.spill()
    for keys, tags in scan(rel):
        _route(parts, pids_of(keys), keys, tags)
    return [p.finish() for p in parts]


def _route(parts, pids, keys, tags):
    if len(keys) == 0:
        return
    order = np.argsort(pids, kind="stable")
    pids, keys, tags = pids[order], keys[order], tags[order]
    bounds = np.flatnonzero(np.diff(pids)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(pids)]])
    for s, e in zip(starts.tolist(), ends.tolist()):
        parts[int(pids[s])].append(keys[s:e], tags[s:e])


def _hash_pids(level, fanout):
    m = np.uint64(fanout)
    return lambda keys: (split_hash(keys, level) % m).astype(np.int64)


def _drop_all(rels):
    for rel in rels:
        if rel is not None:
            rel.backend.drop(rel)


def join_partition(R: Relation, S: Relation, cfg: JoinConfig, out: _Output, stats: dict,
                   depth: int = 0):
    """Join one pair of partitions with the cheapest of NBJ, GHJ and SMJ."""
    if R is None or S is None or R.n == 0 or S.n == 0:
        return
    algo, _ = pick_partition_join(R.pages, S.pages, cfg.B, cfg.F, cfg.device)
    if algo == GHJ and depth >= MAX_RECURSION:
        algo = NBJ
        stats["recursion_cap_hits"] = stats.get("recursion_cap_hits", 0) + 1
    stats.setdefault("partition_joins", {}).setdefault(algo, 0)
    stats["partition_joins"][algo] += 1
    if algo == NBJ:
        _nbj(R, S, cfg, out, stats)
    elif algo == GHJ:
        _grace(R, S, cfg, out, stats, cfg.B - 1, depth + 1)
    else:
        _smj(R, S, cfg, out, stats)


def _grace(R, S, cfg, out, stats, fanout, level):
    pids = _hash_pids(level, fanout)
    r_parts = _partition(R, pids, fanout, f"{R.name}.g{level}")
    s_parts = _partition(S, pids, fanout, f"{S.name}.g{level}")
    for r, s in zip(r_parts, s_parts):
        join_partition(r, s, cfg, out, stats, level)
    _drop_all(r_parts + s_parts)


def _fits_in_memory(pages, cfg: JoinConfig) -> bool:
    return math.ceil(pages * cfg.F - 1e-9) <= cfg.B - 2


def run_ghj(R: Relation, S: Relation, B: int, config: JoinConfig, fanout=None,
            allow_nbj=True) -> JoinResult:
    """Grace hash join; runs NBJ instead when its estimate is lower."""
    _check(R, S, B, 4)
    cfg = config.with_buffer(B)
    meter = _Meter(R.backend, GHJ)
    nbj_est = nbj_cost(R.pages, S.pages, B, cfg.F).value
    ghj_est = ghj_cost(R.pages, S.pages, B, cfg.F, cfg.device).value
    if (allow_nbj and nbj_est < ghj_est) or _fits_in_memory(R.pages, cfg):
        meter.details["fallback"] = NBJ
        _nbj(R, S, cfg, meter.out, meter.details)
    else:
        _grace(R, S, cfg, meter.out, meter.details, fanout or B - 1, 0)
    return meter.result()


# sort-merge join

def _sort_runs(rel: Relation, B: int):
    runs = []
    b = rel.records_per_page
    for keys, tags in scan(rel, pages_per_batch=B):
        order = np.argsort(keys, kind="stable")
        run = rel.backend.temp(f"{rel.name}.run", rel.record_size)
        rel.backend.write_records(run, keys[order], tags[order], final=len(keys) % b != 0)
        rel.backend.close(run)
        runs.append(run)
    return runs


def _merge_runs(runs, fan_in):
    """One merge level: every group of fan_in runs is rewritten, singletons included."""
    merged = []
    for g in range(0, len(runs), fan_in):
        group = runs[g:g + fan_in]
        keys, tags = _read_runs(group)
        order = np.argsort(keys, kind="stable")
        first = group[0]
        run = first.backend.temp(f"{first.name}.m", first.record_size)
        b = run.records_per_page
        first.backend.write_records(run, keys[order], tags[order], final=len(keys) % b != 0)
        first.backend.close(run)
        merged.append(run)
        _drop_all(group)
    return merged


def _read_runs(runs):
    parts = [read_all(r) for r in runs]
    if not parts:
        return _EMPTY, _EMPTY
    return np.concatenate([k for k, _ in parts]), np.concatenate([t for _, t in parts])


def _smj(R, S, cfg, out, stats):
    B = cfg.B
    r_runs, s_runs = _sort_runs(R, B), _sort_runs(S, B)
    levels = 0
    while len(r_runs) + len(s_runs) > B - 1:
        if B - 1 < 2:
            raise ValueError("merging needs at least 3 buffer pages")
        r_runs, s_runs = _merge_runs(r_runs, B - 1), _merge_runs(s_runs, B - 1)
        levels += 1
    stats["smj_merge_levels"] = max(stats.get("smj_merge_levels", 0), levels)
    # fused final merge: every run is read exactly once
    r_keys, r_tags = _read_runs(r_runs)
    s_keys, s_tags = _read_runs(s_runs)
    HashTable(r_keys, r_tags).probe(s_keys, s_tags, out)
    _drop_all(r_runs + s_runs)


def run_smj(R: Relation, S: Relation, B: int, config: JoinConfig) -> JoinResult:
    _check(R, S, B, 3)
    cfg = config.with_buffer(B)
    meter = _Meter(R.backend, SMJ)
    _smj(R, S, cfg, meter.out, meter.details)
    return meter.result()


# dynamic hybrid hashing

def stage_partitions(pids, parts: int, capacity: int) -> np.ndarray:
    """Replay staging over the build stream; returns which partitions were spilled.

    Whenever staged records exceed ``capacity`` the largest staged partition
    is spilled (lowest id on ties).  Records of a spilled partition no longer
    occupy staging memory.
    """
    staged = [0] * parts
    spilled = [False] * parts
    total = 0
    for p in pids.tolist():
        if spilled[p]:
            continue
        staged[p] += 1
        total += 1
        if total > capacity:
            victim = max(range(parts), key=lambda j: (staged[j], -j))
            spilled[victim] = True
            total -= staged[victim]
            staged[victim] = 0
    return np.array(spilled, dtype=bool)


class _HybridPartitioner:
    """Hashed part of a hybrid join: stages what fits, spills the rest."""

    def __init__(self, backend, memory, fit_limit, n_build, cfg, prefix, rounded):
        self.cfg = cfg
        pages_build = ceil_div(n_build, cfg.b_R)
        self.parts, staging = dhh_layout(pages_build, memory, cfg.F, fit_limit)
        self.capacity = math.floor(staging * cfg.b_R / cfg.F + 1e-9)
        self.n_build = n_build
        self.rounded = rounded
        self.backend = backend
        self.prefix = prefix
        self.spilled = np.zeros(self.parts, dtype=bool)

    @property
    def in_memory(self) -> bool:
        return self.parts == 0

    def pids(self, keys):
        h = split_hash(keys, 0)
        if self.rounded:
            return rounded_part_id(h, self.n_build, self.cfg.c_R_star, self.parts,
                                   self.cfg.c_R, self.cfg.beta)
        return (h % np.uint64(self.parts)).astype(np.int64)

    def build(self, keys, tags, record_size):
        """Returns (in-memory table of staged records, spilled R partitions)."""
        if self.in_memory:
            return HashTable(keys, tags), []
        pids = self.pids(keys)
        self.spilled = stage_partitions(pids, self.parts, self.capacity)
        keep = ~self.spilled[pids]
        files = [PartitionFile(self.backend, f"{self.prefix}R", record_size, j)
                 for j in range(self.parts)]
        for j in np.flatnonzero(self.spilled).tolist():
            files[j].spill()
        _route(files, pids[~keep], keys[~keep], tags[~keep])
        return HashTable(keys[keep], tags[keep]), [f.finish() for f in files]

    def probe_files(self, record_size):
        files = [PartitionFile(self.backend, f"{self.prefix}S", record_size, j)
                 for j in range(self.parts)]
        for j in np.flatnonzero(self.spilled).tolist():
            files[j].spill()
        return files

    def route_probe(self, files, table, keys, tags, out):
        """Probe staged partitions on the fly and write the rest to their partition."""
        if self.in_memory:
            hit = table.probe(keys, tags, out)
            return int((~hit).sum())
        pids = self.pids(keys)
        to_disk = self.spilled[pids]
        mem_k, mem_t = keys[~to_disk], tags[~to_disk]
        hit = table.probe(mem_k, mem_t, out)
        _route(files, pids[to_disk], keys[to_disk], tags[to_disk])
        return int((~hit).sum())


def _hot_table(mcv: McvList, skew: str, n_S: int, B: int, cfg: JoinConfig):
    """Hot keys and the pages reserved for them, per the fixed-threshold heuristic."""
    if skew == "off" or mcv is None or mcv.k == 0:
        return _EMPTY, 0
    threshold = 0 if skew == "histojoin" else HOT_FREQUENCY_SHARE * n_S
    if int(mcv.freqs.sum()) <= threshold:
        return _EMPTY, 0
    pages = math.floor(HOT_MEMORY_SHARE * B)
    capacity = math.floor(pages * cfg.b_R / cfg.F + 1e-9)
    if capacity == 0:
        return _EMPTY, 0
    return mcv.keys[:capacity], pages


def run_dhh(R: Relation, S: Relation, B: int, config: JoinConfig, skew: str = "off",
            mcv: McvList = None, memory=None, fit_limit=None,
            rounded_hash=False) -> JoinResult:
    """Dynamic hybrid hash join, optionally with a hot-key table (skew fixed/histojoin).

    ``memory`` overrides the pages the DHH instance sizes itself against
    (default B minus the hot-key reservation) and ``fit_limit`` the page
    count under which R is joined entirely in memory (default memory - 2);
    ``rounded_hash`` switches partition ids to rounded hashing.
    """
    _check(R, S, B, 4)
    if skew not in SKEW_MODES:
        raise ValueError(f"skew mode must be one of {SKEW_MODES}, got {skew!r}")
    if skew != "off" and mcv is None:
        raise ValueError("skew handling needs an MCV list")
    cfg = config.with_buffer(B)
    meter = _Meter(R.backend, "histojoin" if skew == "histojoin" else "dhh")
    hot_keys, hot_pages = _hot_table(mcv, skew, S.n, B, cfg)
    if memory is None:
        memory = B - hot_pages
    if fit_limit is None:
        fit_limit = memory - 2
    meter.details.update(hot_keys=len(hot_keys), hot_pages=hot_pages, memory=memory)
    _hybrid(R, S, cfg, meter, hot_keys, _EMPTY, None, memory, fit_limit, rounded_hash)
    return meter.result()


def run_histojoin(R, S, B, config, mcv) -> JoinResult:
    return run_dhh(R, S, B, config, "histojoin", mcv)


def _hybrid(R, S, cfg, meter, cached_keys, designated_keys, designated_parts, memory,
            fit_limit, rounded):
    """Shared body of DHH and NOCAP.

    Build records split three ways: cached keys (in-memory table),
    designated keys (explicit disk partitions) and the rest (hashed, staged
    until memory runs out).  The probe side is routed the same way.
    """
    backend, out, details = R.backend, meter.out, meter.details
    r_keys, r_tags = read_all(R)
    cached = HashTable(*_select(r_keys, r_tags, cached_keys))
    designated = HashTable(designated_keys, np.asarray(designated_parts, dtype=np.uint64)) \
        if len(designated_keys) else None
    is_cached = cached.contains(r_keys)
    is_designated = designated.contains(r_keys) if designated else np.zeros(len(r_keys), bool)
    rest = ~(is_cached | is_designated)
    n_rest = int(rest.sum())
    m_disk = int(designated_parts.max()) + 1 if designated is not None else 0

    hashed = _HybridPartitioner(backend, memory, fit_limit, n_rest, cfg, f"{R.name}.h.",
                                rounded) if n_rest else None
    if hashed is None:
        staged, r_spilled = HashTable(), []
    else:
        staged, r_spilled = hashed.build(r_keys[rest], r_tags[rest], R.record_size)
    d_files = [PartitionFile(backend, f"{R.name}.d", R.record_size, j) for j in range(m_disk)]
    for f in d_files:
        f.spill()
    if m_disk:
        dk, dt = r_keys[is_designated], r_tags[is_designated]
        _route(d_files, _lookup(designated, dk), dk, dt)
    r_designated = [f.finish() for f in d_files]

    s_d_files = [PartitionFile(backend, f"{S.name}.d", S.record_size, j) for j in range(m_disk)]
    for f in s_d_files:
        f.spill()
    s_files = hashed.probe_files(S.record_size) if hashed and not hashed.in_memory else []
    unmatched = 0
    for s_keys, s_tags in scan(S):
        hot = cached.contains(s_keys)
        cached.probe(s_keys[hot], s_tags[hot], out)
        rest_mask = ~hot
        if m_disk:
            dmask = rest_mask & designated.contains(s_keys)
            _route(s_d_files, _lookup(designated, s_keys[dmask]), s_keys[dmask], s_tags[dmask])
            rest_mask &= ~dmask
        if hashed is not None:
            unmatched += hashed.route_probe(s_files, staged, s_keys[rest_mask],
                                            s_tags[rest_mask], out)
        else:
            unmatched += int(rest_mask.sum())
    s_spilled = [f.finish() for f in s_files]
    s_designated = [f.finish() for f in s_d_files]

    for r, s in zip(r_designated + r_spilled, s_designated + s_spilled):
        join_partition(r, s, cfg, out, details)
    _drop_all(r_designated + r_spilled + s_designated + s_spilled)
    details.update(
        partitions=hashed.parts if hashed else 0,
        spilled=int(hashed.spilled.sum()) if hashed is not None else 0,
        staged_records=len(staged), cached_records=len(cached), m_disk=m_disk,
        dropped_probe_records=unmatched)


def _select(keys, tags, wanted):
    if len(wanted) == 0:
        return _EMPTY, _EMPTY
    mask = np.isin(keys, wanted)
    return keys[mask], tags[mask]


def _lookup(table: HashTable, keys) -> np.ndarray:
    idx = np.searchsorted(table.keys, keys)
    return table.tags[idx].astype(np.int64)


# correlation-aware hybrid join

def run_nocap(R: Relation, S: Relation, B: int, config: JoinConfig, mcv: McvList,
              plan: PartitionPlan = None) -> JoinResult:
    """Partition per a NOCAP plan: cached keys join on the fly, designated keys get
    explicit partitions and the remaining keys go through rounded-hash DHH."""
    _check(R, S, B, 4)
    cfg = config.with_buffer(B)
    if plan is None:
        plan = nocap_plan(mcv, R.n, S.n, B, cfg)
    meter = _Meter(R.backend, "nocap")
    meter.details.update(k_mem=plan.k_mem, k_disk=plan.k_disk, m_rest=plan.m_rest,
                         estimated_cost=plan.estimated_cost)
    _hybrid(R, S, cfg, meter, plan.cached_keys, plan.designated_keys, plan.designated_parts,
            plan.m_rest, plan.m_rest - 1, rounded=True)
    return meter.result()


EXECUTORS = {
    "nbj": lambda R, S, B, cfg, mcv=None: run_nbj(R, S, B, cfg),
    "ghj": lambda R, S, B, cfg, mcv=None: run_ghj(R, S, B, cfg),
    "smj": lambda R, S, B, cfg, mcv=None: run_smj(R, S, B, cfg),
    "dhh": lambda R, S, B, cfg, mcv=None: run_dhh(R, S, B, cfg),
    "dhh-fixed": lambda R, S, B, cfg, mcv=None: run_dhh(R, S, B, cfg, "fixed", mcv),
    "histojoin": lambda R, S, B, cfg, mcv=None: run_histojoin(R, S, B, cfg, mcv),
    "nocap": lambda R, S, B, cfg, mcv=None: run_nocap(R, S, B, cfg, mcv),
}


def run_named(name: str, R, S, B, config, mcv=None) -> JoinResult:
    try:
        runner = EXECUTORS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(EXECUTORS)}") \
            from None
    return runner(R, S, B, config, mcv)
