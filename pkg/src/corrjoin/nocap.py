"""Near-optimal planning from a most-common-values list under a strict memory budget."""

from dataclasses import dataclass, field
import math

import numpy as np

from .core_types import JoinConfig, ceil_div, prefix_sums
from .cost_model import INF, MIN_DHH_PARTITIONS, dhh_rest_model, rh_disabled
from .ocap import get_cut, partition_dp

ID_BYTES = 4


@dataclass(frozen=True, eq=False)
class McvList:
    """Tracked keys with their match counts, most frequent first."""

    keys: np.ndarray
    freqs: np.ndarray

    def __post_init__(self):
        if len(self.keys) != len(self.freqs):
            raise ValueError("keys and frequencies differ in length")
        if len(self.freqs) and np.any(self.freqs <= 0):
            raise ValueError("MCV frequencies must be positive")
        if len(np.unique(self.keys)) != len(self.keys):
            raise ValueError("MCV keys must be distinct")
        if np.any(np.diff(self.freqs) > 0):
            raise ValueError("MCV list must be sorted by frequency, descending")

    @classmethod
    def from_pairs(cls, pairs):
        pairs = sorted(pairs, key=lambda kv: (-kv[1], kv[0]))
        keys = np.array([k for k, _ in pairs], dtype=np.uint64)
        freqs = np.array([f for _, f in pairs], dtype=np.int64)
        return cls(keys, freqs)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=np.int64))

    @property
    def k(self) -> int:
        return len(self.keys)

    def __len__(self):
        return self.k

    def entries(self):
        return list(zip(self.keys.tolist(), self.freqs.tolist()))


def read_mcv_file(path) -> McvList:
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, freq = line.split(",")
            pairs.append((int(key), int(freq)))
    return McvList.from_pairs(pairs)


def write_mcv_file(path, mcv: McvList):
    with open(path, "w") as fh:
        fh.writelines(f"{k},{f}\n" for k, f in mcv.entries())


@dataclass(frozen=True)
class MemoryBreakdown:
    b_hs: int
    b_ht: int
    b_f: int
    m_disk: int
    m_rest: int
    feasible: bool = True

    @property
    def total(self) -> int:
        return self.b_hs + self.b_ht + self.b_f + self.m_disk + self.m_rest


def _pages(bytes_or_records, per_page):
    return math.ceil(bytes_or_records / per_page - 1e-9) if bytes_or_records > 0 else 0


def hash_table_pages(k_mem, config: JoinConfig, literal=False) -> int:
    if literal:
        return _pages(config.b_R * k_mem / config.F, 1)
    return _pages(k_mem * config.F, config.b_R)


def hash_set_pages(k_mem, config: JoinConfig, literal=False) -> int:
    ks, ps = config.key_size, config.page_size
    scale = 1 / config.F if literal else config.F
    return _pages(ks * k_mem * scale, ps)


def designation_map_pages(k_disk, config: JoinConfig, literal=False) -> int:
    ks, ps = config.key_size, config.page_size
    scale = 1 / config.F if literal else config.F
    return _pages((ks + ID_BYTES) * k_disk * scale, ps)


def memory_breakdown(k_mem, k_disk, m_disk, config: JoinConfig, literal=False,
                     rest_nonempty=True) -> MemoryBreakdown:
    b_ht = hash_table_pages(k_mem, config, literal)
    b_hs = hash_set_pages(k_mem, config, literal)
    b_f = designation_map_pages(k_disk, config, literal)
    m_rest = config.B - 2 - b_hs - b_ht - b_f - m_disk
    feasible = m_rest >= 0 or not rest_nonempty
    return MemoryBreakdown(b_hs, b_ht, b_f, m_disk, max(m_rest, 0), feasible)


@dataclass
class PartitionPlan:
    k_mem: int
    k_disk: int
    m_disk: int
    m_rest: int
    cached_keys: np.ndarray
    designated_keys: np.ndarray
    designated_parts: np.ndarray
    cut_points: list
    estimated_cost: float
    breakdown: MemoryBreakdown
    pure_dhh_cost: float
    n_rest_keys: int = 0
    s_rest_records: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def designated(self) -> dict:
        return dict(zip(self.designated_keys.tolist(), self.designated_parts.tolist()))

    def memory_ok(self, config: JoinConfig) -> bool:
        b = self.breakdown
        return b.b_hs + b.b_ht + b.b_f + self.m_disk + self.m_rest <= config.B - 2

    def describe(self, limit=20) -> str:
        """Text dump of the plan; ``limit`` caps listed keys per section (None lists all)."""
        cached = _listing([str(k) for k in self.cached_keys.tolist()], limit)
        designated = _listing([f"{k}:{p}" for k, p in self.designated.items()], limit)
        return (f"[cached] k_mem={self.k_mem}\n{cached}\n"
                f"[designated] k_disk={self.k_disk} m_disk={self.m_disk}\n{designated}\n"
                f"[rest] m_rest={self.m_rest}\n"
                f"[estimate] cost={self.estimated_cost:.3f} pure_dhh={self.pure_dhh_cost:.3f}\n")


def _listing(items, limit):
    if limit is None or len(items) <= limit:
        return " ".join(items)
    return " ".join(items[:limit]) + f" ... ({len(items) - limit} more)"


def rest_cost_vector(n_rest, s_rest, m_rest, config: JoinConfig):
    """Vectorised g_dhh; agrees with cost_model.dhh_rest_model element-wise."""
    n_rest, s_rest, m_rest = np.broadcast_arrays(np.asarray(n_rest, dtype=np.int64),
                                                 np.asarray(s_rest, dtype=np.int64),
                                                 np.asarray(m_rest, dtype=np.int64))
    F, mu = config.F, config.device.mu
    c_R, c_star, beta = config.c_R, config.c_R_star, config.beta
    pR = -(-n_rest // config.b_R)
    pS = -(-s_rest // config.b_S)
    fits = np.ceil(pR * F - 1e-9) <= m_rest - 1
    live = (n_rest > 0) & (m_rest > 0) & ~fits
    m = np.maximum(m_rest, 3).astype(np.float64)
    wanted = np.maximum(MIN_DHH_PARTITIONS, np.ceil((pR * F - m) / (m - 1) - 1e-9))
    parts = np.minimum(wanted, m - 2)
    staged = np.minimum(1.0, (m - 2 - parts) / np.maximum(pR * F, 1e-12))
    passes = _passes_vector(np.maximum(n_rest, 1).astype(np.float64), parts, c_star, c_R, beta)
    cost = (1 - staged) * (mu * (pR + pS) + pR + passes * pS)
    downgraded = np.maximum(np.where(live, m_rest, 1), 1)
    cost = np.where(m_rest < 3, _downgraded_vector(pR, pS, downgraded, config), cost)
    cost = np.where(live, cost, 0.0)
    return np.where((n_rest > 0) & (m_rest <= 0), INF, cost)


def _ghj_runs_vector(pR, B, F):
    size = pR * F
    runs = np.zeros(np.shape(pR))
    for _ in range(64):
        over = size > B - 2 + 1e-9
        if not over.any():
            break
        runs += over
        size = np.where(over, size / (B - 1), size)
    return runs


def _smj_passes_vector(pR, pS, B):
    runs_R, runs_S = -(-pR // B), -(-pS // B)
    levels = np.zeros(np.shape(pR))
    for _ in range(64):
        over = runs_R + runs_S > B - 1
        if not over.any():
            break
        levels += over
        runs_R = np.where(over, -(-runs_R // (B - 1)), runs_R)
        runs_S = np.where(over, -(-runs_S // (B - 1)), runs_S)
    return 1 + levels


def _downgraded_vector(pR, pS, parts, config: JoinConfig):
    """Mirror of cost_model.downgraded_rest_cost."""
    B, F, dev = config.B, config.F, config.device
    part_R, part_S = pR / parts, pS / parts
    nbj = part_R + np.ceil(part_R * F / (B - 2) - 1e-9) * part_S
    ghj = (1 + _ghj_runs_vector(part_R, B, F) * (1 + dev.mu)) * (part_R + part_S)
    smj = (1 + _smj_passes_vector(part_R, part_S, B) * (1 + dev.tau)) * (part_R + part_S)
    best = np.minimum(np.minimum(nbj, ghj), smj)
    return dev.mu * (pR + pS) + parts * best


def _passes_vector(w, m, c_star, c_R, beta):
    per_part = w / (m * c_star)
    lo = np.floor(per_part + 1e-12)
    hi = np.ceil(per_part - 1e-12)
    t = np.maximum(1, np.ceil(w / (m * c_R) - 1e-12))
    disabled = w / m > beta * t * c_R
    sigma = t * c_R * m / w - 1
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        overflow = (np.exp(sigma) / (1 + sigma) ** (1 + sigma)) ** (w / m)
    chernoff = (1 - overflow) * hi + overflow * (hi + 1)
    chunks = np.ceil(w / c_star - 1e-12)
    gamma = (np.mod(chunks, m) * lo * c_star) / w
    rounded = gamma * lo + (1 - gamma) * hi
    return np.where(disabled, chernoff, rounded)


@dataclass
class _Best:
    cost: float = INF
    i1: int = 0
    i2: int = 0
    j: int = 0

    def offer(self, cost, i1, i2, j):
        if (cost, i1, j, i2) < (self.cost, self.i1, self.j, self.i2):
            self.cost, self.i1, self.i2, self.j = cost, i1, i2, j


def _designated_dp_cost(block_desc, j, c_R):
    """Probe cost (S records x passes) of the best split of a designated block."""
    if len(block_desc) == 0:
        return 0
    if j == 1:
        return int(block_desc.sum()) * ceil_div(len(block_desc), c_R)
    asc = np.sort(block_desc)
    dp = partition_dp(asc, len(asc), j, c_R, "both" if c_R >= j else "weakly_ordered")
    return dp.optimum


class _Evaluator:
    def __init__(self, mcv, n, n_S, config, literal, use_ghj_rest):
        self.cfg = config
        self.freqs = mcv.freqs.astype(np.int64)
        self.prefix = prefix_sums(self.freqs)
        self.n, self.n_S = n, n_S
        self.literal = literal
        self.use_ghj_rest = use_ghj_rest
        self.top = min(mcv.k, config.c_R)

    def base_budget(self, i1):
        c = self.cfg
        return (c.B - 2 - hash_table_pages(i1, c, self.literal)
                - hash_set_pages(i1, c, self.literal))

    def evaluate(self, i1, i2, j):
        """Estimated extra I/O of a candidate; vectorised over i2 (j fixed)."""
        c = self.cfg
        i2 = np.asarray(i2, dtype=np.int64)
        f_pages = np.array([designation_map_pages(int(x), c, self.literal) for x in i2]) \
            if i2.size < 64 else self._map_pages_vec(i2)
        m_rest = self.base_budget(i1) - f_pages - j
        block_sum = self.prefix[i1 + i2] - self.prefix[i1]
        r_pages = -(-i2 // c.b_R)
        if j <= 1:
            probe_records = block_sum * -(-i2 // c.c_R)
        else:
            probe_records = np.array([_designated_dp_cost(self.freqs[i1:i1 + x], j, c.c_R)
                                      for x in i2.tolist()], dtype=np.int64)
        probe = r_pages + np.ceil(probe_records / c.b_S - 1e-9)
        part = c.device.mu * (r_pages + -(-block_sum // c.b_S))
        n_rest = self.n - i1 - i2
        s_rest = self.n_S - self.prefix[i1 + i2]
        if self.use_ghj_rest:
            rest = np.array([dhh_rest_model(int(a), int(b), int(m), c, True).cost
                             for a, b, m in zip(n_rest, s_rest, m_rest)])
        else:
            rest = rest_cost_vector(n_rest, s_rest, np.maximum(m_rest, 0), c)
        rest = np.where((m_rest < 0) | ((m_rest == 0) & (n_rest > 0)), INF, rest)
        return probe + part + rest

    def _map_pages_vec(self, i2):
        c = self.cfg
        scale = 1 / c.F if self.literal else c.F
        raw = (c.key_size + ID_BYTES) * i2 * scale / c.page_size
        return np.where(i2 > 0, np.ceil(raw - 1e-9), 0).astype(np.int64)

    def scan(self, best, i1_values, i2_lo=0, i2_hi=None, stride=1):
        for i1 in i1_values:
            if self.base_budget(i1) < 0:
                break
            hi = self.top - i1 if i2_hi is None else min(i2_hi, self.top - i1)
            if hi < i2_lo:
                continue
            i2 = np.arange(i2_lo, hi + 1, stride, dtype=np.int64)
            if i2[-1] != hi:
                i2 = np.append(i2, hi)
            max_j = ceil_div(int(i2[-1]), self.cfg.c_R)
            for j in range(0, max_j + 1):
                # j ranges over [min(i2, 1), ceil(i2 / c_R)]
                ok = (np.minimum(i2, 1) <= j) & (j <= -(-i2 // self.cfg.c_R))
                if not ok.any():
                    continue
                cand = i2[ok]
                costs = self.evaluate(i1, cand, j)
                pick = int(np.argmin(costs))
                best.offer(float(costs[pick]), int(i1), int(cand[pick]), j)


MAX_FULL_CANDIDATES = 4_000_000


def nocap_plan(mcv: McvList, n, n_S, B, config: JoinConfig, literal_memory=False,
               use_ghj_rest=False, max_candidates=MAX_FULL_CANDIDATES) -> PartitionPlan:
    """Pick cached, designated and hashed key sets minimising the estimated I/O.

    Candidates follow the frequency order: the hottest k_mem keys are cached,
    the next k_disk keys get an explicit partition, the rest are hashed.  The
    all-hashed candidate is always evaluated, so the estimate never exceeds it.
    """
    if B < 3:
        raise ValueError(f"need at least 3 buffer pages, got B={B}")
    cfg = config.with_buffer(B)
    ev = _Evaluator(mcv, n, n_S, cfg, literal_memory, use_ghj_rest)
    best = _Best()
    top = ev.top
    cells = (top + 1) * (top + 2) // 2
    if cells <= max_candidates:
        ev.scan(best, range(0, top + 1))
    else:
        stride = math.ceil(math.sqrt(cells / max_candidates))
        coarse = list(range(0, top + 1, stride))
        if coarse[-1] != top:
            coarse.append(top)
        ev.scan(best, coarse, stride=stride)
        lo1, hi1 = max(0, best.i1 - stride), min(top, best.i1 + stride)
        ev.scan(best, range(lo1, hi1 + 1), max(0, best.i2 - stride), best.i2 + stride)
    pure = float(ev.evaluate(0, np.array([0]), 0)[0])
    best.offer(pure, 0, 0, 0)
    if best.cost == INF:
        raise ValueError(f"no feasible plan for B={B}")
    return _assemble(mcv, ev, best, pure)


def _assemble(mcv, ev, best, pure):
    cfg = ev.cfg
    i1, i2, j = best.i1, best.i2, best.j
    block = ev.freqs[i1:i1 + i2]
    keys = mcv.keys[i1:i1 + i2]
    parts = np.zeros(i2, dtype=np.int64)
    cuts = []
    if i2 and j > 1:
        order = np.argsort(block, kind="stable")  # ascending for the DP
        dp = partition_dp(block[order], i2, j, cfg.c_R,
                          "both" if cfg.c_R >= j else "weakly_ordered")
        cut = get_cut(dp, i2, j, block[order])
        parts[order] = cut.assignment
        cuts = cut.cut_points()
    elif i2:
        cuts = [i2]
    breakdown = memory_breakdown(i1, i2, j, cfg, ev.literal,
                                 rest_nonempty=ev.n - i1 - i2 > 0)
    return PartitionPlan(
        k_mem=i1, k_disk=i2, m_disk=j, m_rest=breakdown.m_rest,
        cached_keys=mcv.keys[:i1].copy(), designated_keys=keys.copy(),
        designated_parts=parts, cut_points=cuts, estimated_cost=best.cost,
        breakdown=breakdown, pure_dhh_cost=pure,
        n_rest_keys=ev.n - i1 - i2, s_rest_records=int(ev.n_S - ev.prefix[i1 + i2]))


def rounded_part_id(key_hash, n_window, c_R_star, m, c_R=None, beta=None):
    """Partition ids that pack hash buckets of about c_R_star keys into m partitions.

    Falls back to plain ``hash mod m`` when there are no more buckets than
    partitions, or (given c_R and beta) when plain partitions would already be
    nearly full.
    """
    h = np.asarray(key_hash, dtype=np.uint64)
    m = int(m)
    if m <= 1:
        return np.zeros(h.shape, dtype=np.int64)
    buckets = math.ceil(n_window / c_R_star - 1e-12) if n_window > 0 else 0
    plain = buckets <= m
    if not plain and c_R is not None and beta is not None:
        plain = rh_disabled(n_window, m, c_R, beta)
    if plain:
        return (h % np.uint64(m)).astype(np.int64)
    return ((h % np.uint64(buckets)) % np.uint64(m)).astype(np.int64)


def partition_passes(sizes, c_R):
    """Probe passes each partition needs when joined chunk by chunk."""
    return tuple(ceil_div(int(s), c_R) for s in sizes)


__all__ = ["McvList", "MemoryBreakdown", "PartitionPlan", "memory_breakdown", "nocap_plan",
           "rounded_part_id", "partition_passes", "rest_cost_vector", "read_mcv_file",
           "write_mcv_file"]
