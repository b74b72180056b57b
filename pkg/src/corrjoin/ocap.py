"""Optimal correlation-aware partitioning.

The planner searches consecutive partitionings of the ascending correlation
table by dynamic programming, optionally restricted by the weakly-ordered
bounds and the chunk-aligned (divisible) grid, and wraps it in a loop over how
many of the hottest keys to keep in memory.  A brute-force oracle and the
cost-preserving rewrite rules used in the optimality argument live here too;
the test-suite drives them.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np

from .core_types import CorrelationTable, JoinConfig, ceil_div, prefix_sums

try:
    from ._dp_kernel import build_table as _build_table
    KERNEL = "cython"
except ImportError:  # pragma: no cover - exercised when the extension is not built
    from ._dp_py import build_table as _build_table
    KERNEL = "python"

from . import _dp_py


def kernel_function(kernel=None):
    """Resolve ``None`` (best available), "cython", "python" or a callable."""
    if kernel is None:
        return _build_table
    if callable(kernel):
        return kernel
    if kernel == "python":
        return _dp_py.build_table
    if kernel == "cython":
        from ._dp_kernel import build_table
        return build_table
    raise ValueError(f"unknown DP kernel {kernel!r}")

PRUNING_MODES = ("none", "weakly_ordered", "divisible", "both")
UNREACHABLE = int(_dp_py.UNREACHABLE)


@dataclass(frozen=True)
class Partitioning:
    """assignment[i] is the partition of the i-th key in ascending CT order."""

    assignment: np.ndarray

    @classmethod
    def from_sizes(cls, sizes):
        sizes = [s for s in sizes if s > 0]
        return cls(np.repeat(np.arange(len(sizes)), sizes).astype(np.int64))

    @property
    def n(self) -> int:
        return len(self.assignment)

    def labels(self):
        return sorted(set(self.assignment.tolist()))

    def members(self):
        order = {}
        for i, p in enumerate(self.assignment.tolist()):
            order.setdefault(p, []).append(i)
        return order

    def is_consecutive(self) -> bool:
        return all(idx[-1] - idx[0] + 1 == len(idx) for idx in self.members().values())

    def blocks(self):
        """Consecutive partitions as (start, size) in CT order; requires consecutiveness."""
        if not self.is_consecutive():
            raise ValueError("partitioning is not consecutive")
        spans = sorted((idx[0], len(idx)) for idx in self.members().values())
        return spans

    def sizes(self):
        return [size for _, size in self.blocks()]

    def cut_points(self):
        """Exclusive end index of every block, in CT order."""
        return [start + size for start, size in self.blocks()]

    def is_weakly_ordered(self, c_R) -> bool:
        chunks = [ceil_div(s, c_R) for s in self.sizes()]
        return all(a >= b for a, b in zip(chunks, chunks[1:]))

    def is_divisible(self, c_R) -> bool:
        return all(s % c_R == 0 for s in self.sizes()[1:])

    def canonical(self) -> "Partitioning":
        """Relabel partitions 0..k-1 by first occurrence."""
        remap = {}
        out = np.empty_like(self.assignment)
        for i, p in enumerate(self.assignment.tolist()):
            out[i] = remap.setdefault(p, len(remap))
        return Partitioning(out)


def _values(ct):
    if isinstance(ct, CorrelationTable):
        return ct.ct
    return np.asarray(ct, dtype=np.int64)


def join_cost(partitioning: Partitioning, ct, c_R) -> int:
    """Sum over partitions of chunk passes times matched S records."""
    values = _values(ct)
    assign = partitioning.assignment
    if len(assign) != len(values):
        raise ValueError("every key needs a partition")
    if len(assign) and assign.min() < 0:
        raise ValueError("unassigned key")
    labels, inverse = np.unique(assign, return_inverse=True)
    sizes = np.bincount(inverse, minlength=len(labels))
    sums = np.bincount(inverse, weights=values, minlength=len(labels)).astype(np.int64)
    return int(np.sum(-(-sizes // c_R) * sums))


@dataclass
class DpTable:
    cost: np.ndarray        # [grid index, partitions]
    last_par: np.ndarray    # grid index where the previous partition ends
    positions: np.ndarray   # record count represented by each grid index
    n: int
    m: int
    c_R: int
    pruning: str

    def index_of(self, i) -> int:
        idx = int(np.searchsorted(self.positions, i))
        if idx >= len(self.positions) or self.positions[idx] != i:
            raise KeyError(f"prefix length {i} is not on the DP grid")
        return idx

    def value(self, i, j) -> int:
        if i == 0:
            return 0
        return int(self.cost[self.index_of(i), j])

    @property
    def optimum(self) -> int:
        if self.n == 0:
            return 0
        return int(self.cost[-1, self.m])


def _check_sorted(values):
    if len(values) > 1 and np.any(values[1:] < values[:-1]):
        raise ValueError("correlation table must be sorted ascending")


def partition_dp(ct, n, m, c_R, pruning="both", kernel=None) -> DpTable:
    if pruning not in PRUNING_MODES:
        raise ValueError(f"pruning must be one of {PRUNING_MODES}")
    if m < 1:
        raise ValueError("need at least one partition")
    table = ct if isinstance(ct, CorrelationTable) else None
    values = _values(ct)[:n]
    _check_sorted(values)
    prefix = table.prefix[:n + 1] if table is not None else prefix_sums(values)
    build = kernel_function(kernel)
    weakly = pruning in ("weakly_ordered", "both")
    divisible = pruning in ("divisible", "both")
    cost, last, pos = build(prefix, n, m, c_R, weakly, divisible)
    return DpTable(cost, last, pos, n, m, c_R, pruning)


def _backtrack_sizes(dp: DpTable, n, m):
    if n == 0:
        return []
    t = dp.index_of(n)
    j = m
    sizes = []
    while j >= 2 and t > 0:
        k = int(dp.last_par[t, j])
        sizes.append(int(dp.positions[t] - dp.positions[k]))
        t, j = k, j - 1
    sizes.append(int(dp.positions[t]))
    return [s for s in reversed(sizes) if s > 0]


def get_cut(dp: DpTable, n, m, ct=None) -> Partitioning:
    """Backtrack the DP into consecutive blocks.

    Equal-cost ties can leave chunk counts out of order; with ``ct`` given the
    blocks are rewritten into weakly-ordered, chunk-aligned form, which keeps
    the optimal cost.
    """
    cut = Partitioning.from_sizes(_backtrack_sizes(dp, n, m))
    if ct is not None and not (cut.is_weakly_ordered(dp.c_R) and cut.is_divisible(dp.c_R)):
        cut = normalize(cut, _values(ct)[:n], dp.c_R)
    return cut


# brute-force oracle

MAX_BRUTE_KEYS = 14
MAX_BRUTE_PARTS = 4


def _assignment_blocks(n, m, block=1 << 16):
    """All m**n assignments as rows, in blocks to bound memory."""
    total = m ** n
    digits = m ** np.arange(n, dtype=np.int64)
    for start in range(0, total, block):
        codes = np.arange(start, min(total, start + block), dtype=np.int64)
        yield (codes[:, None] // digits[None, :]) % m


def brute_force_many(cts, m, c_R):
    """Exact minimum join cost over all m**n assignments for each row of ``cts``."""
    cts = np.atleast_2d(np.asarray(cts, dtype=np.float64))
    n = cts.shape[1]
    if n > MAX_BRUTE_KEYS or m > MAX_BRUTE_PARTS:
        raise ValueError(f"brute force limited to n<={MAX_BRUTE_KEYS}, m<={MAX_BRUTE_PARTS}")
    best = np.full(cts.shape[0], np.inf)
    for assign in _assignment_blocks(n, m):
        total = np.zeros((assign.shape[0], cts.shape[0]))
        for p in range(m):
            mask = (assign == p).astype(np.float64)
            passes = np.ceil(mask.sum(axis=1) / c_R)
            total += passes[:, None] * (mask @ cts.T)
        best = np.minimum(best, total.min(axis=0))
    return best.astype(np.int64)


def brute_force_optimal(ct, n, m, c_R) -> int:
    values = _values(ct)[:n]
    if n == 0:
        return 0
    return int(brute_force_many(values[None, :], m, c_R)[0])


# cost-preserving rewrites

def swap_transform(partitioning: Partitioning, ct, c_R) -> Partitioning:
    """Make every partition consecutive without raising the join cost.

    Follows the two-pointer exchange: the lowest foreign key inside a
    partition's span trades places with the span's left end when its own
    partition is larger, otherwise with the right end.
    """
    f = partitioning.assignment.copy()
    changed = True
    while changed:
        changed = False
        for p in np.unique(f):
            while True:
                idx = np.flatnonzero(f == p)
                left, right = idx[0], idx[-1]
                inside = np.flatnonzero(f[left:right + 1] != p)
                if inside.size == 0:
                    break
                ell = left + inside[0]
                other = f[ell]
                if np.count_nonzero(f == other) > idx.size:
                    f[ell], f[left] = p, other
                else:
                    f[ell], f[right] = p, other
                changed = True
    return Partitioning(f)


def _consecutive_order(f):
    """Partition labels sorted by their first index."""
    labels, first = np.unique(f, return_index=True)
    return labels[np.argsort(first)]


def order_transform(partitioning: Partitioning, ct, c_R) -> Partitioning:
    """Reorder consecutive partitions so chunk counts never increase along CT order."""
    if not partitioning.is_consecutive():
        raise ValueError("order_transform needs a consecutive partitioning")
    f = partitioning.assignment.copy()
    for _ in range(10 * len(f) + 10):
        order = _consecutive_order(f)
        chunks = [ceil_div(np.count_nonzero(f == p), c_R) for p in order]
        pair = next(((a, b) for a in range(len(order)) for b in range(a + 1, len(order))
                     if chunks[a] < chunks[b]), None)
        if pair is None:
            return Partitioning(f)
        small, big = order[pair[0]], order[pair[1]]
        lo_small = np.flatnonzero(f == small)[0]
        lo_big = np.flatnonzero(f == big)[0]
        width = np.count_nonzero(f == small)
        seg_small = slice(lo_small, lo_small + width)
        seg_big = slice(lo_big, lo_big + width)
        f[seg_small], f[seg_big] = big, small
        f = swap_transform(Partitioning(f), ct, c_R).assignment
    raise RuntimeError("order_transform did not converge")


def divisible_transform(partitioning: Partitioning, ct, c_R) -> Partitioning:
    """Grow partitions 2..m (from the hot end backwards) to chunk multiples."""
    if not partitioning.is_consecutive() or not partitioning.is_weakly_ordered(c_R):
        raise ValueError("divisible_transform needs a consecutive, weakly-ordered partitioning")
    sizes = partitioning.sizes()
    for j in range(len(sizes) - 1, 0, -1):
        need = (-sizes[j]) % c_R
        donor = j - 1
        while need and donor >= 0:
            take = min(need, sizes[donor])
            sizes[donor] -= take
            sizes[j] += take
            need -= take
            donor -= 1
    return Partitioning.from_sizes(sizes)


def normalize(partitioning: Partitioning, ct, c_R, max_rounds=100) -> Partitioning:
    """Apply swap, order and divisible rewrites until all three properties hold."""
    part = swap_transform(partitioning, ct, c_R)
    for _ in range(max_rounds):
        part = order_transform(part, ct, c_R)
        if part.is_divisible(c_R):
            return part.canonical()
        part = divisible_transform(part, ct, c_R)
        if part.is_weakly_ordered(c_R):
            return part.canonical()
    raise RuntimeError("normalize did not converge")


# planning with caching

@dataclass
class OcapPlan:
    k_cached: int
    partitioning: Partitioning
    predicted_cost: float
    partitions: int
    probe_cost: float
    partition_cost: float

    def describe(self) -> str:
        cuts = ",".join(str(c) for c in self.partitioning.cut_points())
        return (f"k_cached={self.k_cached}\npartitions={self.partitions}\n"
                f"predicted_cost={self.predicted_cost:.3f}\ncut_points={cuts}\n")


def _disk_terms(n_disk, s_disk, probe_records, config: JoinConfig):
    r_pages = ceil_div(n_disk, config.b_R)
    probe = r_pages + math.ceil(probe_records / config.b_S)
    part = config.device.mu * (r_pages + ceil_div(s_disk, config.b_S))
    return probe, part


def ocap_candidate(ct: CorrelationTable, n, k, config: JoinConfig, pruning="both"):
    """(plan without partitioning, DpTable or None) for caching the k hottest keys.

    Returns (None, None) when the cache leaves no page for a partition buffer.
    """
    c_R, b_R, F, B = config.c_R, config.b_R, config.F, config.B
    n_disk = n - k
    if n_disk == 0:
        return OcapPlan(k, Partitioning(np.zeros(0, dtype=np.int64)), 0.0, 0, 0.0, 0.0), None
    m = B - 2 - math.ceil(k * F / b_R - 1e-9)
    if m < 1:
        return None, None
    # ceil(n_disk / c_R) partitions already give every key a single pass
    m_eff = min(m, ceil_div(n_disk, c_R))
    mode = pruning
    if mode in ("both", "divisible") and c_R < m_eff:
        mode = "weakly_ordered" if mode == "both" else "none"
    dp = partition_dp(ct, n_disk, m_eff, c_R, mode)
    probe, part = _disk_terms(n_disk, int(ct.prefix[n_disk]), dp.optimum, config)
    return OcapPlan(k, None, probe + part, m_eff, probe, part), dp


def ocap_plan(ct: CorrelationTable, n, B, config: JoinConfig, pruning="both") -> OcapPlan:
    """Best number of hottest keys to cache and the optimal split of the rest.

    The cost counts only I/O beyond one scan of both inputs: writing the
    disk-resident keys of both relations, reading their R side back and
    scanning their S side once per chunk.
    """
    cfg = config.with_buffer(B)
    values = ct.ct[:n]
    _check_sorted(values)
    if B - 2 - math.ceil(cfg.F / cfg.b_R - 1e-12) < 1 and n > 1:
        raise ValueError(f"B={B} cannot hold a partition buffer next to the stream pages")
    best, best_dp = None, None
    for k in range(0, min(cfg.c_R, n) + 1):
        cand, dp = ocap_candidate(ct, n, k, cfg, pruning)
        if cand is None:
            break
        if best is None or cand.predicted_cost < best.predicted_cost:
            best, best_dp = cand, dp
    if best is None:
        raise ValueError(f"no feasible cache size for B={B}")
    if best_dp is not None:
        best.partitioning = get_cut(best_dp, best_dp.n, best_dp.m, values)
    return best


def ocap_lower_bound(ct: CorrelationTable, pages_R, pages_S, B, config) -> float:
    """Predicted total I/O of the optimal plan including the unavoidable input scans."""
    return pages_R + pages_S + ocap_plan(ct, ct.n, B, config).predicted_cost


def enumerate_consecutive(n, m):
    """All ways to cut n ordered keys into at most m non-empty consecutive blocks."""
    for parts in range(1, min(n, m) + 1):
        for cuts in itertools.combinations(range(1, n), parts - 1):
            bounds = (0,) + cuts + (n,)
            yield [b - a for a, b in zip(bounds, bounds[1:])]
