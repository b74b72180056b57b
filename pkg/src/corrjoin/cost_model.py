"""Closed-form I/O estimators for partitioned joins.

All page-level estimates are in normalized units (one sequential page read
equals 1).  Per-window estimators work in S-records x passes and are converted
to pages by the planners.
"""

from dataclasses import dataclass
import math

from .core_types import DeviceProfile, JoinConfig, ceil_div

INF = math.inf
NBJ, GHJ, SMJ = "nbj", "ghj", "smj"
TIE_ORDER = (NBJ, GHJ, SMJ)
MIN_DHH_PARTITIONS = 20


@dataclass(frozen=True)
class CostEstimate:
    value: float
    algorithm_tag: str

    def __float__(self):
        return float(self.value)

    def __lt__(self, other):
        return self.value < float(other)


def _check_buffer(B):
    if B < 3:
        raise ValueError(f"need at least 3 buffer pages, got B={B}")


def nbj_chunks(pages_R, B, F) -> int:
    """Chunks of (B-2)/F pages needed to cover pages_R."""
    _check_buffer(B)
    if pages_R <= 0:
        return 0
    # ceil(pages_R * F / (B - 2)) with a guard against 3.0000000000000004
    return math.ceil(pages_R * F / (B - 2) - 1e-9)


def nbj_cost(pages_R, pages_S, B, F) -> CostEstimate:
    return CostEstimate(pages_R + nbj_chunks(pages_R, B, F) * pages_S, NBJ)


def ghj_partition_runs(pages_R, B, F) -> float:
    """Smallest t >= 0 with pages_R * F / (B-1)^t <= B - 2; inf when B-1 < 2."""
    if B - 1 < 2:
        return INF
    t = 0
    size = pages_R * F
    while size > B - 2 + 1e-9:
        size /= B - 1
        t += 1
    return t


def ghj_cost(pages_R, pages_S, B, F, profile: DeviceProfile) -> CostEstimate:
    t = ghj_partition_runs(pages_R, B, F)
    if t == INF:
        return CostEstimate(INF, GHJ)
    return CostEstimate((1 + t * (1 + profile.mu)) * (pages_R + pages_S), GHJ)


def sort_runs(pages, B) -> int:
    return ceil_div(pages, B) if pages > 0 else 0


def merge_levels(runs_R, runs_S, B) -> int:
    """Merge levels before the fused merge-join can read every run at once.

    Each level merges each relation's runs in groups of B-1, rewriting all of
    both relations, until runs_R + runs_S <= B - 1.
    """
    fan_in = B - 1
    levels = 0
    while runs_R + runs_S > fan_in:
        if fan_in < 2:
            return INF
        runs_R = ceil_div(runs_R, fan_in)
        runs_S = ceil_div(runs_S, fan_in)
        levels += 1
    return levels


def smj_sort_passes(pages_R, pages_S, B) -> int:
    """Write passes (run formation plus merge levels) before the fused final merge."""
    return 1 + merge_levels(sort_runs(pages_R, B), sort_runs(pages_S, B), B)


def smj_passes_closed_form(pages_R, pages_S, B) -> int:
    """Smallest t >= 1 with r0 / (B-1)^(t-1) <= B-1 on the pooled run count."""
    r0 = sort_runs(pages_R, B) + sort_runs(pages_S, B)
    t = 1
    while r0 / (B - 1) ** (t - 1) > B - 1:
        t += 1
    return t


def smj_cost(pages_R, pages_S, B, profile: DeviceProfile) -> CostEstimate:
    if B < 3:
        return CostEstimate(INF, SMJ)
    t = smj_sort_passes(pages_R, pages_S, B)
    return CostEstimate((1 + t * (1 + profile.tau)) * (pages_R + pages_S), SMJ)


def pick_partition_join(pages_R, pages_S, B, F, profile: DeviceProfile):
    """Cheapest of NBJ, GHJ, SMJ; ties resolve in that order."""
    candidates = (nbj_cost(pages_R, pages_S, B, F),
                  ghj_cost(pages_R, pages_S, B, F, profile),
                  smj_cost(pages_R, pages_S, B, profile))
    best = candidates[0]
    for est in candidates[1:]:
        if est.value < best.value:
            best = est
    return best.algorithm_tag, best


def uniform_partition_passes(pages_R, B, F, m=None) -> int:
    """Probe passes per partition when pages_R is hashed evenly into m partitions."""
    m = B - 1 if m is None else m
    return nbj_chunks(pages_R / m, B, F)


# per-window estimators over a sorted CorrelationTable (1-based, inclusive)

def cal_cost(s, e, ct, c_R) -> int:
    if s > e:
        raise ValueError(f"empty window [{s}, {e}]")
    return ct.window_sum(s, e) * ceil_div(e - s + 1, c_R)


def g_ph(s, e, m, ct, c_R) -> CostEstimate:
    if m < 1:
        raise ValueError("need at least one partition")
    w = e - s + 1
    return CostEstimate(ceil_div(w, m * c_R) * ct.window_sum(s, e), "ph")


def _fill_multiple(w, m, c_R) -> int:
    """Smallest t with t * c_R >= w / m."""
    return max(1, math.ceil(w / (m * c_R) - 1e-12))


def rh_disabled(w, m, c_R, beta) -> bool:
    """Plain-hash fill check: expected partition size crowds the next chunk boundary."""
    t = _fill_multiple(w, m, c_R)
    return w / m > beta * t * c_R


def passes_for_window(w, m, c_R_star, c_R=None, beta=None) -> float:
    if w <= 0:
        raise ValueError("empty window")
    if m < 1:
        raise ValueError("need at least one partition")
    if c_R is None:
        c_R = c_R_star
    if beta is None:
        beta = c_R_star / c_R
    per_part = w / (m * c_R_star)
    lo = math.floor(per_part + 1e-12)
    hi = math.ceil(per_part - 1e-12)
    if rh_disabled(w, m, c_R, beta):
        t = _fill_multiple(w, m, c_R)
        sigma = t * c_R * m / w - 1
        overflow = (math.exp(sigma) / (1 + sigma) ** (1 + sigma)) ** (w / m)
        return (1 - overflow) * hi + overflow * (hi + 1)
    chunks = math.ceil(w / c_R_star - 1e-12)
    gamma = ((chunks % m) * lo * c_R_star) / w
    return gamma * lo + (1 - gamma) * hi


def rounded_passes(s, e, m, c_R_star, c_R=None, beta=None) -> float:
    return passes_for_window(e - s + 1, m, c_R_star, c_R, beta)


def g_rh(s, e, m, ct, c_R_star, c_R=None, beta=None) -> CostEstimate:
    value = rounded_passes(s, e, m, c_R_star, c_R, beta) * ct.window_sum(s, e)
    return CostEstimate(value, "rh")


def dhh_partition_count(pages_R, memory, F) -> int:
    """m_DHH: at least 20, else sized so one partition fits the remaining memory."""
    if memory < 2:
        return 1
    return max(MIN_DHH_PARTITIONS, math.ceil((pages_R * F - memory) / (memory - 1) - 1e-9))


def dhh_layout(pages_R, memory, F, fit_limit):
    """(partitions, staging pages) of a DHH instance that sees ``memory`` pages.

    Returns (0, 0) when the build side fits in ``fit_limit`` pages.  With
    fewer than 3 pages nothing can be staged and every page is a partition
    buffer.  Otherwise partitions are capped so that two stream pages and one
    buffer per partition always fit.
    """
    if math.ceil(pages_R * F - 1e-9) <= fit_limit:
        return 0, 0
    if memory < 1:
        raise ValueError(f"DHH needs at least one page, got {memory}")
    if memory < 3:
        return memory, 0
    parts = min(dhh_partition_count(pages_R, memory, F), memory - 2)
    return parts, memory - 2 - parts


@dataclass(frozen=True)
class RestModel:
    """Intermediate quantities of the g_dhh estimate, exposed for tests and plan dumps."""

    pages_R: int
    pages_S: int
    partitions: int
    staged_fraction: float
    passes: float
    cost: float


def _ghj_extra(pages_R, pages_S, config: JoinConfig) -> float:
    est = ghj_cost(pages_R, pages_S, config.B, config.F, config.device).value
    return est - (pages_R + pages_S)


def downgraded_rest_cost(pages_R, pages_S, parts, config: JoinConfig) -> float:
    """Extra I/O when the rest is spilled whole into ``parts`` partitions.

    Both sides are written once, then every partition is read back by the
    cheapest partition join at the full buffer.
    """
    pR, pS = pages_R / parts, pages_S / parts
    _, best = pick_partition_join(pR, pS, config.B, config.F, config.device)
    return config.device.mu * (pages_R + pages_S) + parts * best.value


def dhh_rest_model(n_rest_keys, s_rest_records, m_rest, config: JoinConfig,
                   use_ghj=False) -> RestModel:
    pR = ceil_div(n_rest_keys, config.b_R)
    pS = ceil_div(s_rest_records, config.b_S)
    mu, F = config.device.mu, config.F
    if n_rest_keys <= 0:
        return RestModel(0, pS, 0, 1.0, 0.0, 0.0)
    if m_rest <= 0:
        return RestModel(pR, pS, 0, 0.0, INF, INF)
    if use_ghj:
        return RestModel(pR, pS, config.B - 1, 0.0, INF, _ghj_extra(pR, pS, config))
    parts, staging = dhh_layout(pR, m_rest, F, m_rest - 1)
    if parts == 0:
        return RestModel(pR, pS, 0, 1.0, 0.0, 0.0)
    if m_rest < 3:
        # nothing can be staged: DHH degenerates into GHJ over its partitions
        return RestModel(pR, pS, parts, 0.0, INF, downgraded_rest_cost(pR, pS, parts, config))
    staged = min(1.0, staging / (pR * F))
    # every spilled partition holds about n_rest / parts keys whichever ones spill
    passes = passes_for_window(n_rest_keys, parts, config.c_R_star, config.c_R, config.beta)
    spill = 1 - staged
    # write both sides (mu), read R back once, read S once per pass
    cost = spill * (mu * (pR + pS) + pR + passes * pS)
    return RestModel(pR, pS, parts, staged, passes, cost)


def g_dhh(n_rest_keys, s_rest_records, m_rest, config: JoinConfig, use_ghj=False) -> CostEstimate:
    """Extra I/O (beyond one scan of both inputs) to join the untracked keys by DHH."""
    model = dhh_rest_model(n_rest_keys, s_rest_records, m_rest, config, use_ghj)
    return CostEstimate(model.cost, GHJ if use_ghj else "dhh")
