"""Synthetic PK-FK workloads with known per-key match counts."""

from dataclasses import dataclass
import math
import re

import numpy as np

from .core_types import CorrelationTable, sort_and_prefix, write_ct_file
from .hashing import mix64
from .nocap import McvList, write_mcv_file
from .storage import Backend, FileBackend, store

KEY_SEED = 101
R_TAG_SEED = 202


@dataclass(frozen=True)
class Uniform:
    def __str__(self):
        return "uniform"


@dataclass(frozen=True)
class Zipf:
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"zipf exponent must be >= 0, got {self.alpha}")

    def __str__(self):
        return f"zipf:{self.alpha:g}"


@dataclass(frozen=True)
class HotCold:
    hot_frac: float
    hot_avg: float
    cold_avg: float

    def __post_init__(self):
        if not 0 < self.hot_frac < 1:
            raise ValueError(f"hot fraction must lie in (0, 1), got {self.hot_frac}")
        if self.hot_avg < 0 or self.cold_avg < 0:
            raise ValueError("hot/cold averages must be non-negative")

    def __str__(self):
        return f"hotcold:{self.hot_frac:g}:{self.hot_avg:g}:{self.cold_avg:g}"


def parse_skew(text: str):
    """Parse ``uniform``, ``zipf:<alpha>`` or ``hotcold:<frac>:<hot_avg>:<cold_avg>``."""
    text = text.strip().lower()
    if text == "uniform":
        return Uniform()
    m = re.fullmatch(r"zipf:([0-9.eE+-]+)", text)
    if m:
        return Zipf(float(m.group(1)))
    m = re.fullmatch(r"hot_?cold:([0-9.eE+-]+):([0-9.eE+-]+):([0-9.eE+-]+)", text)
    if m:
        return HotCold(*(float(g) for g in m.groups()))
    raise ValueError(f"unrecognised skew {text!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    n_R: int
    n_S: int
    record_size_R: int = 1024
    record_size_S: int = 1024
    skew: object = Uniform()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_R < 1:
            raise ValueError("R needs at least one record")
        if self.n_S < 0:
            raise ValueError("S cannot have a negative size")
        if isinstance(self.skew, str):
            object.__setattr__(self, "skew", parse_skew(self.skew))


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer counts proportional to ``weights`` summing exactly to ``total``.

    Weights must be sorted descending; ties in the remainder favour the
    earlier (heavier) entries.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.sum() == 0:
        out = np.zeros(len(weights), dtype=np.int64)
        if total:
            out[0] = total
        return out
    exact = weights * (total / weights.sum())
    counts = np.floor(exact).astype(np.int64)
    residue = total - int(counts.sum())
    if residue:
        order = np.lexsort((np.arange(len(exact)), -(exact - counts)))
        counts[order[:residue]] += 1
    return counts


def key_counts(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    """Match count per R key, indexed by frequency rank (heaviest first)."""
    n, total, skew = spec.n_R, spec.n_S, spec.skew
    if isinstance(skew, Uniform):
        weights = np.ones(n)
    elif isinstance(skew, Zipf):
        weights = np.arange(1, n + 1, dtype=np.float64) ** -skew.alpha
    elif isinstance(skew, HotCold):
        n_hot = max(1, round(skew.hot_frac * n))
        hot = rng.uniform(0, 2 * skew.hot_avg, n_hot)
        cold = rng.uniform(0, 2 * skew.cold_avg, n - n_hot)
        weights = np.concatenate([np.sort(hot)[::-1], np.sort(cold)[::-1]])
        # keep hot keys first even when a cold draw beats a hot one
        weights = np.maximum.accumulate(weights[::-1])[::-1]
    else:
        raise TypeError(f"unknown skew {skew!r}")
    return largest_remainder(weights, total)


@dataclass(eq=False)
class Workload:
    spec: WorkloadSpec
    keys: np.ndarray       # R keys by frequency rank
    counts: np.ndarray     # matches per ranked key
    r_keys: np.ndarray
    r_tags: np.ndarray
    s_keys: np.ndarray
    s_tags: np.ndarray

    @property
    def truth(self) -> CorrelationTable:
        return sort_and_prefix(self.counts)

    def materialize(self, backend: Backend, prefix: str = ""):
        spec = self.spec
        R = store(backend, f"{prefix}R", spec.record_size_R, self.r_keys, self.r_tags)
        S = store(backend, f"{prefix}S", spec.record_size_S, self.s_keys, self.s_tags)
        return R, S

    def mcv(self, k: int, noise_sigma=None, seed=None) -> McvList:
        sigma = self.spec.noise_sigma if noise_sigma is None else noise_sigma
        return extract_mcv(self.keys, self.counts, k, sigma,
                           self.spec.seed if seed is None else seed)


def generate(spec: WorkloadSpec) -> Workload:
    rng = np.random.default_rng(spec.seed)
    keys = mix64(np.arange(spec.n_R, dtype=np.uint64), KEY_SEED + spec.seed)
    if len(np.unique(keys)) != len(keys):
        raise RuntimeError("key mixer produced a collision")
    counts = key_counts(spec, rng)
    r_keys = keys[rng.permutation(spec.n_R)]
    r_tags = mix64(r_keys, R_TAG_SEED + spec.seed)
    s_keys = np.repeat(keys, counts)[rng.permutation(spec.n_S)]
    s_tags = rng.integers(0, 2**64, size=spec.n_S, dtype=np.uint64, endpoint=False)
    return Workload(spec, keys, counts, r_keys, r_tags, s_keys, s_tags)


def extract_mcv(keys, counts, k: int, noise_sigma: float = 0.0, seed: int = 0) -> McvList:
    """Top-k keys by true count, counts perturbed by Gaussian noise and clamped at 1."""
    if k < 0 or k > len(keys):
        raise ValueError(f"k={k} outside [0, {len(keys)}]")
    if k == 0:
        return McvList.empty()
    counts = np.asarray(counts, dtype=np.int64)
    top = np.argsort(-counts, kind="stable")[:k]
    freqs = counts[top].astype(np.float64)
    if noise_sigma > 0:
        freqs = freqs + np.random.default_rng(seed + 7).normal(0, noise_sigma, k)
    noisy = np.maximum(1, np.rint(freqs)).astype(np.int64)
    order = np.argsort(-noisy, kind="stable")
    return McvList(np.asarray(keys, dtype=np.uint64)[top][order], noisy[order])


def default_mcv_size(n_R: int) -> int:
    """Track the top 5% of keys."""
    return math.ceil(0.05 * n_R)


def emit(workload: Workload, directory, page_size: int, mcv_k=None, noise_sigma=None):
    """Write R, S (with sidecars), ct.txt and mcv.csv into ``directory``."""
    backend = FileBackend(page_size, directory)
    try:
        workload.materialize(backend)
    finally:
        backend.shutdown()
    write_ct_file(f"{directory}/ct.txt", workload.counts)
    k = default_mcv_size(workload.spec.n_R) if mcv_k is None else mcv_k
    write_mcv_file(f"{directory}/mcv.csv", workload.mcv(k, noise_sigma))
