"""Shared value types: device profiles, join geometry, correlation tables, I/O counters."""

from dataclasses import dataclass, field
import math

import numpy as np

KEY_SIZE = 8

NO_SYNC = (1.28, 1.2)
SYNC = (3.3, 3.2)
DEFAULT_RANDOM_READ_RATIO = 1.2


@dataclass(frozen=True)
class DeviceProfile:
    """Cost of each I/O kind relative to a sequential page read."""

    mu: float = NO_SYNC[0]
    tau: float = NO_SYNC[1]
    rho: float = DEFAULT_RANDOM_READ_RATIO

    def __post_init__(self):
        if self.mu < 1 or self.tau < 1 or self.rho < 1:
            raise ValueError(f"device ratios must be >= 1, got {self}")

    @classmethod
    def preset(cls, sync: bool = False, rho: float = DEFAULT_RANDOM_READ_RATIO):
        mu, tau = SYNC if sync else NO_SYNC
        return cls(mu=mu, tau=tau, rho=rho)


@dataclass(frozen=True)
class JoinConfig:
    B: int
    F: float
    page_size: int
    record_size_R: int
    record_size_S: int
    key_size: int = KEY_SIZE
    device: DeviceProfile = field(default_factory=DeviceProfile)
    beta: float = 0.95
    sync_writes: bool = False

    def __post_init__(self):
        if self.B < 3:
            raise ValueError(f"need at least 3 buffer pages, got B={self.B}")
        if self.F < 1:
            raise ValueError(f"fudge factor must be >= 1, got F={self.F}")
        for rs in (self.record_size_R, self.record_size_S):
            if not self.key_size <= rs <= self.page_size:
                raise ValueError(
                    f"record size {rs} must lie in [{self.key_size}, {self.page_size}]")
        if self.key_size < KEY_SIZE:
            raise ValueError("keys occupy at least 8 bytes")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")

    @property
    def b_R(self) -> int:
        return self.page_size // self.record_size_R

    @property
    def b_S(self) -> int:
        return self.page_size // self.record_size_S

    @property
    def c_R(self) -> int:
        return chunk_records(self.b_R, self.B, self.F)

    @property
    def c_R_star(self) -> float:
        return self.beta * self.c_R

    def with_buffer(self, B: int) -> "JoinConfig":
        return JoinConfig(B, self.F, self.page_size, self.record_size_R,
                          self.record_size_S, self.key_size, self.device,
                          self.beta, self.sync_writes)


def chunk_records(records_per_page: int, B: int, F: float) -> int:
    """Records of one relation that fit in a B-page NBJ chunk (two pages stream I/O)."""
    # float division here gives 1247.0000000000002 style noise for B=320, F=1.02
    return math.floor(records_per_page * (B - 2) / F + 1e-9)


def derive_params(page_size, record_size_R, record_size_S, B, F=1.02,
                  device=None, beta=0.95, sync_writes=False) -> JoinConfig:
    if device is None:
        device = DeviceProfile.preset(sync=sync_writes)
    return JoinConfig(B=B, F=F, page_size=page_size, record_size_R=record_size_R,
                      record_size_S=record_size_S, device=device, beta=beta,
                      sync_writes=sync_writes)


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    """Per-key match counts with 1-based prefix sums (prefix[0] == 0)."""

    ct: np.ndarray
    prefix: np.ndarray
    sorted_ascending: bool = True

    @property
    def n(self) -> int:
        return len(self.ct)

    @property
    def total(self) -> int:
        return int(self.prefix[-1])

    def window_sum(self, s: int, e: int) -> int:
        return int(self.prefix[e] - self.prefix[s - 1])

    def head(self, n: int) -> "CorrelationTable":
        """The first n entries, sharing the prefix array."""
        return CorrelationTable(self.ct[:n], self.prefix[:n + 1], self.sorted_ascending)

    def __eq__(self, other):
        return (isinstance(other, CorrelationTable)
                and np.array_equal(self.ct, other.ct)
                and self.sorted_ascending == other.sorted_ascending)


def prefix_sums(ct) -> np.ndarray:
    out = np.zeros(len(ct) + 1, dtype=np.int64)
    np.cumsum(ct, out=out[1:])
    return out


def sort_and_prefix(ct_raw) -> CorrelationTable:
    """Drop zero counts, sort ascending and attach prefix sums."""
    ct = np.asarray(ct_raw, dtype=np.int64)
    if ct.size and ct.min() < 0:
        raise ValueError("correlation counts must be non-negative")
    ct = np.sort(ct[ct > 0])
    return CorrelationTable(ct, prefix_sums(ct), True)


def read_ct_file(path) -> CorrelationTable:
    with open(path) as fh:
        counts = [int(line) for line in fh if line.strip()]
    return sort_and_prefix(counts)


def write_ct_file(path, counts):
    with open(path, "w") as fh:
        fh.writelines(f"{int(c)}\n" for c in counts)


@dataclass
class IoStats:
    seq_reads: int = 0
    rand_reads: int = 0
    seq_writes: int = 0
    rand_writes: int = 0

    def normalized(self, profile: DeviceProfile) -> float:
        return (self.seq_reads + profile.rho * self.rand_reads
                + profile.tau * self.seq_writes + profile.mu * self.rand_writes)

    @property
    def total(self) -> int:
        return self.seq_reads + self.rand_reads + self.seq_writes + self.rand_writes

    def copy(self) -> "IoStats":
        return IoStats(self.seq_reads, self.rand_reads, self.seq_writes, self.rand_writes)

    def __add__(self, other):
        return IoStats(self.seq_reads + other.seq_reads, self.rand_reads + other.rand_reads,
                       self.seq_writes + other.seq_writes, self.rand_writes + other.rand_writes)

    def __sub__(self, other):
        return IoStats(self.seq_reads - other.seq_reads, self.rand_reads - other.rand_reads,
                       self.seq_writes - other.seq_writes, self.rand_writes - other.rand_writes)

    def as_tuple(self):
        return (self.seq_reads, self.rand_reads, self.seq_writes, self.rand_writes)


def normalized(io: IoStats, profile: DeviceProfile) -> float:
    return io.normalized(profile)


def ceil_div(a, b):
    return -(-a // b)
