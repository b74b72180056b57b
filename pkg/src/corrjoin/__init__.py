"""Correlation-aware partitioned joins with exact I/O accounting."""

from .core_types import (CorrelationTable, DeviceProfile, IoStats, JoinConfig,
                         derive_params, sort_and_prefix)

__version__ = "0.1.0"

__all__ = ["CorrelationTable", "DeviceProfile", "IoStats", "JoinConfig",
           "derive_params", "sort_and_prefix"]
