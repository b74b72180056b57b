import numpy as np
import pytest

from corrjoin.core_types import derive_params
from corrjoin.storage import SimBackend, store
from corrjoin.workload import WorkloadSpec, generate


def config(B, record_size=1024, page_size=4096, F=1.02, **kw):
    return derive_params(page_size, record_size, record_size, B, F, **kw)


def materialized(n_R, n_S, skew="uniform", record_size=1024, page_size=4096, seed=0):
    """Generated workload on a fresh simulated backend: (workload, R, S)."""
    workload = generate(WorkloadSpec(n_R, n_S, record_size, record_size, skew, seed=seed))
    R, S = workload.materialize(SimBackend(page_size))
    return workload, R, S


def stored(backend, name, keys, record_size=1024, tags=None):
    keys = np.asarray(keys, dtype=np.uint64)
    if tags is None:
        tags = keys * np.uint64(3) + np.uint64(1)
    return store(backend, name, record_size, keys, np.asarray(tags, dtype=np.uint64))


@pytest.fixture
def small_uniform():
    return materialized(2000, 16000)


# one "PASS/FAIL criterion N" line per acceptance check, repeated at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
