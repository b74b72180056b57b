import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrjoin.core_types import (DeviceProfile, IoStats, JoinConfig,
                                 derive_params, read_ct_file, sort_and_prefix, write_ct_file)


def test_chunk_size_at_320_pages():
    cfg = derive_params(4096, 1024, 1024, 320, 1.02)
    assert cfg.b_R == 4
    assert cfg.c_R == 1247


def test_minimal_geometry():
    cfg = derive_params(4096, 4096, 4096, 3, 1.0)
    assert cfg.b_R == 1 and cfg.c_R == 1


def test_chunk_without_fudge():
    assert derive_params(4096, 1024, 1024, 7, 1.0).c_R == 20


def test_beta_defaults_and_star_chunk():
    cfg = derive_params(4096, 1024, 1024, 320, 1.02)
    assert cfg.beta == 0.95
    assert cfg.c_R_star == pytest.approx(0.95 * 1247)


@pytest.mark.parametrize("kwargs", [dict(B=2), dict(F=0.9), dict(record_size_R=4)])
def test_config_rejects_bad_geometry(kwargs):
    base = dict(B=10, F=1.0, page_size=4096, record_size_R=1024, record_size_S=1024)
    base.update(kwargs)
    with pytest.raises(ValueError):
        JoinConfig(**base)


def test_device_ratios_at_least_one():
    with pytest.raises(ValueError):
        DeviceProfile(mu=0.5)
    assert DeviceProfile.preset(sync=True).mu == 3.3
    assert DeviceProfile.preset(sync=True).tau == 3.2
    assert DeviceProfile.preset() == DeviceProfile(1.28, 1.2, 1.2)


def test_sort_and_prefix_drops_zeros():
    ct = sort_and_prefix([3, 0, 1, 2])
    assert ct.ct.tolist() == [1, 2, 3]
    assert ct.prefix.tolist() == [0, 1, 3, 6]
    assert ct.total == 6


def test_sort_and_prefix_uniform_and_empty():
    assert sort_and_prefix([5, 5, 5]).prefix.tolist() == [0, 5, 10, 15]
    assert sort_and_prefix([0, 0]).n == 0


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        sort_and_prefix([1, -1])


def test_ct_file_round_trip(tmp_path):
    write_ct_file(tmp_path / "ct.txt", [4, 0, 2])
    assert read_ct_file(tmp_path / "ct.txt") == sort_and_prefix([2, 4])


def test_normalized_io_weights():
    io = IoStats(seq_reads=10, rand_reads=2, seq_writes=3, rand_writes=4)
    dev = DeviceProfile(mu=2.0, tau=1.5, rho=1.25)
    assert io.normalized(dev) == pytest.approx(10 + 2.5 + 4.5 + 8)
    assert (io - io).total == 0


@given(st.lists(st.integers(0, 1000), max_size=60))
def test_prefix_sums_are_consistent(values):
    ct = sort_and_prefix(values)
    assert np.all(np.diff(ct.ct) >= 0)
    assert np.all(ct.ct > 0)
    assert ct.total == sum(values)
    for s in range(1, ct.n + 1):
        assert ct.window_sum(s, ct.n) == int(ct.ct[s - 1:].sum())


@given(st.integers(8, 4096), st.integers(3, 5000), st.floats(1.0, 2.0))
def test_chunk_formula(record_size, B, F):
    cfg = derive_params(4096, record_size, record_size, B, F)
    b = 4096 // record_size
    assert cfg.c_R == int(np.floor(b * (B - 2) / F + 1e-9))
