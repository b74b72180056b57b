import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrjoin.core_types import derive_params
from corrjoin.hashing import split_hash
from corrjoin.nocap import (McvList, designation_map_pages, hash_table_pages,
                            memory_breakdown, nocap_plan, partition_passes, read_mcv_file,
                            rounded_part_id, write_mcv_file)
from corrjoin.ocap import Partitioning, join_cost, partition_dp


def cfg(B, F=1.02, record_size=1024):
    return derive_params(4096, record_size, record_size, B, F)


def test_memory_breakdown_pure_dhh():
    b = memory_breakdown(0, 0, 0, cfg(300))
    assert (b.b_hs, b.b_ht, b.b_f, b.m_disk, b.m_rest) == (0, 0, 0, 0, 298)


def test_memory_page_formulas():
    assert hash_table_pages(1000, cfg(300)) == 255
    assert designation_map_pages(1000, cfg(300)) == 3


def test_literal_formulas_divide_by_fudge():
    assert hash_table_pages(1000, cfg(300), literal=True) == 3922   # ceil(4 * 1000 / 1.02)
    assert designation_map_pages(1000, cfg(300), literal=True) == 3


def test_memory_breakdown_infeasible_flag():
    b = memory_breakdown(5000, 0, 0, cfg(300))
    assert not b.feasible and b.m_rest == 0
    assert memory_breakdown(5000, 0, 0, cfg(300), rest_nonempty=False).feasible


def test_mcv_validation():
    with pytest.raises(ValueError):
        McvList(np.array([1, 2], dtype=np.uint64), np.array([3, 5]))
    with pytest.raises(ValueError):
        McvList(np.array([1, 1], dtype=np.uint64), np.array([5, 3]))
    with pytest.raises(ValueError):
        McvList(np.array([1], dtype=np.uint64), np.array([0]))


def test_mcv_file_round_trip(tmp_path):
    mcv = McvList.from_pairs([(7, 3), (9, 12), (2**63 + 5, 4)])
    write_mcv_file(tmp_path / "mcv.csv", mcv)
    back = read_mcv_file(tmp_path / "mcv.csv")
    assert back.entries() == [(9, 12), (2**63 + 5, 4), (7, 3)]


def test_empty_mcv_gives_pure_dhh():
    plan = nocap_plan(McvList.empty(), 100_000, 800_000, 256, cfg(256))
    assert (plan.k_mem, plan.k_disk, plan.m_disk, plan.m_rest) == (0, 0, 0, 254)
    assert plan.estimated_cost == plan.pure_dhh_cost


def test_abundant_memory_needs_no_extra_io():
    mcv = McvList.from_pairs([(k, 100 - k) for k in range(50)])
    plan = nocap_plan(mcv, 1000, 8000, 1000, cfg(1000))
    # every candidate costs nothing; the tie goes to the smallest cache
    assert plan.estimated_cost == 0
    assert (plan.k_mem, plan.k_disk) == (0, 0)
    assert plan.m_rest - 1 >= 250 * 1.02


def test_dominant_key_gets_cached():
    mcv = McvList.from_pairs([(42, 400_000)])
    plan = nocap_plan(mcv, 100_000, 800_000, 64, cfg(64))
    assert plan.k_mem == 1
    assert plan.estimated_cost < plan.pure_dhh_cost
    assert plan.cached_keys.tolist() == [42]


def test_rounded_part_id_examples():
    assert rounded_part_id(np.array([5]), 6, 1.0, 4).tolist() == [1]
    assert rounded_part_id(np.arange(10), 6, 1.0, 1).tolist() == [0] * 10


def test_rounded_hash_bucket_slots():
    # 6 buckets over 4 partitions: residues 0 and 1 take two buckets each
    ids = rounded_part_id(np.arange(18), 18, 3.0, 4)
    assert np.bincount(ids, minlength=4).tolist() == [6, 6, 3, 3]


def test_rounded_hash_falls_back_to_plain():
    h = np.arange(100, dtype=np.uint64)
    assert np.array_equal(rounded_part_id(h, 10, 3.0, 4), (h % 4).astype(np.int64))


def test_plain_and_rounded_pass_vectors():
    plain = np.bincount(np.arange(18) % 4, minlength=4)
    rounded = np.bincount(rounded_part_id(np.arange(18), 18, 3.0, 4), minlength=4)
    assert partition_passes(plain, 3) == (2, 2, 2, 2)
    assert partition_passes(rounded, 3) == (2, 2, 1, 1)


def test_plan_describe_sections():
    mcv = McvList.from_pairs([(k, 1000 - k) for k in range(300)])
    text = nocap_plan(mcv, 10_000, 200_000, 40, cfg(40)).describe()
    for section in ("[cached]", "[designated]", "[rest]", "[estimate]"):
        assert section in text


def _zipf_mcv(rng, n, k, total):
    weights = np.arange(1, n + 1, dtype=float) ** -rng.uniform(0.5, 1.5)
    counts = np.maximum(1, np.floor(weights / weights.sum() * total)).astype(np.int64)
    keys = rng.permutation(n)[:k].astype(np.uint64)
    return McvList(keys, counts[:k]), int(counts.sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([16, 40, 100, 300, 1000]))
def test_plans_respect_memory_and_dhh_bound(seed, B):
    rng = np.random.default_rng(seed)
    mcv, n_S = _zipf_mcv(rng, 5000, 400, 40_000)
    plan = nocap_plan(mcv, 5000, n_S, B, cfg(B))
    assert plan.memory_ok(cfg(B))
    assert plan.estimated_cost <= plan.pure_dhh_cost + 1e-9
    assert plan.k_mem + plan.k_disk <= mcv.k
    # cached keys are the hottest, designated keys the next block
    assert plan.cached_keys.tolist() == mcv.keys[:plan.k_mem].tolist()
    assert plan.designated_keys.tolist() == \
        mcv.keys[plan.k_mem:plan.k_mem + plan.k_disk].tolist()
    if plan.k_disk:
        assert set(plan.designated_parts.tolist()) <= set(range(plan.m_disk))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 2000), min_size=1, max_size=12), st.integers(6, 20))
def test_designated_slice_matches_dp(freqs, B):
    freqs = sorted(freqs, reverse=True)
    mcv = McvList(np.arange(len(freqs), dtype=np.uint64), np.array(freqs))
    config = cfg(B, F=1.0, record_size=4096)
    plan = nocap_plan(mcv, len(freqs), sum(freqs), B, config)
    if plan.k_disk == 0:
        return
    block = np.array(freqs[plan.k_mem:plan.k_mem + plan.k_disk])
    order = np.argsort(block, kind="stable")
    assignment = plan.designated_parts[order]
    cost = join_cost(Partitioning(assignment), block[order], config.c_R)
    assert cost == partition_dp(block[order], len(block), plan.m_disk, config.c_R,
                                "none").optimum


@given(st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=200),
       st.integers(1, 10**6), st.floats(0.5, 500), st.integers(1, 64))
def test_rounded_ids_in_range(hashes, n_window, c_star, m):
    ids = rounded_part_id(np.array(hashes, dtype=np.uint64), n_window, c_star, m)
    assert ids.min() >= 0 and ids.max() < m


def test_split_hash_spreads_keys():
    keys = np.arange(100_000, dtype=np.uint64)
    counts = np.bincount((split_hash(keys) % np.uint64(16)).astype(np.int64), minlength=16)
    assert counts.min() > 0.9 * 100_000 / 16
