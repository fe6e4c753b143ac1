import math
import random

import numpy as np
import pytest

from conftest import SMALL, TINY, brute_match, random_bits, random_key
from tcamssd.backend import Backend, SsdConfig, total_blocks
from tcamssd.errors import (
    CapacityExhausted,
    ElementWiderThanSupported,
    KeyTooWide,
    NonNumericEntries,
    UnknownRegion,
    WidthMismatch,
)
from tcamssd.flash_array import MatchVector
from tcamssd.ftl import LINK_ENTRY_BYTES, SearchManager, compact_results, decode_match_vector, reconstruct_ordinals


def oracle(elements, key, dead=()):
    return [i for i, e in enumerate(elements) if i not in dead and brute_match(key, e)]


def test_olap_region_block_count():
    mgr = SearchManager()
    rid, _ = mgr.allocate_region(97, 134, 600_037_902)
    assert mgr.search_blocks_in_use == math.ceil(600_037_902 / 131_072) == 4578
    assert len(mgr.link_table[rid]) == 4578
    # 44 B per entry lands near 0.2 MB of firmware DRAM
    assert mgr.link_table_bytes() == 4578 * LINK_ENTRY_BYTES
    assert round(mgr.link_table_bytes() / 1e6, 1) == 0.2


def test_per_warehouse_regions_use_23_blocks():
    mgr = SearchManager()
    per = math.ceil(3_000_000 / 23)
    for w in range(23):
        mgr.allocate_region(64, 128, min(per, 3_000_000 - w * per))
    assert mgr.search_blocks_in_use == 23


def test_empty_region():
    mgr = SearchManager()
    rid, _ = mgr.allocate_region(16, 8, 0)
    assert mgr.search_blocks_in_use == 0
    assert mgr.execute_search(rid, "1").ordinals == []


def test_deallocate_restores_accounting():
    mgr = SearchManager(Backend(SMALL))
    base = mgr.blocks_in_use()
    rid, _ = mgr.allocate_region(20, 8, elements=["0" * 20] * 300)
    assert mgr.blocks_in_use() > base
    mgr.deallocate_region(rid)
    assert mgr.blocks_in_use() == base
    with pytest.raises(UnknownRegion):
        mgr.execute_search(rid, "0")
    with pytest.raises(UnknownRegion):
        mgr.deallocate_region(rid)


def test_freed_blocks_are_reused():
    mgr = SearchManager(Backend(SMALL))
    a, _ = mgr.allocate_region(8, 8, 256 * 3)
    first = mgr.region(a).blocks
    mgr.deallocate_region(a)
    b, _ = mgr.allocate_region(8, 8, 256 * 3)
    assert mgr.region(b).blocks == first


def test_blocks_stripe_across_units():
    mgr = SearchManager()
    rid, _ = mgr.allocate_region(32, 8, 64 * 131_072)
    units = {a.unit for a in mgr.region(rid).blocks}
    assert len(units) == 64


def test_capacity_exhausted():
    cfg = SsdConfig(page_size=8, pages_per_block=20, blocks_per_plane=1, planes_per_die=1,
                    channels=1, dies_per_package=2, burst_bytes=4)
    mgr = SearchManager(Backend(cfg))
    with pytest.raises(CapacityExhausted):
        mgr.allocate_region(8, 1, 64 * total_blocks(cfg) + 1)
    assert mgr.blocks_in_use() == 0 and not mgr.regions


def test_too_wide_for_block_limit():
    mgr = SearchManager(Backend(TINY))  # native size 9
    mgr.allocate_region(36, 4, 0)
    with pytest.raises(ElementWiderThanSupported):
        mgr.allocate_region(37, 4, 0)


def test_order_of_entries_follows_elements(small_mgr):
    els = ["0001", "0010", "0001"]
    rid, _ = small_mgr.allocate_region(4, 4, elements=els, entries=[b"a", b"b", b"c"])
    assert small_mgr.execute_search(rid, "0001").entries == [b"a", b"c"]


def test_end_to_end_matches_oracle_multi_group(small_mgr):
    rng = random.Random(7)
    els = [random_bits(rng, 12) for _ in range(700)]  # three groups of 256
    rid, _ = small_mgr.allocate_region(12, 2, elements=els, entries=list(range(700)))
    for _ in range(60):
        key = random_key(rng, rng.randint(1, 12))
        res = small_mgr.execute_search(rid, key)
        assert res.ordinals == oracle(els, key)
        assert res.entries == oracle(els, key)


def test_wide_elements_and_across_blocks(tiny_mgr):
    rng = random.Random(9)
    els = [random_bits(rng, 30) for _ in range(100)]  # 4 blocks per element
    rid, _ = tiny_mgr.allocate_region(30, 4, elements=els, entries=list(range(100)))
    region = tiny_mgr.region(rid)
    assert region.blocks_per_element == 4
    for _ in range(50):
        key = random_key(rng, 30, 0.8)
        res = tiny_mgr.execute_search(rid, key)
        assert res.ordinals == oracle(els, key)
        assert res.srch_count == 4 * len(region.groups)


def test_and_or_reductions(small_mgr):
    rng = random.Random(4)
    els = [random_bits(rng, 10) for _ in range(200)]
    rid, _ = small_mgr.allocate_region(10, 1, elements=els)
    for _ in range(30):
        k1, k2 = random_key(rng, 10, 0.7), random_key(rng, 10, 0.7)
        both = [i for i, e in enumerate(els) if brute_match(k1, e) and brute_match(k2, e)]
        either = [i for i, e in enumerate(els) if brute_match(k1, e) or brute_match(k2, e)]
        r_and = small_mgr.execute_search(rid, [k1, k2], "and")
        r_or = small_mgr.execute_search(rid, [k1, k2], "or")
        assert r_and.ordinals == both and r_or.ordinals == either
        assert r_and.srch_count == 2


def test_key_too_wide(small_mgr):
    rid, _ = small_mgr.allocate_region(4, 1, elements=["0000"])
    with pytest.raises(KeyTooWide):
        small_mgr.execute_search(rid, "00000")


def test_zero_match_moves_vectors_only(small_mgr):
    rid, _ = small_mgr.allocate_region(4, 4, elements=["0000"] * 10)
    before = small_mgr.backend.counters.snapshot()
    res = small_mgr.execute_search(rid, "1XXX")
    moved = small_mgr.backend.counters - before
    assert res.ordinals == [] and res.read_count == 0
    assert moved.fe_be_bytes == SMALL.page_size and moved.cpu_fe_bytes == 0


def test_fused_plan_counts_on_query_table():
    mgr = SearchManager()
    rid, _ = mgr.allocate_region(97, 134, 600_037_902)
    one = mgr.estimate_search(rid, 1)
    four = mgr.estimate_search(rid, 4)
    assert one.srch_count == 4578 and one.vector_bytes == 4578 * 16384
    assert four.srch_count == 18_312
    assert four.vector_bytes / 2**20 == pytest.approx(286.1, abs=0.05)


def test_estimate_agrees_with_simulated_search():
    # full superblock multiples keep the closed form exact
    cfg = SsdConfig(page_size=32, pages_per_block=196, blocks_per_plane=8, burst_bytes=8)
    mgr = SearchManager(Backend(cfg))
    rid, _ = mgr.allocate_region(8, 32, elements=["00000000"] * (64 * 256))
    res = mgr.search_matches(rid, "1XXXXXXX")
    est = mgr.estimate_search(rid, 1)
    assert est.report.total == pytest.approx(res.report.total, rel=1e-9)


def test_append_flush_and_staging(small_mgr):
    rid, _ = small_mgr.allocate_region(8, 1, 0)
    small_mgr.append(rid, ["00000001"], [b"x"])
    region = small_mgr.region(rid)
    assert len(region.groups) == 0
    assert small_mgr.execute_search(rid, "00000001").entries == [b"x"]
    small_mgr.append(rid, ["11111111"] * 255)
    assert len(region.groups) == 1 and not region.staged
    assert small_mgr.execute_search(rid, "00000001").ordinals == [0]
    assert small_mgr.search_blocks_in_use == 1


def test_append_one_full_block_flushes_once():
    mgr = SearchManager()
    rid, _ = mgr.allocate_region(8, 1, 0)
    mgr.append(rid, ["01010101"] * 131_072)
    assert mgr.search_blocks_in_use == 1
    assert len(mgr.link_table[rid]) == 1


def test_append_validation(small_mgr):
    rid, _ = small_mgr.allocate_region(8, 1, 0)
    with pytest.raises(WidthMismatch):
        small_mgr.append(rid, ["0101"])
    with pytest.raises(WidthMismatch):
        small_mgr.append(rid, ["01010101"], [1, 2])


def test_delete_semantics(small_mgr):
    els = ["0001", "0010", "0001", "0100"]
    rid, _ = small_mgr.allocate_region(4, 1, elements=els)
    n, _ = small_mgr.delete(rid, "0001")
    assert n == 2
    assert small_mgr.execute_search(rid, "0001").ordinals == []
    assert small_mgr.region(rid).element_count == 4
    assert small_mgr.execute_search(rid, "XXXX").ordinals == [1, 3]


def test_delete_then_append_is_update(small_mgr):
    rid, _ = small_mgr.allocate_region(4, 4, elements=["0001", "0010"], entries=[10, 20], numeric=True)
    small_mgr.delete(rid, "0001")
    small_mgr.append(rid, ["0001"], [11])
    assert small_mgr.execute_search(rid, "0001").entries == [11]


def test_delete_staged_then_flush(small_mgr):
    rid, _ = small_mgr.allocate_region(8, 1, 0)
    els = [format(i, "08b") for i in range(256)]
    small_mgr.append(rid, els[:10])
    small_mgr.delete(rid, "00000011")
    small_mgr.append(rid, els[10:])
    assert small_mgr.region(rid).groups
    assert small_mgr.execute_search(rid, "00000011").ordinals == []
    assert len(small_mgr.execute_search(rid, "XXXXXXXX").ordinals) == 255


def test_associative_update(small_mgr):
    names = ["bob", "amy", "bob", "joe"]
    code = {"bob": "0001", "amy": "0010", "joe": "0100"}
    rid, _ = small_mgr.allocate_region(4, 4, elements=[code[n] for n in names],
                                        entries=[100, 200, 300, 400], numeric=True)
    before = small_mgr.backend.counters.cpu_fe_bytes
    n, _ = small_mgr.associative_update(rid, code["bob"], "add", 5)
    assert n == 2 and small_mgr.backend.counters.cpu_fe_bytes == before
    assert small_mgr.execute_search(rid, "XXXX").entries == [105, 200, 305, 400]
    assert small_mgr.associative_update(rid, "1111", "set", 1)[0] == 0
    small_mgr.associative_update(rid, code["joe"], "set", 7)
    assert small_mgr.execute_search(rid, code["joe"]).entries == [7]
    small_mgr.associative_update(rid, code["amy"], "sub", 1)
    assert small_mgr.execute_search(rid, code["amy"]).entries == [199]


def test_associative_update_needs_numbers(small_mgr):
    rid, _ = small_mgr.allocate_region(4, 4, elements=["0001"], entries=[b"x"])
    with pytest.raises(NonNumericEntries):
        small_mgr.associative_update(rid, "0001", "add", 1)


def test_link_table_addressing_is_injective(small_mgr):
    rid, _ = small_mgr.allocate_region(8, 24, elements=["00000000"] * 600)
    region = small_mgr.region(rid)
    seen = set()
    for g, entry in enumerate(small_mgr.link_table[rid]):
        for j in range(region.group_fill[g]):
            addr = entry.data_base_address + j * entry.entry_bytes
            assert addr not in seen
            seen.add(addr)
            lo = region.data_base_lpn[g] * SMALL.page_size
            hi = lo + small_mgr._pages_per_group(region) * SMALL.page_size
            assert lo <= addr and addr + entry.entry_bytes <= hi


def test_decode_all_zero():
    d = decode_match_vector(MatchVector.empty(131_072))
    assert d.ordinals == [] and d.buffered_bytes == 0 and d.discarded_bursts == 131_072 // 512


def test_decode_last_bit():
    bits = np.zeros(131_072, dtype=bool)
    bits[131_071] = True
    d = decode_match_vector(bits, 64)
    assert d.ordinals == [131_071]
    # 512-bit bursts: every burst before the last is dropped
    assert len(d.burst_tags) == 1 and d.burst_tags[0][0] == 131_072 // 512 - 1
    assert d.buffered_bytes == 64
    narrow = decode_match_vector(bits, 8)
    assert narrow.burst_tags[0][0] == 131_072 // 64 - 1 == 2047


def test_decode_roundtrip_random():
    rng = np.random.default_rng(1)
    for density in (0.0001, 0.001, 0.05):
        bits = rng.random(131_072) < density
        d = decode_match_vector(bits, 64)
        assert d.ordinals == np.flatnonzero(bits).tolist()
        assert reconstruct_ordinals(d.burst_tags, 64) == d.ordinals
        assert d.buffered_bytes <= 131_072 // 8


def test_decode_rejects_ragged_bursts():
    with pytest.raises(ValueError):
        decode_match_vector(bytes(100), 64)


def test_compaction():
    assert compact_results(100, 64, 4096) == 2
    assert compact_results(0, 64, 4096) == 0
    blocks = compact_results(240_000, 16_384, 4096)
    assert blocks * 4096 / 2**30 == pytest.approx(3.66, abs=0.01)


def test_compaction_charges_packed_bytes(small_mgr):
    rid, _ = small_mgr.allocate_region(8, 5, elements=["00000000"] * 100)
    res = small_mgr.execute_search(rid, "0XXXXXXX")
    assert res.host_bytes == compact_results(100, 5, SMALL.host_block_bytes) * SMALL.host_block_bytes
    assert res.host_bytes < 100 * SMALL.host_block_bytes
