import random

import pytest

from conftest import brute_match, random_bits
from tcamssd.errors import MalformedCommand, StaleContinuation, UnknownRegion
from tcamssd.nvme import (
    Allocate,
    Append,
    AssocUpdate,
    Deallocate,
    Delete,
    Search,
    SearchContinue,
    SimpleSearch,
    Status,
    tcam_search,
    tcam_update,
)


def make_region(ctrl, n=40, width=8, seed=0, numeric=True):
    rng = random.Random(seed)
    els = [random_bits(rng, width) for _ in range(n)]
    done = ctrl.submit(Allocate(width, 4, elements=els, entries=list(range(n)), numeric=numeric))
    return done.region_id, els


def test_buffer_fits(ctrl):
    rid, _ = make_region(ctrl, n=10, width=4)
    done = ctrl.submit(SimpleSearch(rid, "XXXX", 16))
    assert done.returned_entry_count == 10 and not done.buffer_exceeded and done.token is None


def test_buffer_overflow_and_continue(ctrl):
    rid, _ = make_region(ctrl, n=40, width=4)
    first = ctrl.submit(SimpleSearch(rid, "XXXX", 16))
    assert first.returned_entry_count == 16 and first.buffer_exceeded and first.token
    second = ctrl.submit(SearchContinue(first.token, 16))
    third = ctrl.submit(SearchContinue(second.token, 16))
    assert second.buffer_exceeded and not third.buffer_exceeded and third.token is None
    assert first.entries + second.entries + third.entries == list(range(40))


def test_pagination_completeness(ctrl):
    rid, els = make_region(ctrl, n=60, width=6, seed=3)
    for cap in (1, 3, 7, 64):
        for key in ("1XXXXX", "XX0XX1", "XXXXXX"):
            got = tcam_search(ctrl, rid, key, cap)
            assert got == [i for i, e in enumerate(els) if brute_match(key, e)]


def test_submit_count_equals_matches_at_capacity_one(ctrl):
    rid, els = make_region(ctrl, n=30, width=5, seed=8)
    k = sum(brute_match("1XXXX", e) for e in els)
    before = ctrl.submitted
    tcam_search(ctrl, rid, "1XXXX", 1)
    assert ctrl.submitted - before == max(k, 1)


def test_wrapper_matches_one_shot(ctrl):
    rid, _ = make_region(ctrl, n=50, width=6, seed=5)
    one_shot = ctrl.manager.execute_search(rid, "X1XXXX").entries
    for cap in (1, 4, 100):
        assert tcam_search(ctrl, rid, "X1XXXX", cap) == one_shot


def test_empty_region_search(ctrl):
    rid = ctrl.submit(Allocate(8, 4)).region_id
    assert tcam_search(ctrl, rid, "1") == []


def test_each_command_adds_one_nvme_init(ctrl):
    rid, _ = make_region(ctrl, n=20, width=4)
    done = ctrl.submit(SimpleSearch(rid, "1XXX", 4))
    assert done.report.components["nvme"] == pytest.approx(4.0)
    if done.token:
        cont = ctrl.submit(SearchContinue(done.token, 4))
        assert cont.report.components["nvme"] == pytest.approx(4.0)


def test_simple_and_pointer_search_agree(ctrl):
    rid, _ = make_region(ctrl, n=40, width=8, seed=2)
    a = ctrl.submit(SimpleSearch(rid, "1X0XXXXX", 100))
    b = ctrl.submit(Search(rid, "1X0XXXXX", 100))
    assert a.entries == b.entries and a.ordinals == b.ordinals


def test_pointer_key_counts_as_host_traffic(ctrl):
    rid, _ = make_region(ctrl, n=4, width=8)
    before = ctrl.counters.cpu_fe_bytes
    ctrl.submit(Search(rid, "11111111", 8))
    assert ctrl.counters.cpu_fe_bytes - before == 1  # one key byte, zero matches


def test_inline_key_limit(ctrl):
    rid = ctrl.submit(Allocate(8, 4)).region_id
    with pytest.raises(MalformedCommand):
        ctrl.submit(SimpleSearch(rid, "X" * 128, 4))
    with pytest.raises(MalformedCommand):
        ctrl.submit(SimpleSearch(rid, "1", 0))
    with pytest.raises(MalformedCommand):
        ctrl.submit(object())


def test_unknown_region_is_error_status(ctrl):
    done = ctrl.submit(SimpleSearch(999, "1", 4))
    assert done.status is Status.UNKNOWN_REGION
    with pytest.raises(UnknownRegion):
        done.raise_for_status()


def test_stale_continuation_after_mutation(ctrl):
    rid, _ = make_region(ctrl, n=20, width=4, numeric=True)
    first = ctrl.submit(SimpleSearch(rid, "XXXX", 4))
    ctrl.submit(Append(rid, ["0000"], [1]))
    with pytest.raises(StaleContinuation):
        ctrl.submit(SearchContinue(first.token, 4))


def test_update_wrapper(ctrl):
    names = ["bob", "ann", "bob", "bob", "kim"]
    code = {"bob": "0001", "ann": "0010", "kim": "0100"}
    done = ctrl.submit(Allocate(4, 4, elements=[code[n] for n in names],
                                entries=[50, 60, 70, 80, 90], numeric=True))
    rid = done.region_id
    before = ctrl.counters.cpu_fe_bytes
    assert tcam_update(ctrl, rid, code["bob"], "add", 10) == 3
    assert ctrl.counters.cpu_fe_bytes == before
    assert tcam_update(ctrl, rid, "1111", "set", 0) == 0
    assert tcam_search(ctrl, rid, code["bob"]) == [60, 80, 90]


def test_delete_and_deallocate_commands(ctrl):
    rid, els = make_region(ctrl, n=20, width=4, seed=1)
    k = sum(brute_match("1XXX", e) for e in els)
    assert ctrl.submit(Delete(rid, "1XXX")).count == k
    assert tcam_search(ctrl, rid, "1XXX") == []
    ctrl.submit(Deallocate(rid))
    assert ctrl.submit(SimpleSearch(rid, "1", 4)).status is Status.UNKNOWN_REGION


def test_assoc_update_command(ctrl):
    rid, els = make_region(ctrl, n=8, width=4)
    done = ctrl.submit(AssocUpdate(rid, "XXXX", "set", 3))
    assert done.count == 8
    assert set(tcam_search(ctrl, rid, "XXXX")) == {3}
