import random

import numpy as np
import pytest

from conftest import brute_match, random_bits, random_key
from tcamssd.errors import (
    ElementTooLong,
    KeyTooLong,
    PositionOutOfRange,
    ProgramOnRowTwice,
    RegionOverflow,
    RowOutOfRange,
    StoredDontCare,
    WrongMode,
)
from tcamssd.flash_array import (
    BlockMode,
    CellState,
    FlashBlock,
    SearchKey,
    Ternary,
    erase_block,
    invalidate_matches,
    native_element_size,
    program_transposed,
    srch,
)


def search_block(rows=196, bitlines=64):
    return FlashBlock(rows, bitlines, BlockMode.SEARCH_SLC)


def test_erase_sets_every_cell_low():
    b = FlashBlock(8, 16)
    b.program_page(3, np.zeros(16, dtype=bool))
    erase_block(b)
    assert b.cells.all() and b.erased
    assert b.cell(3, 0) is CellState.LOW_VTH
    assert b.read_page(3).all()


def test_erase_is_idempotent():
    b = FlashBlock(8, 16)
    b.erase()
    snap = b.cells.copy()
    b.erase()
    assert (b.cells == snap).all()


def test_program_zero_page_goes_high():
    b = FlashBlock(8, 16)
    b.program_page(0, bytes(2))
    assert not b.read_page(0).any()
    assert b.cell(0, 5) is CellState.HIGH_VTH


def test_program_ones_leaves_row_erased():
    b = FlashBlock(8, 16)
    b.program_page(1, b"\xff\xff")
    assert b.read_page(1).all()


def test_program_twice_rejected():
    b = FlashBlock(8, 16)
    b.program_page(2, b"\x0f\xf0")
    with pytest.raises(ProgramOnRowTwice):
        b.program_page(2, b"\xff\xff")


def test_row_bounds():
    b = FlashBlock(8, 16)
    with pytest.raises(RowOutOfRange):
        b.read_page(8)
    with pytest.raises(RowOutOfRange):
        b.program_page(-1, bytes(2))


def test_write_read_identity():
    rng = np.random.default_rng(3)
    b = FlashBlock(8, 64)
    page = rng.integers(0, 2, 64).astype(bool)
    b.program_page(4, page)
    assert (b.read_page(4) == page).all()


def test_worked_example_block():
    b = search_block()
    program_transposed(b, ["0100", "0110", "0001"], 0)
    assert srch(b, "01X0").ordinals() == [0, 1]


def test_inverse_pairs_after_transpose():
    rng = random.Random(5)
    b = search_block(bitlines=64)
    els = [random_bits(rng, 12) for _ in range(40)]
    b.program_transposed(els, 3)
    occ = b.occupied
    for i in range(12):
        assert (b.read_page(2 * i)[occ] == ~b.read_page(2 * i + 1)[occ]).all()
    # the element bit sits on the even row
    assert b.read_page(0)[3] == (els[0][0] == "1")


def test_empty_program_is_noop():
    b = search_block()
    assert b.program_transposed([], 0) == 0
    assert b.erased and b.program_bytes == 0


def test_native_size_limits():
    b = search_block(rows=196)
    b.program_transposed(["1" * 97], 0)
    with pytest.raises(ElementTooLong):
        search_block(rows=196).program_transposed(["1" * 98], 0)


@pytest.mark.parametrize("rows,expected", [(196, 97), (128, 63), (512, 255), (2, 0)])
def test_native_element_size(rows, expected):
    assert native_element_size(rows) == expected


def test_stored_dont_care_rejected():
    with pytest.raises(StoredDontCare):
        search_block().program_transposed(["01X0"], 0)


def test_wrong_mode_and_overflow():
    with pytest.raises(WrongMode):
        FlashBlock(196, 64).program_transposed(["0"], 0)
    with pytest.raises(WrongMode):
        FlashBlock(196, 64).srch("0")
    b = search_block(bitlines=16)
    with pytest.raises(RegionOverflow):
        b.program_transposed(["0"] * 17, 0)
    b.program_transposed(["0"] * 4, 0)
    with pytest.raises(RegionOverflow):
        b.program_transposed(["1"], 2)


def test_program_accounting_with_and_without_inversion():
    b = search_block(bitlines=64)
    moved = b.program_transposed(["1010"], 0)
    assert moved == 2 * 4 * 8 // 2
    plain = FlashBlock(196, 64, BlockMode.SEARCH_SLC, write_inversion=False)
    assert plain.program_transposed(["1010"], 0) == 2 * 4 * 8


def test_key_too_long():
    with pytest.raises(KeyTooLong):
        search_block(rows=20).srch("0" * 10)


def test_wildcard_returns_valid_bitmap():
    b = search_block()
    b.program_transposed(["0100", "0110", "0001"], 0)
    assert (srch(b, "XXXX").bits == b.valid_bitmap()).all()
    assert srch(b, "XXXX").count() == 3


def test_random_blocks_match_bruteforce():
    rng = random.Random(11)
    for _ in range(30):
        width = rng.randint(1, 20)
        els = [random_bits(rng, width) for _ in range(10)]
        b = search_block(bitlines=64)
        b.program_transposed(els, 0)
        for _ in range(20):
            key = random_key(rng, rng.randint(1, width))
            expect = [i for i, e in enumerate(els) if brute_match(key, e)]
            assert srch(b, key).ordinals() == expect


def test_invalidate_then_search():
    b = search_block()
    b.program_transposed(["0100", "0110", "0001"], 0)
    invalidate_matches(b, [1])
    assert srch(b, "01X0").ordinals() == [0]
    invalidate_matches(b, [1])  # already invalid
    assert srch(b, "01X0").ordinals() == [0]
    invalidate_matches(b, [0, 2])
    assert srch(b, "XXXX").count() == 0


def test_invalidate_bounds():
    with pytest.raises(PositionOutOfRange):
        search_block(bitlines=16).invalidate_matches([16])


def test_deletion_is_monotone():
    rng = random.Random(2)
    b = search_block(bitlines=64)
    els = [random_bits(rng, 8) for _ in range(50)]
    b.program_transposed(els, 0)
    keys = [random_key(rng, 8) for _ in range(30)]
    before = [set(srch(b, k).ordinals()) for k in keys]
    b.invalidate_matches(rng.sample(range(50), 20))
    for k, prev in zip(keys, before):
        assert set(srch(b, k).ordinals()) <= prev


def test_conventional_ops_work_in_search_mode():
    a, b = FlashBlock(8, 16), FlashBlock(8, 16, BlockMode.SEARCH_SLC)
    for blk in (a, b):
        blk.program_page(0, b"\x12\x34")
    assert (a.read_page(0) == b.read_page(0)).all()


def test_search_key_parse_and_pad():
    k = SearchKey.parse("01x")
    assert k.bits == (Ternary.ZERO, Ternary.ONE, Ternary.DONT_CARE)
    assert str(k.padded(5)) == "01XXX"
    with pytest.raises(ValueError):
        SearchKey.parse("012")
    with pytest.raises(ValueError):
        SearchKey(())


def test_srch_counts_events_without_touching_cells():
    b = search_block()
    b.program_transposed(["01"], 0)
    snap = b.cells.copy()
    b.srch("0X")
    b.srch("1X")
    assert b.srch_count == 2 and (b.cells == snap).all()
