"""Behavioral model of one NAND flash block with a transposed ternary search.

Cells are binary (SLC).  ``True`` in the cell grid means low Vth, which reads
as logical 1 and conducts under the read reference voltage; ``False`` is high
Vth (logical 0).

Search-mode layout: bit ``i`` of the element on bitline ``k`` lives in rows
``2i`` (the bit) and ``2i + 1`` (its complement).  The last row of the block is
the valid row; a bitline is valid while its valid-row cell is still low Vth.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import (
    ElementTooLong,
    KeyTooLong,
    PositionOutOfRange,
    ProgramOnRowTwice,
    RegionOverflow,
    RowOutOfRange,
    StoredDontCare,
    WrongMode,
)

DEFAULT_ROWS = 196
DEFAULT_BITLINES = 16 * 1024 * 8


class CellState(enum.Enum):
    LOW_VTH = 1
    HIGH_VTH = 0


class BlockMode(enum.Enum):
    CONVENTIONAL = "conventional"
    SEARCH_SLC = "search_slc"


class Ternary(enum.Enum):
    ZERO = "0"
    ONE = "1"
    DONT_CARE = "X"


_KEY_CHARS = {"0": Ternary.ZERO, "1": Ternary.ONE, "X": Ternary.DONT_CARE, "x": Ternary.DONT_CARE}


@dataclass(frozen=True)
class SearchKey:
    bits: tuple[Ternary, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("search key needs at least one position")

    @classmethod
    def parse(cls, text: str) -> "SearchKey":
        try:
            return cls(tuple(_KEY_CHARS[c] for c in text))
        except KeyError as exc:
            raise ValueError(f"bad ternary character {exc.args[0]!r} in key {text!r}") from None

    @classmethod
    def coerce(cls, key: "SearchKey | str") -> "SearchKey":
        return key if isinstance(key, SearchKey) else cls.parse(key)

    @classmethod
    def wildcard(cls, width: int) -> "SearchKey":
        return cls((Ternary.DONT_CARE,) * width)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(b.value for b in self.bits)

    def padded(self, width: int) -> "SearchKey":
        if len(self.bits) >= width:
            return self
        return SearchKey(self.bits + (Ternary.DONT_CARE,) * (width - len(self.bits)))

    def slice(self, start: int, stop: int) -> "SearchKey | None":
        """Positions [start, stop) or None when the key does not reach start."""
        part = self.bits[start:stop]
        return SearchKey(part) if part else None

    def matches(self, element: str) -> bool:
        """Host-side ternary comparison, used as the reference oracle."""
        for p, b in enumerate(self.bits):
            if b is Ternary.DONT_CARE:
                continue
            if p >= len(element):
                continue
            if element[p] != b.value:
                return False
        return True


@dataclass(frozen=True)
class MatchVector:
    bits: np.ndarray  # bool, one entry per bitline

    def __len__(self) -> int:
        return len(self.bits)

    def __and__(self, other: "MatchVector") -> "MatchVector":
        return MatchVector(self.bits & other.bits)

    def __or__(self, other: "MatchVector") -> "MatchVector":
        return MatchVector(self.bits | other.bits)

    def ordinals(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits).tobytes()

    @classmethod
    def empty(cls, bitlines: int) -> "MatchVector":
        return cls(np.zeros(bitlines, dtype=bool))


def int_to_bits(value: int, width: int) -> str:
    if value < 0 or value >= 1 << width:
        raise ElementTooLong(f"value {value} does not fit in {width} bits")
    return format(value, f"0{width}b") if width else ""


def _element_matrix(elements: Sequence[str], native: int) -> tuple[np.ndarray, np.ndarray]:
    """(n, width) bit matrix plus per-element lengths."""
    lengths = np.fromiter((len(e) for e in elements), dtype=np.int64, count=len(elements))
    width = int(lengths.max()) if len(elements) else 0
    if width > native:
        raise ElementTooLong(f"element of {width} bits exceeds native element size {native}")
    mat = np.zeros((len(elements), width), dtype=bool)
    for j, e in enumerate(elements):
        if not e:
            continue
        raw = np.frombuffer(e.encode("ascii"), dtype=np.uint8)
        if np.any((raw != ord("0")) & (raw != ord("1"))):
            if np.any((raw == ord("X")) | (raw == ord("x"))):
                raise StoredDontCare(f"element {e!r}: don't-care cannot be stored")
            raise ValueError(f"element {e!r} is not a bit string")
        mat[j, : len(e)] = raw == ord("1")
    return mat, lengths


class FlashBlock:
    def __init__(
        self,
        rows: int = DEFAULT_ROWS,
        bitlines: int = DEFAULT_BITLINES,
        mode: BlockMode = BlockMode.CONVENTIONAL,
        write_inversion: bool = True,
    ):
        if rows < 1 or bitlines < 8 or bitlines % 8:
            raise ValueError("rows must be >= 1 and bitlines a positive multiple of 8")
        self.rows = rows
        self.bitlines = bitlines
        self.mode = mode
        self.write_inversion = write_inversion
        self.cells = np.ones((rows, bitlines), dtype=bool)
        self.row_programmed = np.zeros(rows, dtype=bool)
        # bitlines that hold a transposed element since the last erase
        self.occupied = np.zeros(bitlines, dtype=bool)
        self.erased = True
        self.srch_count = 0
        self.program_bytes = 0

    @property
    def page_size(self) -> int:
        return self.bitlines // 8

    @property
    def valid_row(self) -> int:
        return self.rows - 1

    def native_element_size(self) -> int:
        return native_element_size(self.rows)

    def cell(self, row: int, bitline: int) -> CellState:
        return CellState.LOW_VTH if self.cells[row, bitline] else CellState.HIGH_VTH

    # -- conventional page operations -------------------------------------------------

    def erase(self) -> None:
        self.cells.fill(True)
        self.row_programmed.fill(False)
        self.occupied.fill(False)
        self.erased = True

    def _check_row(self, row: int) -> None:
        if not 0 <= row < self.rows:
            raise RowOutOfRange(f"row {row} outside 0..{self.rows - 1}")

    def program_page(self, row: int, page_bits) -> None:
        self._check_row(row)
        if self.row_programmed[row]:
            raise ProgramOnRowTwice(f"row {row} already programmed since last erase")
        bits = _as_page_bits(page_bits, self.bitlines)
        # programming only ever raises Vth
        self.cells[row] &= bits
        self.row_programmed[row] = True
        self.erased = False
        self.program_bytes += self.page_size

    def read_page(self, row: int) -> np.ndarray:
        self._check_row(row)
        return self.cells[row].copy()

    # -- search-mode operations -------------------------------------------------------

    def _require_search_mode(self) -> None:
        if self.mode is not BlockMode.SEARCH_SLC:
            raise WrongMode("block is not in search (SLC) mode")

    def program_transposed(self, elements: Sequence[str], start_bitline: int = 0) -> int:
        """Write elements down consecutive bitlines; returns FE-BE bytes moved."""
        self._require_search_mode()
        if not elements:
            return 0
        mat, _ = _element_matrix(elements, self.native_element_size())
        n, width = mat.shape
        stop = start_bitline + n
        if start_bitline < 0 or stop > self.bitlines:
            raise RegionOverflow(f"{n} elements at bitline {start_bitline} exceed {self.bitlines} bitlines")
        span = slice(start_bitline, stop)
        if self.occupied[span].any() or not self.cells[: 2 * width, span].all():
            raise RegionOverflow(f"bitlines {start_bitline}..{stop - 1} are not erased")
        t = mat.T
        self.cells[0 : 2 * width : 2, span] &= t
        self.cells[1 : 2 * width : 2, span] &= ~t
        self.row_programmed[: 2 * width] = True
        self.occupied[span] = True
        self.erased = False
        rows_programmed = 2 * width
        moved = rows_programmed * self.page_size
        if self.write_inversion:
            moved //= 2
        self.program_bytes += moved
        return moved

    def srch(self, key: SearchKey | str) -> MatchVector:
        self._require_search_mode()
        key = SearchKey.coerce(key)
        if len(key) > self.native_element_size():
            raise KeyTooLong(f"key of {len(key)} bits exceeds native element size {self.native_element_size()}")
        self.srch_count += 1
        conduct = self.occupied & self.cells[self.valid_row]
        for p, b in enumerate(key.bits):
            if b is Ternary.ONE:
                conduct = conduct & self.cells[2 * p]
            elif b is Ternary.ZERO:
                conduct = conduct & self.cells[2 * p + 1]
        return MatchVector(conduct)

    def valid_bitmap(self) -> np.ndarray:
        return self.occupied & self.cells[self.valid_row]

    def invalidate_matches(self, bitline_positions: Iterable[int]) -> None:
        self._require_search_mode()
        pos = np.fromiter(bitline_positions, dtype=np.int64)
        if pos.size and (pos.min() < 0 or pos.max() >= self.bitlines):
            raise PositionOutOfRange(f"bitline positions must lie in 0..{self.bitlines - 1}")
        # in-place Vth raise of the valid-row cell; exempt from program-once
        self.cells[self.valid_row, pos] = False


def native_element_size(rows: int) -> int:
    return max(rows // 2 - 1, 0)


def _as_page_bits(page_bits, bitlines: int) -> np.ndarray:
    if isinstance(page_bits, (bytes, bytearray, memoryview)):
        bits = np.unpackbits(np.frombuffer(bytes(page_bits), dtype=np.uint8)).astype(bool)
    else:
        bits = np.asarray(page_bits, dtype=bool)
    if bits.shape != (bitlines,):
        raise ValueError(f"page must carry {bitlines} bits, got {bits.shape}")
    return bits


# Functional aliases mirroring the command names used by the firmware layer.
def erase_block(block: FlashBlock) -> None:
    block.erase()


def program_page(block: FlashBlock, row: int, page_bits) -> None:
    block.program_page(row, page_bits)


def read_page(block: FlashBlock, row: int) -> np.ndarray:
    return block.read_page(row)


def program_transposed(block: FlashBlock, elements: Sequence[str], start_bitline: int = 0) -> int:
    return block.program_transposed(elements, start_bitline)


def srch(block: FlashBlock, key: SearchKey | str) -> MatchVector:
    return block.srch(key)


def invalidate_matches(block: FlashBlock, bitline_positions: Iterable[int]) -> None:
    block.invalidate_matches(bitline_positions)
