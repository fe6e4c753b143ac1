"""Search-region firmware: allocation, link table, search planning and decode."""

from __future__ import annotations

import heapq
import math
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .backend import (
    Backend,
    FlashOp,
    LatencyReport,
    PhysicalAddress,
    SsdConfig,
    striped_page_address,
    total_blocks,
)
from .errors import (
    CapacityExhausted,
    ElementWiderThanSupported,
    KeyTooWide,
    NonNumericEntries,
    UnknownRegion,
    WidthMismatch,
)
from .flash_array import BlockMode, FlashBlock, MatchVector, SearchKey, native_element_size

LINK_ENTRY_BYTES = 44  # 8 B base + 4 B entry size + 8 B buffer handle + 24 B bookkeeping
MAX_BLOCKS_PER_ELEMENT = 4
REDUCTIONS = ("single", "and", "or")


@dataclass(frozen=True)
class LinkTableEntry:
    group: int
    data_base_address: int  # byte address in the logical data space
    entry_bytes: int
    update_buffer_handle: int


@dataclass
class DecodedMatches:
    ordinals: list[int]
    burst_tags: list[tuple[int, bytes]] = field(default_factory=list)
    buffered_bytes: int = 0
    discarded_bursts: int = 0

    def __len__(self):
        return len(self.ordinals)


def decode_match_vector(vector, burst_bytes: int = 64, base: int = 0) -> DecodedMatches:
    """Scan a match vector burst by burst, dropping all-zero bursts.

    Each kept burst is tagged with the running count of dropped bursts, which
    is enough to recover its position later.
    """
    if isinstance(vector, MatchVector):
        raw = np.packbits(vector.bits)
    elif isinstance(vector, (bytes, bytearray)):
        raw = np.frombuffer(bytes(vector), dtype=np.uint8)
    else:
        raw = np.packbits(np.asarray(vector, dtype=bool))
    if len(raw) % burst_bytes:
        raise ValueError(f"vector of {len(raw)} B is not a whole number of {burst_bytes} B bursts")
    bursts = raw.reshape(-1, burst_bytes)
    nonzero = bursts.any(axis=1)
    dropped_before = np.cumsum(~nonzero) - (~nonzero)
    tags = [(int(dropped_before[i]), bursts[i].tobytes()) for i in np.flatnonzero(nonzero)]
    ordinals = reconstruct_ordinals(tags, burst_bytes, base)
    return DecodedMatches(ordinals, tags, len(tags) * burst_bytes, int((~nonzero).sum()))


def reconstruct_ordinals(tags: Sequence[tuple[int, bytes]], burst_bytes: int = 64, base: int = 0) -> list[int]:
    out = []
    for kept, (dropped, payload) in enumerate(tags):
        burst_index = dropped + kept
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
        start = base + burst_index * burst_bytes * 8
        out.extend((start + np.flatnonzero(bits)).tolist())
    return out


def compact_results(entry_count: int, entry_bytes: int, host_block_bytes: int = 4096) -> int:
    """Host blocks needed once entries are packed back to back."""
    if entry_count <= 0:
        return 0
    return math.ceil(entry_count * entry_bytes / host_block_bytes)


@dataclass
class SearchRegion:
    region_id: int
    element_bits: int
    entry_bytes: int
    blocks_per_element: int
    elements_per_block: int
    numeric: bool
    groups: list[list[PhysicalAddress]] = field(default_factory=list)
    group_fill: list[int] = field(default_factory=list)
    data_base_lpn: list[int] = field(default_factory=list)
    element_count: int = 0
    virtual: bool = False
    entries: dict[int, object] = field(default_factory=dict)
    staged: list[tuple[str, object]] = field(default_factory=list)
    tombstones: set[int] = field(default_factory=set)
    update_buffer: dict[int, object] = field(default_factory=dict)
    version: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def blocks(self) -> list[PhysicalAddress]:
        return [a for g in self.groups for a in g]

    @property
    def next_group_ordinal(self) -> int:
        return len(self.groups) * self.elements_per_block

    def staged_ordinal(self, j: int) -> int:
        return self.next_group_ordinal + j


@dataclass
class SearchOutcome:
    matches: DecodedMatches
    report: LatencyReport
    srch_count: int
    vector_bytes: int


@dataclass
class ReadOutcome:
    entries: list
    report: LatencyReport
    read_count: int
    host_blocks: int
    host_bytes: int


@dataclass
class SearchResult:
    matches: DecodedMatches
    entries: list
    report: LatencyReport
    srch_count: int
    read_count: int
    vector_bytes: int
    host_bytes: int
    next_ordinal: int | None = None

    @property
    def ordinals(self) -> list[int]:
        return self.matches.ordinals


@dataclass
class SearchEstimate:
    report: LatencyReport
    srch_count: int
    vector_bytes: int
    read_count: int
    host_bytes: int


def _split_key(key: SearchKey, width: int, native: int, bpe: int) -> list[SearchKey]:
    full = key.padded(width)
    parts = []
    for b in range(bpe):
        part = full.slice(b * native, min((b + 1) * native, width))
        parts.append(part if part is not None else SearchKey.wildcard(1))
    return parts


class SearchManager:
    def __init__(self, backend: Backend | None = None, max_blocks_per_element: int = MAX_BLOCKS_PER_ELEMENT):
        self.backend = backend or Backend()
        self.config: SsdConfig = self.backend.config
        self.native = native_element_size(self.config.pages_per_block)
        self.max_blocks_per_element = max_blocks_per_element
        self.regions: dict[int, SearchRegion] = {}
        self.link_table: dict[int, list[LinkTableEntry]] = {}
        self.flash: dict[PhysicalAddress, FlashBlock] = {}
        self._next_region = 1
        self._fresh_block = 0
        self._recycled: list[int] = []
        self._search_blocks = 0
        self._data_pages = 0
        self._next_lpn = 0
        self._lock = threading.RLock()

    # -- capacity -----------------------------------------------------------------------

    @property
    def search_blocks_in_use(self) -> int:
        return self._search_blocks

    @property
    def data_blocks_in_use(self) -> int:
        return math.ceil(self._data_pages / self.config.pages_per_block)

    def blocks_in_use(self) -> int:
        return self._search_blocks + self.data_blocks_in_use

    def link_table_bytes(self) -> int:
        return LINK_ENTRY_BYTES * sum(len(v) for v in self.link_table.values())

    def _block_address(self, index: int) -> PhysicalAddress:
        cfg = self.config
        units = cfg.parallel_units
        offset, i = divmod(index, units)
        return PhysicalAddress(
            i % cfg.channels,
            (i // cfg.channels) % cfg.dies_per_channel,
            offset % cfg.planes_per_die,
            offset // cfg.planes_per_die,
        )

    def _block_index(self, addr: PhysicalAddress) -> int:
        cfg = self.config
        offset = addr.block * cfg.planes_per_die + addr.plane
        return offset * cfg.parallel_units + addr.die * cfg.channels + addr.channel

    def _take_blocks(self, n_blocks: int, data_pages: int) -> list[PhysicalAddress]:
        total = total_blocks(self.config)
        need_data = math.ceil((self._data_pages + data_pages) / self.config.pages_per_block)
        if self._search_blocks + n_blocks + need_data > total:
            raise CapacityExhausted(
                f"need {n_blocks} search blocks and {data_pages} data pages; "
                f"{total - self.blocks_in_use()} blocks free"
            )
        out = []
        for _ in range(n_blocks):
            if self._recycled:
                idx = heapq.heappop(self._recycled)
            else:
                idx = self._fresh_block
                self._fresh_block += 1
            out.append(self._block_address(idx))
        self._search_blocks += n_blocks
        self._data_pages += data_pages
        return out

    def _pages_per_group(self, region: SearchRegion) -> int:
        return math.ceil(region.elements_per_block * region.entry_bytes / self.config.page_size)

    def _add_group(self, region: SearchRegion) -> int:
        pages = self._pages_per_group(region)
        addrs = self._take_blocks(region.blocks_per_element, pages)
        g = len(region.groups)
        base_lpn = self._next_lpn
        self._next_lpn += pages
        region.groups.append(addrs)
        region.group_fill.append(0)
        region.data_base_lpn.append(base_lpn)
        self.link_table[region.region_id].append(
            LinkTableEntry(g, base_lpn * self.config.page_size, region.entry_bytes, region.region_id)
        )
        return g

    # -- region lifecycle ---------------------------------------------------------------

    def region(self, region_id: int) -> SearchRegion:
        try:
            return self.regions[region_id]
        except KeyError:
            raise UnknownRegion(f"no region {region_id}") from None

    def allocate_region(
        self,
        element_bits: int,
        entry_bytes: int,
        element_count: int = 0,
        elements: Sequence[str] | None = None,
        entries: Sequence | None = None,
        numeric: bool = False,
    ) -> tuple[int, LatencyReport]:
        if element_bits < 1 or entry_bytes < 1:
            raise ValueError("element_bits and entry_bytes must be positive")
        bpe = math.ceil(element_bits / self.native) if self.native else 0
        if self.native == 0 or bpe > self.max_blocks_per_element:
            raise ElementWiderThanSupported(
                f"{element_bits} bits needs {bpe} blocks per element; limit is {self.max_blocks_per_element}"
            )
        if elements is not None:
            entries = list(entries) if entries is not None else [b""] * len(elements)
            if len(entries) != len(elements):
                raise WidthMismatch(f"{len(elements)} elements but {len(entries)} entries")
            element_count = len(elements)
        with self._lock:
            region = SearchRegion(
                self._next_region,
                element_bits,
                entry_bytes,
                bpe,
                self.config.bitlines,
                numeric,
                virtual=elements is None and element_count > 0,
            )
            n_groups = math.ceil(element_count / region.elements_per_block)
            pages = n_groups * self._pages_per_group(region)
            # fail before touching any state
            if self._search_blocks + n_groups * bpe + math.ceil(
                (self._data_pages + pages) / self.config.pages_per_block
            ) > total_blocks(self.config):
                raise CapacityExhausted(f"region of {element_count} elements does not fit")
            self._next_region += 1
            self.regions[region.region_id] = region
            self.link_table[region.region_id] = []
            for _ in range(n_groups):
                self._add_group(region)
        report = LatencyReport()
        if elements is not None and element_count:
            self._check_elements(region, elements)
            epb = region.elements_per_block
            for g in range(n_groups):
                chunk = list(elements[g * epb : (g + 1) * epb])
                report = report + self._program_group(region, g, chunk, list(entries[g * epb : (g + 1) * epb]))
        else:
            region.element_count = element_count
            for g in range(n_groups):
                region.group_fill[g] = min(region.elements_per_block, element_count - g * region.elements_per_block)
        return region.region_id, report

    def deallocate_region(self, region_id: int) -> None:
        with self._lock:
            region = self.region(region_id)
            with region.lock:
                for addr in region.blocks:
                    blk = self.flash.pop(addr, None)
                    if blk is not None:
                        blk.erase()
                    heapq.heappush(self._recycled, self._block_index(addr))
                self._search_blocks -= len(region.blocks)
                self._data_pages -= len(region.groups) * self._pages_per_group(region)
                del self.regions[region_id]
                del self.link_table[region_id]
                region.version += 1

    def _check_elements(self, region: SearchRegion, elements: Sequence[str]) -> None:
        for e in elements:
            if len(e) != region.element_bits:
                raise WidthMismatch(f"element {e!r} is {len(e)} bits; region holds {region.element_bits}-bit elements")

    def _block(self, addr: PhysicalAddress) -> FlashBlock:
        blk = self.flash.get(addr)
        if blk is None:
            cfg = self.config
            blk = FlashBlock(cfg.pages_per_block, cfg.bitlines, BlockMode.SEARCH_SLC, cfg.write_inversion)
            self.flash[addr] = blk
        return blk

    def _program_group(self, region: SearchRegion, g: int, elements: list[str], entries: list) -> LatencyReport:
        cfg = self.config
        ops = []
        for b, addr in enumerate(region.groups[g]):
            part = [e[b * self.native : (b + 1) * self.native] for e in elements]
            moved = self._block(addr).program_transposed(part, 0)
            rows = 2 * len(part[0]) if part else 0
            for r in range(rows):
                ops.append(FlashOp("program", addr.with_page(r), moved // rows, 0))
        base = g * region.elements_per_block
        for j, entry in enumerate(entries):
            region.entries[base + j] = entry
        region.group_fill[g] = len(elements)
        region.element_count += len(elements)
        data_pages = math.ceil(len(elements) * region.entry_bytes / cfg.page_size)
        for p in range(data_pages):
            addr = striped_page_address(cfg, region.data_base_lpn[g] + p)
            ops.append(FlashOp("program", addr, cfg.page_size, 1))
        region.version += 1
        return self.backend.schedule(ops)

    # -- append / delete / update -------------------------------------------------------

    def append(self, region_id: int, elements: Sequence[str], entries: Sequence | None = None) -> LatencyReport:
        region = self.region(region_id)
        entries = list(entries) if entries is not None else [b""] * len(elements)
        if len(entries) != len(elements):
            raise WidthMismatch(f"{len(elements)} elements but {len(entries)} entries")
        self._check_elements(region, elements)
        report = LatencyReport()
        with region.lock:
            for e, v in zip(elements, entries):
                region.staged.append((e, v))
                region.version += 1
                if len(region.staged) == region.elements_per_block:
                    report = report + self._flush(region)
        return report

    def _flush(self, region: SearchRegion) -> LatencyReport:
        with self._lock:
            g = self._add_group(region)
        base = g * region.elements_per_block
        dead = [j for j in range(len(region.staged)) if base + j in region.tombstones]
        report = self._program_group(region, g, [e for e, _ in region.staged], [v for _, v in region.staged])
        if dead:
            for addr in region.groups[g]:
                self._block(addr).invalidate_matches(dead)
        region.staged.clear()
        region.tombstones.clear()
        return report

    def delete(self, region_id: int, key, reduction: str = "single") -> tuple[int, LatencyReport]:
        region = self.region(region_id)
        with region.lock:
            outcome = self.search_matches(region_id, key, reduction)
            epb = region.elements_per_block
            by_group: dict[int, list[int]] = {}
            staged_base = region.next_group_ordinal
            for o in outcome.matches.ordinals:
                if o >= staged_base:
                    region.tombstones.add(o)
                else:
                    by_group.setdefault(o // epb, []).append(o % epb)
            for g, bitlines in by_group.items():
                for addr in region.groups[g]:
                    self._block(addr).invalidate_matches(bitlines)
            for o in outcome.matches.ordinals:
                region.update_buffer.pop(o, None)
            region.version += 1
        # an in-place valid-row raise costs one program per touched block
        ops = [FlashOp("program", addr, 0, 0) for g in by_group for addr in region.groups[g]]
        report = outcome.report + self.backend.schedule(ops)
        return len(outcome.matches.ordinals), report

    def associative_update(
        self, region_id: int, key, op: str, immediate: int, reduction: str = "single"
    ) -> tuple[int, LatencyReport]:
        region = self.region(region_id)
        if not region.numeric:
            raise NonNumericEntries(f"region {region_id} does not hold numeric entries")
        if op not in ("add", "sub", "set"):
            raise ValueError(f"unknown update op {op!r}")
        mask = (1 << (8 * region.entry_bytes)) - 1
        with region.lock:
            outcome = self.search_matches(region_id, key, reduction)
            ordinals = outcome.matches.ordinals
            # matched entries come into the firmware buffer; nothing goes to the host
            read = self._read(region, ordinals, host=False)
            for o, cur in zip(ordinals, read.entries):
                if op == "add":
                    new = cur + immediate
                elif op == "sub":
                    new = cur - immediate
                else:
                    new = immediate
                region.update_buffer[o] = new & mask
            if ordinals:
                region.version += 1
        return len(ordinals), outcome.report + read.report

    # -- search -------------------------------------------------------------------------

    def _sub_keys(self, region: SearchRegion, key, reduction: str) -> list[SearchKey]:
        if reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")
        if isinstance(key, (str, SearchKey)):
            keys = [SearchKey.coerce(key)]
        else:
            keys = [SearchKey.coerce(k) for k in key]
        if not keys:
            raise ValueError("at least one key is required")
        if reduction == "single" and len(keys) != 1:
            raise ValueError("reduction 'single' takes exactly one key")
        for k in keys:
            if len(k) > region.element_bits:
                raise KeyTooWide(f"key of {len(k)} bits exceeds {region.element_bits}-bit elements")
        return keys

    def search_matches(self, region_id: int, key, reduction: str = "single") -> SearchOutcome:
        """SRCH every block group, combine vectors, decode; no data reads."""
        region = self.region(region_id)
        cfg = self.config
        with region.lock:
            keys = self._sub_keys(region, key, reduction)
            parts = [_split_key(k, region.element_bits, self.native, region.blocks_per_element) for k in keys]
            ops: list[FlashOp] = []
            decode_bytes = [0] * cfg.channels
            ordinals: list[int] = []
            tags: list[tuple[int, bytes]] = []
            buffered = dropped = 0
            for g, addrs in enumerate(region.groups):
                combined = None
                for sub in parts:
                    vec = None
                    for addr, part in zip(addrs, sub):
                        ops.append(FlashOp("search", addr, cfg.page_size, 0))
                        decode_bytes[addr.channel] += cfg.page_size
                        blk = self.flash.get(addr)
                        v = blk.srch(part) if blk is not None else MatchVector.empty(cfg.bitlines)
                        vec = v if vec is None else vec & v
                    if combined is None:
                        combined = vec
                    elif reduction == "or":
                        combined = combined | vec
                    else:
                        combined = combined & vec
                d = decode_match_vector(combined, cfg.burst_bytes, g * region.elements_per_block)
                ordinals.extend(d.ordinals)
                tags.extend(d.burst_tags)
                buffered += d.buffered_bytes
                dropped += d.discarded_bursts
            # staged elements are compared in firmware DRAM
            for j, (e, _) in enumerate(region.staged):
                o = region.staged_ordinal(j)
                if o in region.tombstones:
                    continue
                hits = [k.matches(e) for k in keys]
                if (any(hits) if reduction == "or" else all(hits)):
                    ordinals.append(o)
            staged_scan = cfg.dram_time(len(region.staged) * math.ceil(region.element_bits / 8))
            report = self.backend.schedule(
                ops,
                translations=1 + len(region.groups),
                decode_bytes_per_channel=decode_bytes,
            ).with_extra("translation", staged_scan)
        return SearchOutcome(DecodedMatches(ordinals, tags, buffered, dropped), report, len(ops), len(ops) * cfg.page_size)

    def _entry_pages(self, region: SearchRegion, ordinal: int) -> range:
        ps = self.config.page_size
        g, j = divmod(ordinal, region.elements_per_block)
        off = j * region.entry_bytes
        base = region.data_base_lpn[g]
        return range(base + off // ps, base + (off + region.entry_bytes - 1) // ps + 1)

    def _read(self, region: SearchRegion, ordinals: Sequence[int], host: bool = True) -> ReadOutcome:
        cfg = self.config
        staged_base = region.next_group_ordinal
        entries = []
        pages: set[int] = set()
        buffer_hits = 0
        for o in ordinals:
            if o in region.update_buffer:
                entries.append(region.update_buffer[o])
                buffer_hits += 1
            elif o >= staged_base:
                entries.append(region.staged[o - staged_base][1])
                buffer_hits += 1
            else:
                entries.append(region.entries.get(o))
                pages.update(self._entry_pages(region, o))
        ops = [FlashOp("read", striped_page_address(cfg, lpn), cfg.page_size, 1) for lpn in sorted(pages)]
        host_blocks = compact_results(len(entries), region.entry_bytes, cfg.host_block_bytes) if host else 0
        host_bytes = host_blocks * cfg.host_block_bytes
        report = self.backend.schedule(
            ops,
            translations=len(ops) + buffer_hits,
            host_bytes=host_bytes,
        )
        return ReadOutcome(entries, report, len(ops), host_blocks, host_bytes)

    def read_entries(self, region_id: int, ordinals: Sequence[int]) -> ReadOutcome:
        region = self.region(region_id)
        with region.lock:
            return self._read(region, ordinals)

    def execute_search(
        self,
        region_id: int,
        key,
        reduction: str = "single",
        max_results: int | None = None,
        start_ordinal: int = 0,
    ) -> SearchResult:
        region = self.region(region_id)
        with region.lock:
            found = self.search_matches(region_id, key, reduction)
            ordinals = [o for o in found.matches.ordinals if o >= start_ordinal]
            next_ordinal = None
            if max_results is not None and len(ordinals) > max_results:
                next_ordinal = ordinals[max_results]
                ordinals = ordinals[:max_results]
            read = self._read(region, ordinals)
        matches = DecodedMatches(ordinals, found.matches.burst_tags, found.matches.buffered_bytes,
                                 found.matches.discarded_bursts)
        return SearchResult(
            matches,
            read.entries,
            found.report + read.report,
            found.srch_count,
            read.read_count,
            found.vector_bytes,
            read.host_bytes,
            next_ordinal,
        )

    def estimate_search(
        self,
        region_id: int,
        sub_keys: int = 1,
        read_count: int = 0,
        host_bytes: int = 0,
        buffer_lookups: int = 0,
        groups: Sequence[int] | None = None,
    ) -> SearchEstimate:
        """Cost of a search without touching cells; for regions too large to simulate.

        SRCHs and reads are timed with the closed-form striped batch; decode is
        charged per channel controller exactly as in the simulated path.
        ``groups`` limits the search to a subset of block groups.
        """
        region = self.region(region_id)
        cfg = self.config
        chosen = region.groups if groups is None else [region.groups[g] for g in groups]
        n_blocks = len(chosen) * region.blocks_per_element
        srch = sub_keys * n_blocks
        per_channel = [0] * cfg.channels
        for g in chosen:
            for addr in g:
                per_channel[addr.channel] += sub_keys * cfg.page_size
        search = self.backend.batch_report("search", srch)
        reads = self.backend.batch_report("read", read_count)
        self.backend.counters.add_cpu_fe(host_bytes)
        decode = max(per_channel, default=0) / cfg.decode_rate * 1e6
        report = search + reads + LatencyReport.serial(
            translation=(1 + len(chosen) + read_count + buffer_lookups) * cfg.dram_access,
            decode=decode,
            cpu_fe_transfer=cfg.host_time(host_bytes),
        )
        return SearchEstimate(report, srch, srch * cfg.page_size, read_count, host_bytes)

