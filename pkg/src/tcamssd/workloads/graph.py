"""Compressed graph index over search regions, and traversal cost replay."""

from __future__ import annotations

import bisect
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..backend import Backend, LatencyReport, MovementCounters, SsdConfig, COMPONENTS
from ..errors import UnknownVertex, VertexIdOverflow
from ..ftl import SearchManager, compact_results

ID_BITS = 32
TUPLE_BITS = 2 * ID_BITS  # (src, dst)
EDGE_BYTES = 8
BASELINE_ENTRY_BYTES = 8  # 4 B pointer + 4 B metadata
INDEX_ENTRY_BYTES = 12  # max id, edge count, handle
MODES = ("IM", "OOM", "TCAM_NP", "TCAM_T")


@dataclass(frozen=True)
class GraphConfig:
    big_vertex_threshold: float = 256
    baseline_index_bytes_per_vertex: int = BASELINE_ENTRY_BYTES
    tcam_index_entry_bytes: int = INDEX_ENTRY_BYTES

    def __post_init__(self):
        if self.big_vertex_threshold < 1:
            raise ValueError("big_vertex_threshold must be >= 1")


NO_SPILL = GraphConfig(big_vertex_threshold=math.inf)


@dataclass(frozen=True)
class IndexEntry:
    max_id: int
    edge_count: int  # 0 marks a search-region entry
    handle: int  # first block of the search area, or first edge-list page
    first_id: int = 0
    blocks: int = 0  # search blocks holding this entry's tuples
    tuples: int = 0


@dataclass
class CompressedGraphIndex:
    entries: list[IndexEntry]
    vertex_count: int
    degrees: np.ndarray
    config: GraphConfig
    search_blocks: int = 0
    manager: SearchManager | None = None
    region_id: int | None = None
    _max_ids: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._max_ids = [e.max_id for e in self.entries]

    def lookup(self, vertex: int) -> IndexEntry:
        if not 0 <= vertex < self.vertex_count:
            raise UnknownVertex(f"vertex {vertex} outside 0..{self.vertex_count - 1}")
        return self.entries[bisect.bisect_left(self._max_ids, vertex)]

    def probes(self) -> int:
        return max(1, math.ceil(math.log2(len(self.entries)))) if self.entries else 0

    @property
    def index_bytes(self) -> int:
        return len(self.entries) * self.config.tcam_index_entry_bytes

    @property
    def baseline_bytes(self) -> int:
        return self.vertex_count * self.config.baseline_index_bytes_per_vertex

    @property
    def region_entries(self) -> int:
        return sum(1 for e in self.entries if e.edge_count == 0)


def pack_entries(degrees: np.ndarray, threshold: float, capacity: int) -> tuple[list[IndexEntry], int]:
    """Lay small vertices' tuples back to back over search blocks.

    One index entry per run of consecutive small vertices whose tuples start in
    the same block; a vertex may spill into following blocks, so neighbouring
    entries can share a block (the key carries the source id, so a shared block
    never returns a neighbour's tuples). Vertices above the threshold get
    direct edge-list entries. Returns (entries, search blocks).
    """
    deg = np.asarray(degrees, dtype=np.int64)
    n = len(deg)
    if n == 0:
        return [], 0
    big = deg > threshold
    small_deg = np.where(big, 0, deg)
    off = np.concatenate([[0], np.cumsum(small_deg)])
    total = int(off[-1])
    start_block = off[:-1] // capacity
    # a run id increments after every big vertex, so entries never cover one
    run = np.cumsum(big)
    key_change = np.ones(n, dtype=bool)
    key_change[1:] = (start_block[1:] != start_block[:-1]) | (run[1:] != run[:-1]) | big[1:] | big[:-1]
    starts = np.flatnonzero(key_change)
    ends = np.append(starts[1:], n) - 1
    entries = []
    page = 0
    for f, last in zip(starts.tolist(), ends.tolist()):
        if big[f]:
            d = int(deg[f])
            entries.append(IndexEntry(f, d, page, f, 0, d))
            page += math.ceil(d * EDGE_BYTES * 8 / capacity)  # capacity is bits per page
            continue
        tuples = int(off[last + 1] - off[f])
        first_b = int(start_block[f])
        blocks = 0 if tuples == 0 else int((off[last + 1] - 1) // capacity) - first_b + 1
        entries.append(IndexEntry(last, 0, first_b, f, blocks, tuples))
    return entries, math.ceil(total / capacity)


def build_graph_index(
    src: np.ndarray,
    dst: np.ndarray,
    n_vertices: int | None = None,
    config: GraphConfig | None = None,
    ssd: SsdConfig | None = None,
    allocate: bool = True,
) -> CompressedGraphIndex:
    """Index from an edge list sorted by source (count-sorted if not)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if n_vertices is None:
        n_vertices = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
    limit = 1 << ID_BITS
    if n_vertices > limit or (len(src) and max(src.max(), dst.max()) >= limit):
        raise VertexIdOverflow(f"vertex ids must fit in {ID_BITS} bits")
    if len(src) and (src.min() < 0 or dst.min() < 0):
        raise VertexIdOverflow("vertex ids must be non-negative")
    degrees = np.bincount(src, minlength=n_vertices).astype(np.int64)
    return index_from_degrees(degrees, config, ssd, allocate)


def index_from_degrees(
    degrees: np.ndarray, config: GraphConfig | None = None, ssd: SsdConfig | None = None, allocate: bool = True
) -> CompressedGraphIndex:
    cfg = config or GraphConfig()
    ssd = ssd or SsdConfig()
    entries, blocks = pack_entries(degrees, cfg.big_vertex_threshold, ssd.bitlines)
    manager = region = None
    if allocate:
        manager = SearchManager(Backend(ssd))
        small = int(np.asarray(degrees)[np.asarray(degrees) <= cfg.big_vertex_threshold].sum())
        region, _ = manager.allocate_region(TUPLE_BITS, EDGE_BYTES, small)
    return CompressedGraphIndex(entries, len(degrees), np.asarray(degrees), cfg, blocks, manager, region)


@dataclass
class TraversalResult:
    mode: str
    time: float
    components: dict[str, float]
    counters: MovementCounters
    per_access: np.ndarray
    srch_count: int = 0
    read_count: int = 0


def _edge_pages(d: int, ssd: SsdConfig) -> int:
    # the host cannot tell an empty list apart without asking, so at least one page
    return max(1, math.ceil(d * EDGE_BYTES / ssd.page_size))


class TraversalModel:
    """Per-access storage cost for each index organisation."""

    def __init__(self, ssd: SsdConfig | None = None):
        self.ssd = ssd or SsdConfig()

    def _edge_read(self, backend: Backend, d: int) -> LatencyReport:
        cfg = self.ssd
        pages = _edge_pages(d, cfg)
        return backend.batch_report("read", pages) + LatencyReport.serial(
            nvme=cfg.t_nvme_init, translation=pages * cfg.dram_access
        ) + self._host(backend, pages * cfg.page_size)

    def _host(self, backend: Backend, nbytes: int) -> LatencyReport:
        backend.counters.add_cpu_fe(nbytes)
        return LatencyReport.serial(cpu_fe_transfer=self.ssd.host_time(nbytes))

    def im(self, backend: Backend, d: int) -> LatencyReport:
        return LatencyReport.serial(translation=self.ssd.dram_access) + self._edge_read(backend, d)

    def oom(self, backend: Backend, d: int) -> LatencyReport:
        cfg = self.ssd
        index_page = backend.batch_report("read", 1) + LatencyReport.serial(
            nvme=cfg.t_nvme_init, translation=cfg.dram_access
        ) + self._host(backend, cfg.page_size)
        return index_page + self._edge_read(backend, d)

    def tcam(self, backend: Backend, index: CompressedGraphIndex, vertex: int) -> tuple[LatencyReport, int, int]:
        cfg = self.ssd
        entry = index.lookup(vertex)
        d = int(index.degrees[vertex])
        probe = LatencyReport.serial(translation=index.probes() * cfg.dram_row_miss)
        if entry.edge_count:
            pages = _edge_pages(d, cfg)
            return probe + self._edge_read(backend, d), 0, pages
        mgr = index.manager
        if mgr is None:
            raise ValueError("index was built without allocated regions")
        mgr.backend = backend
        # every matching tuple costs its own read at zero locality
        host = compact_results(d, EDGE_BYTES, cfg.host_block_bytes) * cfg.host_block_bytes
        groups = range(entry.handle, entry.handle + entry.blocks)
        est = mgr.estimate_search(index.region_id, 1, read_count=d, host_bytes=host, groups=groups)
        report = probe + LatencyReport.serial(nvme=cfg.t_nvme_init) + est.report
        return report, est.srch_count, d


def graph_traverse(
    index: CompressedGraphIndex, access_trace: Sequence[int], mode: str, ssd: SsdConfig | None = None
) -> TraversalResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    ssd = ssd or (index.manager.config if index.manager else SsdConfig())
    model = TraversalModel(ssd)
    comps = dict.fromkeys(COMPONENTS, 0.0)
    counters = MovementCounters()
    per = np.empty(len(access_trace))
    cache: dict[tuple, tuple[LatencyReport, MovementCounters, int, int]] = {}
    srch = reads = 0
    for i, v in enumerate(access_trace):
        if not 0 <= v < index.vertex_count:
            raise UnknownVertex(f"vertex {v} outside 0..{index.vertex_count - 1}")
        d = int(index.degrees[v])
        if mode in ("IM", "OOM"):
            key = (mode, d)
        else:
            entry = index.lookup(v)
            key = (mode, d, entry.edge_count > 0, entry.handle if entry.edge_count == 0 else None, entry.blocks)
        if key not in cache:
            b = Backend(ssd)
            if mode == "IM":
                rep, s, r = model.im(b, d), 0, _edge_pages(d, ssd)
            elif mode == "OOM":
                rep, s, r = model.oom(b, d), 0, 1 + _edge_pages(d, ssd)
            else:
                rep, s, r = model.tcam(b, index, v)
            cache[key] = (rep, b.counters, s, r)
        rep, moved, s, r = cache[key]
        per[i] = rep.total
        for c in COMPONENTS:
            comps[c] += rep.components[c]
        counters.add_cpu_fe(moved.cpu_fe_bytes)
        counters.add_fe_be(moved.fe_be_bytes)
        srch += s
        reads += r
    return TraversalResult(mode, float(per.sum()), comps, counters, per, srch, reads)


def footprint_report(degrees: np.ndarray, ssd: SsdConfig | None = None, threshold: float = 256) -> dict[str, int]:
    """Index bytes for the baseline and both index variants, plus NP search blocks."""
    ssd = ssd or SsdConfig()
    t = index_from_degrees(degrees, GraphConfig(threshold), ssd, allocate=False)
    np_ = index_from_degrees(degrees, NO_SPILL, ssd, allocate=False)
    return {
        "vertices": len(degrees),
        "baseline_bytes": t.baseline_bytes,
        "tcam_t_bytes": t.index_bytes,
        "tcam_np_bytes": np_.index_bytes,
        "tcam_t_search_blocks": t.search_blocks,
        "tcam_np_search_blocks": np_.search_blocks,
        "tcam_t_entries": len(t.entries),
        "tcam_np_entries": len(np_.entries),
    }
