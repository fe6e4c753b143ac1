"""Point-query replay: hash-index baseline versus one search per query."""

from __future__ import annotations

import zlib
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..backend import Backend, FlashOp, LatencyReport, MovementCounters, PhysicalAddress, SsdConfig, COMPONENTS
from ..errors import MalformedTrace
from ..ftl import SearchManager, compact_results
from .traces import OltpQuery

ROWS = 3_000_000
WAREHOUSES = 23
KEY_BITS = 64
ROW_BYTES = 128
RESULT_PAGES = 1  # matching rows of one lookup sit in one data page


@dataclass
class OltpResult:
    mode: str
    pages: np.ndarray
    latencies: np.ndarray  # µs per query
    components: dict[str, float]
    counters: MovementCounters
    srch_count: int = 0
    read_count: int = 0
    search_blocks: int = 0
    link_table_bytes: int = 0

    @property
    def total_time(self) -> float:
        return float(self.latencies.sum())


def _scaled(report: LatencyReport, k: float) -> LatencyReport:
    return LatencyReport(report.total * k, {c: v * k for c, v in report.components.items()})


def baseline_page_report(config: SsdConfig) -> LatencyReport:
    """One dependent index-chain hop: an NVMe read of one page brought to the host."""
    scratch = Backend(config)
    return scratch.schedule(
        [FlashOp("read", PhysicalAddress(0, 0), config.page_size)],
        nvme_commands=1,
        translations=1,
        host_bytes=config.page_size,
    )


def baseline_query_report(config: SsdConfig, pages: int) -> LatencyReport:
    probe = LatencyReport.serial(translation=config.dram_row_miss)
    return probe + _scaled(baseline_page_report(config), pages)


class OltpDatabase:
    """Per-warehouse search regions over the row keys."""

    def __init__(self, config: SsdConfig | None = None, rows: int = ROWS, warehouses: int = WAREHOUSES):
        self.config = config or SsdConfig()
        self.manager = SearchManager(Backend(self.config))
        per = -(-rows // warehouses)
        self.regions = []
        left = rows
        for _ in range(warehouses):
            n = min(per, left)
            rid, _ = self.manager.allocate_region(KEY_BITS, ROW_BYTES, n)
            self.regions.append(rid)
            left -= n

    @property
    def search_blocks(self) -> int:
        return self.manager.search_blocks_in_use

    def region_for(self, q: OltpQuery) -> int:
        wh, _, _ = q.key.partition(":")
        if wh.isdigit():
            return self.regions[int(wh) % len(self.regions)]
        return self.regions[zlib.crc32(q.key.encode()) % len(self.regions)]

    def tcam_query_report(self, region_id: int) -> LatencyReport:
        cfg = self.config
        host = compact_results(RESULT_PAGES, cfg.host_block_bytes, cfg.host_block_bytes) * cfg.host_block_bytes
        est = self.manager.estimate_search(region_id, 1, read_count=RESULT_PAGES, host_bytes=host)
        return LatencyReport.serial(nvme=cfg.t_nvme_init) + est.report


def oltp_replay(trace: Sequence[OltpQuery], mode: str, config: SsdConfig | None = None,
                db: OltpDatabase | None = None) -> OltpResult:
    cfg = config or (db.config if db else SsdConfig())
    if mode not in ("baseline", "tcam"):
        raise ValueError(f"mode must be baseline or tcam, got {mode!r}")
    pages = np.fromiter((q.baseline_pages for q in trace), dtype=np.int64, count=len(trace))
    if pages.size and pages.min() < 1:
        raise MalformedTrace("baseline_pages must be >= 1")
    counters = MovementCounters()
    comps = dict.fromkeys(COMPONENTS, 0.0)
    if mode == "baseline":
        unit = baseline_page_report(cfg)
        probe = cfg.dram_row_miss
        lat = probe + pages * unit.total
        total_pages = int(pages.sum())
        for c in COMPONENTS:
            comps[c] = unit.components[c] * total_pages
        comps["translation"] += probe * len(pages)
        counters.add_fe_be(total_pages * cfg.page_size)
        counters.add_cpu_fe(total_pages * cfg.page_size)
        return OltpResult(mode, pages, lat.astype(float), comps, counters, read_count=total_pages)
    db = db or OltpDatabase(cfg)
    cache: dict[int, tuple[LatencyReport, MovementCounters]] = {}
    lat = np.empty(len(trace))
    for i, q in enumerate(trace):
        rid = db.region_for(q)
        if rid not in cache:
            before = db.manager.backend.counters.snapshot()
            rep = db.tcam_query_report(rid)
            cache[rid] = (rep, db.manager.backend.counters - before)
        rep, moved = cache[rid]
        lat[i] = rep.total
        for c in COMPONENTS:
            comps[c] += rep.components[c]
        counters.add_cpu_fe(moved.cpu_fe_bytes)
        counters.add_fe_be(moved.fe_be_bytes)
    return OltpResult(
        mode, pages, lat, comps, counters,
        srch_count=len(trace), read_count=RESULT_PAGES * len(trace),
        search_blocks=db.search_blocks, link_table_bytes=db.manager.link_table_bytes(),
    )


def crossover_pages(config: SsdConfig | None = None, max_pages: int = 16) -> int | None:
    """Largest page count for which the baseline is still at least as fast."""
    cfg = config or SsdConfig()
    db = OltpDatabase(cfg)
    tcam = db.tcam_query_report(db.regions[0]).total
    last = None
    for p in range(1, max_pages + 1):
        if baseline_query_report(cfg, p).total <= tcam:
            last = p
        else:
            break
    return last


def speedup(baseline: OltpResult, tcam: OltpResult) -> float:
    """Fractional speedup, e.g. 0.6 means 60% faster."""
    return baseline.total_time / tcam.total_time - 1.0


def cdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs = np.sort(np.asarray(values))
    return xs, np.arange(1, len(xs) + 1) / len(xs)
