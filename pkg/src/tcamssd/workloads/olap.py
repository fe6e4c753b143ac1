"""Full-table scan versus in-storage filtering, and the selectivity/locality sweep."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..backend import Backend, LatencyReport, MovementCounters, SsdConfig, parse_config, total_blocks
from ..ftl import SearchManager

DEFAULT_ROWS = 600_037_902
DEFAULT_ROW_BYTES = 134
FUSED_KEY_BITS = 97
DEFAULT_SELECTIVITIES = (0.0001, 0.0004, 0.001, 0.01)
DEFAULT_LOCALITIES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class OlapQuerySpec:
    row_count: int = DEFAULT_ROWS
    row_bytes: int = DEFAULT_ROW_BYTES
    selectivity: float = 0.0004
    locality: float = 0.0
    sub_key_count: int = 1

    def __post_init__(self):
        if self.row_count < 0 or self.row_bytes < 1:
            raise ValueError("row_count must be >= 0 and row_bytes >= 1")
        if not 0 < self.selectivity <= 1:
            raise ValueError("selectivity must lie in (0, 1]")
        if not 0 <= self.locality <= 1:
            raise ValueError("locality must lie in [0, 1]")
        if self.sub_key_count < 1:
            raise ValueError("sub_key_count must be >= 1")

    @property
    def matches(self) -> int:
        return round(self.selectivity * self.row_count)

    def with_cell(self, selectivity: float, locality: float) -> "OlapQuerySpec":
        return OlapQuerySpec(self.row_count, self.row_bytes, selectivity, locality, self.sub_key_count)


@dataclass
class OlapResult:
    mode: str
    time: float
    report: LatencyReport
    counters: MovementCounters
    srch_count: int = 0
    read_count: int = 0
    vector_bytes: int = 0
    search_blocks: int = 0
    search_block_pct: float = 0.0
    link_table_bytes: int = 0
    extra: dict = field(default_factory=dict)


def calibrated_config() -> SsdConfig:
    """Channel/host bandwidths fitted once to the full-scan baseline; shipped as a preset."""
    text = resources.files("tcamssd").joinpath("presets/olap_calibrated.cfg").read_text()
    return parse_config(text, source="olap_calibrated.cfg")


def table_pages(spec: OlapQuerySpec, config: SsdConfig) -> int:
    return math.ceil(spec.row_count * spec.row_bytes / config.page_size)


def read_count(spec: OlapQuerySpec, config: SsdConfig) -> int:
    """Linear between one read per match (locality 0) and back-to-back matches (locality 1)."""
    m = spec.matches
    packed = math.ceil(m * spec.row_bytes / config.page_size)
    return round(m + (packed - m) * spec.locality)


def baseline_scan(spec: OlapQuerySpec, config: SsdConfig | None = None) -> OlapResult:
    """Stream every table page to the host; page reads and host transfer overlap."""
    cfg = config or SsdConfig()
    backend = Backend(cfg)
    pages = table_pages(spec, cfg)
    flash = backend.batch_report("read", pages)
    host = cfg.host_time(pages * cfg.page_size)
    backend.counters.add_cpu_fe(pages * cfg.page_size)
    front = LatencyReport.serial(nvme=cfg.t_nvme_init, translation=cfg.dram_access)
    if host > flash.total:
        # host link is the bottleneck; flash work hides underneath it
        body = LatencyReport(host, dict(flash.components, cpu_fe_transfer=host - flash.total))
    else:
        body = flash
    report = front + body
    return OlapResult("baseline_scan", report.total, report, backend.counters, read_count=pages)


class OlapTable:
    def __init__(self, spec: OlapQuerySpec, config: SsdConfig | None = None):
        self.config = config or SsdConfig()
        self.manager = SearchManager(Backend(self.config))
        self.region, _ = self.manager.allocate_region(FUSED_KEY_BITS, spec.row_bytes, spec.row_count)

    @property
    def search_blocks(self) -> int:
        return self.manager.search_blocks_in_use


def tcam_run(spec: OlapQuerySpec, config: SsdConfig | None = None, table: OlapTable | None = None) -> OlapResult:
    cfg = config or (table.config if table else SsdConfig())
    table = table or OlapTable(spec, cfg)
    mgr = table.manager
    mgr.backend.counters = MovementCounters()
    reads = read_count(spec, cfg)
    # a matching row comes back with the rest of its page
    host_bytes = reads * cfg.page_size
    est = mgr.estimate_search(table.region, spec.sub_key_count, read_count=reads, host_bytes=host_bytes)
    report = LatencyReport.serial(nvme=cfg.t_nvme_init) + est.report
    blocks = table.search_blocks
    return OlapResult(
        "tcam",
        report.total,
        report,
        mgr.backend.counters,
        srch_count=est.srch_count,
        read_count=reads,
        vector_bytes=est.vector_bytes,
        search_blocks=blocks,
        search_block_pct=100.0 * blocks / total_blocks(cfg),
        link_table_bytes=mgr.link_table_bytes(),
    )


def olap_run(spec: OlapQuerySpec, mode: str, config: SsdConfig | None = None) -> OlapResult:
    if mode == "baseline_scan":
        return baseline_scan(spec, config)
    if mode == "tcam":
        return tcam_run(spec, config)
    raise ValueError(f"mode must be baseline_scan or tcam, got {mode!r}")


def olap_speedup(spec: OlapQuerySpec, config: SsdConfig | None = None, table: OlapTable | None = None) -> float:
    return baseline_scan(spec, config).time / tcam_run(spec, config, table).time


def olap_sweep(
    spec: OlapQuerySpec,
    selectivities: Sequence[float] = DEFAULT_SELECTIVITIES,
    localities: Sequence[float] = DEFAULT_LOCALITIES,
    config: SsdConfig | None = None,
) -> np.ndarray:
    """Speedup matrix indexed [selectivity, locality]."""
    cfg = config or SsdConfig()
    table = OlapTable(spec, cfg)
    base = baseline_scan(spec, cfg).time
    out = np.empty((len(selectivities), len(localities)))
    for i, s in enumerate(selectivities):
        for j, loc in enumerate(localities):
            out[i, j] = base / tcam_run(spec.with_cell(s, loc), cfg, table).time
    return out
