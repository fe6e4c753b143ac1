"""SSD geometry, occupancy scheduler, and the analytical latency model.

All times are microseconds; bandwidths are bytes per second.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AddressOutOfRange, ConfigError, OffsetOutOfRange

US_PER_S = 1e6
COMPONENTS = ("nvme", "translation", "flash_array_time", "fe_be_transfer", "decode", "cpu_fe_transfer")


@dataclass(frozen=True)
class SsdConfig:
    channels: int = 8
    packages_per_channel: int = 1
    dies_per_package: int = 8
    planes_per_die: int = 2
    blocks_per_plane: int = 2048
    pages_per_block: int = 196
    page_size: int = 16 * 1024
    t_read: float = 22.5
    t_search: float = 25.0
    t_write_slc: float = 200.0
    t_write_mlc: float = 500.0
    t_write_tlc: float = 700.0
    t_nvme_init: float = 4.0
    dram_access: float = 0.015  # per 64 B line
    dram_row_miss: float = 0.05
    channel_bandwidth: float = 1.2e9
    host_bandwidth: float = 3.5e9
    decode_rate: float = 0.2e9  # per channel controller
    burst_bytes: int = 64
    host_block_bytes: int = 4096
    write_inversion: bool = True

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.page_size % self.burst_bytes:
            raise ConfigError("page_size must be a multiple of burst_bytes")

    @property
    def dies_per_channel(self) -> int:
        return self.packages_per_channel * self.dies_per_package

    @property
    def parallel_units(self) -> int:
        return self.channels * self.dies_per_channel

    @property
    def bitlines(self) -> int:
        return self.page_size * 8

    @property
    def blocks_per_die(self) -> int:
        return self.blocks_per_plane * self.planes_per_die

    def transfer_time(self, nbytes: float) -> float:
        return nbytes / self.channel_bandwidth * US_PER_S

    def host_time(self, nbytes: float) -> float:
        return nbytes / self.host_bandwidth * US_PER_S

    def dram_time(self, nbytes: float) -> float:
        return math.ceil(nbytes / 64) * self.dram_access

    def replace(self, **changes) -> "SsdConfig":
        return dataclasses.replace(self, **changes)


def total_blocks(config: SsdConfig) -> int:
    return (
        config.channels
        * config.packages_per_channel
        * config.dies_per_package
        * config.planes_per_die
        * config.blocks_per_plane
    )


def _parse_value(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw.replace("_", ""))
        return float(raw.replace("_", ""))
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text: str, base: SsdConfig | None = None, source: str = "<config>") -> SsdConfig:
    """Flat ``key = value`` text; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(SsdConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, types[key])
    return dataclasses.replace(base or SsdConfig(), **values)


def load_config(path: str | Path) -> SsdConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def dump_config(config: SsdConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, order=True)
class PhysicalAddress:
    channel: int
    die: int
    plane: int = 0
    block: int = 0
    page: int = 0

    def validate(self, config: SsdConfig) -> "PhysicalAddress":
        bounds = (
            ("channel", self.channel, config.channels),
            ("die", self.die, config.dies_per_channel),
            ("plane", self.plane, config.planes_per_die),
            ("block", self.block, config.blocks_per_plane),
            ("page", self.page, config.pages_per_block),
        )
        for name, v, hi in bounds:
            if not 0 <= v < hi:
                raise AddressOutOfRange(f"{name} {v} outside 0..{hi - 1} in {self}")
        return self

    @property
    def unit(self) -> tuple[int, int]:
        return (self.channel, self.die)

    def with_page(self, page: int) -> "PhysicalAddress":
        return dataclasses.replace(self, page=page)


def superblock_of(config: SsdConfig, block_offset: int) -> list[PhysicalAddress]:
    """One block per (channel, die) at the same offset, channel-interleaved first."""
    if not 0 <= block_offset < config.blocks_per_die:
        raise OffsetOutOfRange(f"offset {block_offset} outside 0..{config.blocks_per_die - 1}")
    plane, block = block_offset % config.planes_per_die, block_offset // config.planes_per_die
    return [
        PhysicalAddress(c, d, plane, block)
        for d in range(config.dies_per_channel)
        for c in range(config.channels)
    ]


def max_keys_per_superblock_search(config: SsdConfig) -> int:
    return config.bitlines * config.parallel_units


def striped_page_address(config: SsdConfig, lpn: int) -> PhysicalAddress:
    """Map a linear data-region page number onto the array, channel first."""
    c = lpn % config.channels
    rest = lpn // config.channels
    d = rest % config.dies_per_channel
    rest //= config.dies_per_channel
    page = rest % config.pages_per_block
    rest //= config.pages_per_block
    plane = rest % config.planes_per_die
    block = (rest // config.planes_per_die) % config.blocks_per_plane
    return PhysicalAddress(c, d, plane, block, page)


@dataclass
class MovementCounters:
    cpu_fe_bytes: int = 0
    fe_be_bytes: int = 0

    def add_cpu_fe(self, n: int) -> None:
        if n < 0:
            raise ValueError("byte counts only grow")
        self.cpu_fe_bytes += n

    def add_fe_be(self, n: int) -> None:
        if n < 0:
            raise ValueError("byte counts only grow")
        self.fe_be_bytes += n

    def snapshot(self) -> "MovementCounters":
        return MovementCounters(self.cpu_fe_bytes, self.fe_be_bytes)

    def __sub__(self, other: "MovementCounters") -> "MovementCounters":
        return MovementCounters(self.cpu_fe_bytes - other.cpu_fe_bytes, self.fe_be_bytes - other.fe_be_bytes)


@dataclass
class LatencyReport:
    total: float = 0.0
    components: dict[str, float] = field(default_factory=lambda: dict.fromkeys(COMPONENTS, 0.0))

    @classmethod
    def serial(cls, **parts: float) -> "LatencyReport":
        comps = dict.fromkeys(COMPONENTS, 0.0)
        for k, v in parts.items():
            if k not in comps:
                raise KeyError(k)
            comps[k] += v
        return cls(sum(comps.values()), comps)

    def __add__(self, other: "LatencyReport") -> "LatencyReport":
        comps = {k: self.components[k] + other.components[k] for k in COMPONENTS}
        return LatencyReport(self.total + other.total, comps)

    def component_sum(self) -> float:
        return sum(self.components.values())

    def with_extra(self, label: str, amount: float) -> "LatencyReport":
        comps = dict(self.components)
        comps[label] += amount
        return LatencyReport(self.total + amount, comps)


@dataclass(frozen=True)
class FlashOp:
    kind: str  # "read" | "search" | "program"
    address: PhysicalAddress
    payload_bytes: int = 0
    parallel_group: int = 0


@dataclass
class GroupTiming:
    makespan: float
    array_bound: float


class Backend:
    """Occupancy-based scheduler plus the counter sink for one simulated drive."""

    def __init__(self, config: SsdConfig | None = None, counters: MovementCounters | None = None):
        self.config = config or SsdConfig()
        self.counters = counters if counters is not None else MovementCounters()

    def array_time(self, kind: str) -> float:
        cfg = self.config
        try:
            return {"read": cfg.t_read, "search": cfg.t_search, "program": cfg.t_write_slc}[kind]
        except KeyError:
            raise ValueError(f"unknown flash op kind {kind!r}") from None

    def _run_group(self, ops: Sequence[FlashOp]) -> GroupTiming:
        die_free: dict[tuple[int, int], float] = {}
        chan_free: dict[int, float] = {}
        die_busy: dict[tuple[int, int], float] = {}
        end = 0.0
        for op in ops:
            unit = op.address.unit
            a = self.array_time(op.kind)
            x = self.config.transfer_time(op.payload_bytes)
            start = die_free.get(unit, 0.0)
            if op.kind == "program":
                # data in over the channel, then the array program
                ts = max(start, chan_free.get(op.address.channel, 0.0))
                te = ts + x
                done = te + a
            else:
                # array first; the die holds its page register until the transfer ends
                ts = max(start + a, chan_free.get(op.address.channel, 0.0))
                te = ts + x
                done = te
            chan_free[op.address.channel] = te
            die_free[unit] = done
            die_busy[unit] = die_busy.get(unit, 0.0) + a
            end = max(end, done)
        return GroupTiming(end, max(die_busy.values(), default=0.0))

    def schedule(
        self,
        ops: Sequence[FlashOp],
        *,
        nvme_commands: int = 0,
        translations: int = 0,
        dram_row_misses: int = 0,
        decode_bytes_per_channel: Iterable[int] = (),
        host_bytes: int = 0,
    ) -> LatencyReport:
        """Serial composition: front-end work, then each parallel group, then host transfer.

        Groups are separated by barriers, so a multi-block SRCH group keeps every
        (channel, die) it touched until its slowest member finishes.
        """
        cfg = self.config
        for op in ops:
            op.address.validate(cfg)
        groups: dict[int, list[FlashOp]] = {}
        for op in ops:
            groups.setdefault(op.parallel_group, []).append(op)
        flash = transfer = 0.0
        for g in sorted(groups):
            t = self._run_group(groups[g])
            flash += t.array_bound
            transfer += t.makespan - t.array_bound
        decode = max((b / cfg.decode_rate * US_PER_S for b in decode_bytes_per_channel), default=0.0)
        report = LatencyReport.serial(
            nvme=nvme_commands * cfg.t_nvme_init,
            translation=translations * cfg.dram_access + dram_row_misses * cfg.dram_row_miss,
            flash_array_time=flash,
            fe_be_transfer=transfer,
            decode=decode,
            cpu_fe_transfer=cfg.host_time(host_bytes),
        )
        self.counters.add_fe_be(sum(op.payload_bytes for op in ops))
        self.counters.add_cpu_fe(host_bytes)
        return report

    def batch_timing(self, kind: str, count: int, payload_bytes: int | None = None) -> GroupTiming:
        """Closed-form makespan of ``count`` equal ops striped channel-first.

        Matches the event scheduler exactly when ``count`` is a multiple of the
        number of (channel, die) units; used when op lists are too long to
        simulate one by one.
        """
        cfg = self.config
        if count <= 0:
            return GroupTiming(0.0, 0.0)
        if kind == "program":
            raise ValueError("closed form covers read/search batches only")
        payload = cfg.page_size if payload_bytes is None else payload_bytes
        a = self.array_time(kind)
        x = cfg.transfer_time(payload)
        per_chan = math.ceil(count / cfg.channels)
        per_die = math.ceil(count / cfg.parallel_units)
        dies_used = min(cfg.dies_per_channel, math.ceil(count / cfg.channels))
        channel_bound = a + per_chan * x
        die_bound = per_die * (a + x) + (dies_used - 1) * x
        return GroupTiming(max(channel_bound, die_bound), per_die * a)

    def batch_report(self, kind: str, count: int, payload_bytes: int | None = None) -> LatencyReport:
        t = self.batch_timing(kind, count, payload_bytes)
        payload = self.config.page_size if payload_bytes is None else payload_bytes
        self.counters.add_fe_be(count * payload)
        return LatencyReport.serial(flash_array_time=t.array_bound, fe_be_transfer=t.makespan - t.array_bound)


def striped_ops(config: SsdConfig, kind: str, count: int, payload: int, group: int = 0) -> list[FlashOp]:
    """``count`` ops laid out round-robin over (channel, die), channel first."""
    ops = []
    for i in range(count):
        c = i % config.channels
        d = (i // config.channels) % config.dies_per_channel
        ops.append(FlashOp(kind, PhysicalAddress(c, d), payload, group))
    return ops
