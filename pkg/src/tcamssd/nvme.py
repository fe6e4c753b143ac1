"""Structural NVMe command set for search regions, plus the two host APIs."""

from __future__ import annotations

import enum
import math
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field

from .backend import LatencyReport
from .errors import MalformedCommand, StaleContinuation, TcamSsdError, UnknownRegion
from .flash_array import SearchKey
from .ftl import REDUCTIONS, SearchManager

SIMPLE_KEY_LIMIT = 127


@dataclass(frozen=True)
class Allocate:
    element_bits: int
    entry_bytes: int
    element_count: int = 0
    elements: Sequence[str] | None = None
    entries: Sequence | None = None
    numeric: bool = False


@dataclass(frozen=True)
class Deallocate:
    region_id: int


@dataclass(frozen=True)
class Append:
    region_id: int
    elements: Sequence[str]
    entries: Sequence | None = None


@dataclass(frozen=True)
class SimpleSearch:
    """Key travels inline in the command."""

    region_id: int
    key: SearchKey | str
    buffer_entries: int
    reduction: str = "single"


@dataclass(frozen=True)
class Search:
    """Key (or sub-keys) fetched from host memory through a data pointer."""

    region_id: int
    key: object
    buffer_entries: int
    reduction: str = "single"


@dataclass(frozen=True)
class SearchContinue:
    token: "ContinuationToken"
    buffer_entries: int


@dataclass(frozen=True)
class Delete:
    region_id: int
    key: object
    reduction: str = "single"


@dataclass(frozen=True)
class AssocUpdate:
    region_id: int
    key: object
    op: str
    immediate: int
    reduction: str = "single"


COMMANDS = (Allocate, Deallocate, Append, SimpleSearch, Search, SearchContinue, Delete, AssocUpdate)


class Status(enum.Enum):
    SUCCESS = 0
    UNKNOWN_REGION = 1
    INVALID = 2


@dataclass(frozen=True)
class ContinuationToken:
    region_id: int
    next_ordinal: int
    version: int


@dataclass
class CompletionEntry:
    status: Status
    entries: list = field(default_factory=list)
    ordinals: list[int] = field(default_factory=list)
    buffer_exceeded: bool = False
    token: ContinuationToken | None = None
    region_id: int | None = None
    count: int = 0
    report: LatencyReport = field(default_factory=LatencyReport)
    error: TcamSsdError | None = None

    @property
    def returned_entry_count(self) -> int:
        return len(self.entries)

    def raise_for_status(self) -> "CompletionEntry":
        if self.error is not None:
            raise self.error
        return self


@dataclass
class _Pending:
    ordinals: list[int]
    pos: int
    version: int


def _key_bits(key) -> int:
    if isinstance(key, (str, SearchKey)):
        return len(SearchKey.coerce(key))
    return sum(len(SearchKey.coerce(k)) for k in key)


class NvmeController:
    def __init__(self, manager: SearchManager | None = None):
        self.manager = manager or SearchManager()
        self.config = self.manager.config
        self.counters = self.manager.backend.counters
        self.submitted = 0
        self._pending: dict[int, _Pending] = {}
        self._queues: dict[int, threading.Lock] = {}
        self._guard = threading.Lock()

    def _queue(self, region_id: int) -> threading.Lock:
        with self._guard:
            return self._queues.setdefault(region_id, threading.Lock())

    def _validate(self, cmd) -> None:
        if not isinstance(cmd, COMMANDS):
            raise MalformedCommand(f"unsupported command {type(cmd).__name__}")
        if isinstance(cmd, (SimpleSearch, Search, SearchContinue)) and cmd.buffer_entries < 1:
            raise MalformedCommand("host buffer must hold at least one entry")
        if isinstance(cmd, (SimpleSearch, Search, Delete, AssocUpdate)) and cmd.reduction not in REDUCTIONS:
            raise MalformedCommand(f"unknown reduction {cmd.reduction!r}")
        if isinstance(cmd, SimpleSearch):
            if not isinstance(cmd.key, (str, SearchKey)) or cmd.reduction != "single":
                raise MalformedCommand("SimpleSearch carries exactly one inline key")
            try:
                width = len(SearchKey.coerce(cmd.key))
            except ValueError as exc:
                raise MalformedCommand(str(exc)) from None
            if width > SIMPLE_KEY_LIMIT:
                raise MalformedCommand(f"inline key of {width} bits exceeds {SIMPLE_KEY_LIMIT}")
        if isinstance(cmd, Search):
            try:
                _key_bits(cmd.key)
            except (TypeError, ValueError) as exc:
                raise MalformedCommand(f"bad key payload: {exc}") from None

    def submit(self, cmd) -> CompletionEntry:
        self._validate(cmd)
        self.submitted += 1
        nvme = LatencyReport.serial(nvme=self.config.t_nvme_init)
        region_id = cmd.token.region_id if isinstance(cmd, SearchContinue) else getattr(cmd, "region_id", None)
        try:
            if region_id is None:
                done = self._dispatch(cmd)
            else:
                with self._queue(region_id):
                    done = self._dispatch(cmd)
        except UnknownRegion as exc:
            return CompletionEntry(Status.UNKNOWN_REGION, report=nvme, error=exc)
        done.report = nvme + done.report
        return done

    def _dispatch(self, cmd) -> CompletionEntry:
        mgr = self.manager
        if isinstance(cmd, Allocate):
            rid, rep = mgr.allocate_region(
                cmd.element_bits, cmd.entry_bytes, cmd.element_count, cmd.elements, cmd.entries, cmd.numeric
            )
            return CompletionEntry(Status.SUCCESS, region_id=rid, report=rep)
        if isinstance(cmd, Deallocate):
            mgr.deallocate_region(cmd.region_id)
            self._pending.pop(cmd.region_id, None)
            return CompletionEntry(Status.SUCCESS, region_id=cmd.region_id)
        if isinstance(cmd, Append):
            rep = mgr.append(cmd.region_id, cmd.elements, cmd.entries)
            return CompletionEntry(Status.SUCCESS, region_id=cmd.region_id, count=len(cmd.elements), report=rep)
        if isinstance(cmd, Delete):
            n, rep = mgr.delete(cmd.region_id, cmd.key, cmd.reduction)
            return CompletionEntry(Status.SUCCESS, region_id=cmd.region_id, count=n, report=rep)
        if isinstance(cmd, AssocUpdate):
            n, rep = mgr.associative_update(cmd.region_id, cmd.key, cmd.op, cmd.immediate, cmd.reduction)
            return CompletionEntry(Status.SUCCESS, region_id=cmd.region_id, count=n, report=rep)
        if isinstance(cmd, SearchContinue):
            return self._continue(cmd)
        return self._search(cmd)

    def _search(self, cmd) -> CompletionEntry:
        report = LatencyReport()
        if isinstance(cmd, Search):
            # the key is DMA'd from host memory
            key_bytes = math.ceil(_key_bits(cmd.key) / 8)
            self.counters.add_cpu_fe(key_bytes)
            report = LatencyReport.serial(cpu_fe_transfer=self.config.host_time(key_bytes))
        found = self.manager.search_matches(cmd.region_id, cmd.key, cmd.reduction)
        version = self.manager.region(cmd.region_id).version
        pending = _Pending(found.matches.ordinals, 0, version)
        done = self._deliver(cmd.region_id, pending, cmd.buffer_entries)
        done.report = report + found.report + done.report
        return done

    def _continue(self, cmd: SearchContinue) -> CompletionEntry:
        tok = cmd.token
        pending = self._pending.get(tok.region_id)
        region = self.manager.region(tok.region_id)
        if (
            pending is None
            or pending.version != tok.version
            or region.version != tok.version
            or pending.pos >= len(pending.ordinals)
            or pending.ordinals[pending.pos] != tok.next_ordinal
        ):
            self._pending.pop(tok.region_id, None)
            raise StaleContinuation(f"continuation {tok} no longer matches region {tok.region_id}")
        return self._deliver(tok.region_id, pending, cmd.buffer_entries)

    def _deliver(self, region_id: int, pending: _Pending, capacity: int) -> CompletionEntry:
        chunk = pending.ordinals[pending.pos : pending.pos + capacity]
        pending.pos += len(chunk)
        read = self.manager.read_entries(region_id, chunk)
        exceeded = pending.pos < len(pending.ordinals)
        token = None
        if exceeded:
            token = ContinuationToken(region_id, pending.ordinals[pending.pos], pending.version)
            self._pending[region_id] = pending
        else:
            self._pending.pop(region_id, None)
        return CompletionEntry(
            Status.SUCCESS,
            entries=read.entries,
            ordinals=chunk,
            buffer_exceeded=exceeded,
            token=token,
            region_id=region_id,
            count=len(chunk),
            report=read.report,
        )


def tcam_search(
    ctrl: NvmeController, region_id: int, key, buffer_entries: int = 64, reduction: str = "single"
) -> list:
    """Search, then keep issuing SearchContinue until the host has every entry."""
    simple = isinstance(key, (str, SearchKey)) and len(SearchKey.coerce(key)) <= SIMPLE_KEY_LIMIT
    if simple and reduction == "single":
        cmd = SimpleSearch(region_id, key, buffer_entries)
    else:
        cmd = Search(region_id, key, buffer_entries, reduction)
    done = ctrl.submit(cmd).raise_for_status()
    out = list(done.entries)
    while done.buffer_exceeded:
        done = ctrl.submit(SearchContinue(done.token, buffer_entries)).raise_for_status()
        out.extend(done.entries)
    return out


def tcam_update(ctrl: NvmeController, region_id: int, key, op: str, immediate: int, reduction: str = "single") -> int:
    before = ctrl.counters.cpu_fe_bytes
    done = ctrl.submit(AssocUpdate(region_id, key, op, immediate, reduction)).raise_for_status()
    if ctrl.counters.cpu_fe_bytes != before:
        raise RuntimeError("associative update moved payload bytes to the host")
    return done.count
