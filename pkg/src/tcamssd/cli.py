"""Command-line experiment runner.

    tcamssd run <experiment> [options]     run and write CSV reports
    tcamssd validate [inputs]              check config and input files only
    tcamssd gen {oltp,graph} [options]     write synthetic inputs

Exit status: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .backend import COMPONENTS, Backend, FlashOp, LatencyReport, SsdConfig, load_config, superblock_of, total_blocks
from .errors import ConfigError, MalformedInput
from .ftl import LINK_ENTRY_BYTES
from .workloads import graph as graph_mod
from .workloads import olap as olap_mod
from .workloads import oltp as oltp_mod
from .workloads import traces

EXPERIMENTS = ("oltp", "olap", "olap_sweep", "graph", "microbench")
LATENCY_COLUMNS = ["op", "mode", "total_us"] + [f"{c}_us" for c in COMPONENTS]
SUMMARY_COLUMNS = [
    "mode",
    "total_us",
    "cpu_fe_bytes",
    "fe_be_bytes",
    "srch_count",
    "read_count",
    "search_blocks",
    "search_block_pct",
    "link_table_bytes",
]


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcamssd", description="Searchable-SSD simulator and experiment runner")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", type=Path, help="flat key = value drive config")
    run.add_argument("--preset", choices=("default", "olap_calibrated"), default=None,
                     help="bundled config (olap experiments default to olap_calibrated)")
    run.add_argument("--out", type=Path, default=Path("results"), help="report directory")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mode", default="all", help="restrict to one mode of the experiment")
    # oltp
    run.add_argument("--trace", type=Path, help="OLTP CSV trace or graph vertex trace")
    run.add_argument("--queries", type=int, default=100_000, help="synthetic OLTP trace length")
    # olap
    run.add_argument("--rows", type=int, default=olap_mod.DEFAULT_ROWS)
    run.add_argument("--row-bytes", type=int, default=olap_mod.DEFAULT_ROW_BYTES)
    run.add_argument("--selectivity", type=float, default=0.0004)
    run.add_argument("--locality", type=float, default=0.0)
    run.add_argument("--sub-keys", type=int, default=1)
    run.add_argument("--selectivities", type=_floats, default=list(olap_mod.DEFAULT_SELECTIVITIES))
    run.add_argument("--localities", type=_floats, default=list(olap_mod.DEFAULT_LOCALITIES))
    # graph
    run.add_argument("--edges", type=Path, help="whitespace-separated 'src dst' edge list")
    run.add_argument("--scale", type=int, default=17, help="synthetic graph: 2^scale vertices")
    run.add_argument("--edge-factor", type=int, default=8)
    run.add_argument("--threshold", type=int, default=256, help="direct edge-list threshold")

    val = sub.add_parser("validate", help="check config and inputs without running")
    val.add_argument("--config", type=Path)
    val.add_argument("--trace", type=Path, help="OLTP CSV trace")
    val.add_argument("--edges", type=Path)
    val.add_argument("--vertex-trace", type=Path)

    gen = sub.add_parser("gen", help="write synthetic inputs")
    gen.add_argument("kind", choices=("oltp", "graph"))
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--queries", type=int, default=100_000)
    gen.add_argument("--scale", type=int, default=17)
    gen.add_argument("--edge-factor", type=int, default=8)
    gen.add_argument("--trace-out", type=Path, help="also write a traversal vertex trace")
    return p


def _config(args, olap: bool = False) -> SsdConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise ValidationError(f"config file {args.config} not found")
        return load_config(args.config)
    preset = args.preset or ("olap_calibrated" if olap else "default")
    return olap_mod.calibrated_config() if preset == "olap_calibrated" else SsdConfig()


def _check_input(path: Path | None, what: str) -> None:
    if path is not None and not path.is_file():
        raise ValidationError(f"{what} {path} not found")


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return v


def _latency_row(op: str, mode: str, rep: LatencyReport) -> list:
    return [op, mode, rep.total] + [rep.components[c] for c in COMPONENTS]


def _summary_row(mode, total, counters, srch=0, reads=0, blocks=0, cfg=None, link=0) -> list:
    pct = 100.0 * blocks / total_blocks(cfg) if cfg else 0.0
    return [mode, total, counters.cpu_fe_bytes, counters.fe_be_bytes, srch, reads, blocks, pct, link]


def _modes(args, allowed) -> list[str]:
    if args.mode == "all":
        return list(allowed)
    if args.mode not in allowed:
        raise ValidationError(f"mode must be one of {', '.join(allowed)} or all")
    return [args.mode]


def run_oltp(args, out: Path) -> None:
    cfg = _config(args)
    modes = _modes(args, ("baseline", "tcam"))
    if args.trace is not None:
        _check_input(args.trace, "trace")
        trace = traces.read_oltp_trace(args.trace)
    else:
        if args.queries < 1:
            raise ValidationError("--queries must be >= 1")
        trace = traces.generate_oltp_trace(args.queries, args.seed)
    results = {}
    db = oltp_mod.OltpDatabase(cfg)
    for m in modes:
        results[m] = oltp_mod.oltp_replay(trace, m, cfg, db=db if m == "tcam" else None)
    lat_rows, summary = [], []
    for m, r in results.items():
        total = LatencyReport(r.total_time, r.components)
        lat_rows.append(_latency_row("trace", m, total))
        summary.append(_summary_row(m, r.total_time, r.counters, r.srch_count, r.read_count,
                                    r.search_blocks, cfg, r.link_table_bytes))
    _write(out / "latency.csv", LATENCY_COLUMNS, lat_rows)
    _write(out / "summary.csv", SUMMARY_COLUMNS, summary)
    _write(
        out / "oltp_queries.csv",
        ["query_id", "baseline_pages"] + [f"{m}_us" for m in results],
        ([q.query_id, q.baseline_pages] + [results[m].latencies[i] for m in results] for i, q in enumerate(trace)),
    )
    first = next(iter(results.values()))
    xs, ys = oltp_mod.cdf(first.pages)
    _write(out / "oltp_cdf_pages.csv", ["baseline_pages", "cumulative_fraction"], _cdf_steps(xs, ys))
    rows = []
    for m, r in results.items():
        xs, ys = oltp_mod.cdf(r.latencies)
        rows.extend([m, x, y] for x, y in _cdf_steps(xs, ys))
    _write(out / "oltp_cdf_latency.csv", ["mode", "latency_us", "cumulative_fraction"], rows)


def _cdf_steps(xs, ys):
    # one row per distinct value keeps the file small
    keep = np.append(xs[1:] != xs[:-1], True)
    return zip(xs[keep].tolist(), ys[keep].tolist())


def _olap_spec(args, selectivity=None, locality=None) -> olap_mod.OlapQuerySpec:
    try:
        return olap_mod.OlapQuerySpec(
            args.rows, args.row_bytes,
            args.selectivity if selectivity is None else selectivity,
            args.locality if locality is None else locality,
            args.sub_keys,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def run_olap(args, out: Path) -> None:
    cfg = _config(args, olap=True)
    spec = _olap_spec(args)
    lat, summary = [], []
    for m in _modes(args, ("baseline_scan", "tcam")):
        r = olap_mod.olap_run(spec, m, cfg)
        lat.append(_latency_row("query", m, r.report))
        summary.append(_summary_row(m, r.time, r.counters, r.srch_count, r.read_count,
                                    r.search_blocks, cfg, r.link_table_bytes))
    _write(out / "latency.csv", LATENCY_COLUMNS, lat)
    _write(out / "summary.csv", SUMMARY_COLUMNS, summary)


def run_olap_sweep(args, out: Path) -> None:
    cfg = _config(args, olap=True)
    spec = _olap_spec(args)
    for s in args.selectivities:
        _olap_spec(args, selectivity=s)
    for loc in args.localities:
        _olap_spec(args, locality=loc)
    matrix = olap_mod.olap_sweep(spec, args.selectivities, args.localities, cfg)
    rows = [[s] + matrix[i].tolist() for i, s in enumerate(args.selectivities)]
    _write(out / "olap_sweep.csv", ["selectivity"] + [f"speedup_locality_{loc:g}" for loc in args.localities], rows)
    base = olap_mod.baseline_scan(spec, cfg)
    tcam = olap_mod.tcam_run(spec, cfg)
    _write(out / "latency.csv", LATENCY_COLUMNS,
           [_latency_row("query", "baseline_scan", base.report), _latency_row("query", "tcam", tcam.report)])
    _write(out / "summary.csv", SUMMARY_COLUMNS, [
        _summary_row("baseline_scan", base.time, base.counters, 0, base.read_count, 0, cfg),
        _summary_row("tcam", tcam.time, tcam.counters, tcam.srch_count, tcam.read_count,
                     tcam.search_blocks, cfg, tcam.link_table_bytes),
    ])


def run_graph(args, out: Path) -> None:
    cfg = _config(args)
    if args.edges is not None:
        _check_input(args.edges, "edge list")
        src, dst = traces.read_edge_list(args.edges)
        n = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
    else:
        if not 1 <= args.scale <= 26:
            raise ValidationError("--scale must lie in 1..26")
        src, dst = traces.rmat_edges(args.scale, args.edge_factor, args.seed)
        n = 1 << args.scale
    if args.threshold < 1:
        raise ValidationError("--threshold must be >= 1")
    if args.trace is not None:
        _check_input(args.trace, "vertex trace")
        access = traces.read_vertex_trace(args.trace)
    else:
        root = int(np.argmax(np.bincount(src, minlength=n))) if len(src) else 0
        access = traces.bfs_order(src, dst, n, root)
    spill = graph_mod.build_graph_index(src, dst, n, graph_mod.GraphConfig(args.threshold), cfg)
    flat = graph_mod.build_graph_index(src, dst, n, graph_mod.NO_SPILL, cfg)
    lat, summary, bars = [], [], []
    results = {}
    for m in _modes(args, graph_mod.MODES):
        idx = flat if m == "TCAM_NP" else spill
        results[m] = r = graph_mod.graph_traverse(idx, access, m, cfg)
        lat.append(_latency_row("trace", m, LatencyReport(r.time, r.components)))
        blocks = idx.search_blocks if m.startswith("TCAM") else 0
        summary.append(_summary_row(m, r.time, r.counters, r.srch_count, r.read_count, blocks, cfg,
                                    0 if not m.startswith("TCAM") else blocks * LINK_ENTRY_BYTES))
    ref = results.get("IM") or next(iter(results.values()))
    for m, r in results.items():
        idx = flat if m == "TCAM_NP" else spill
        index_bytes = idx.index_bytes if m.startswith("TCAM") else idx.baseline_bytes if m == "IM" else 0
        bars.append([m, r.time, r.time / ref.time, index_bytes])
    _write(out / "latency.csv", LATENCY_COLUMNS, lat)
    _write(out / "summary.csv", SUMMARY_COLUMNS, summary)
    _write(out / "graph_bars.csv", ["mode", "time_us", "normalized_time", "host_index_bytes"], bars)


def run_microbench(args, out: Path) -> None:
    cfg = _config(args)
    page = cfg.page_size
    cases = {
        "page_read": dict(ops=[FlashOp("read", superblock_of(cfg, 0)[0], page)], nvme_commands=1,
                          translations=1, host_bytes=page),
        "block_srch": dict(ops=[FlashOp("search", superblock_of(cfg, 0)[0], page)], nvme_commands=1,
                           translations=2, decode_bytes_per_channel=[page]),
        "superblock_srch": dict(
            ops=[FlashOp("search", a, page) for a in superblock_of(cfg, 0)], nvme_commands=1,
            translations=1 + cfg.parallel_units,
            decode_bytes_per_channel=[page * cfg.dies_per_channel] * cfg.channels),
        "page_program": dict(ops=[FlashOp("program", superblock_of(cfg, 0)[0], page)], nvme_commands=1,
                             translations=1, host_bytes=page),
    }
    lat, summary = [], []
    for name, kw in cases.items():
        b = Backend(cfg)
        rep = b.schedule(**kw)
        srch = sum(op.kind == "search" for op in kw["ops"])
        reads = sum(op.kind == "read" for op in kw["ops"])
        lat.append(_latency_row(name, "single", rep))
        summary.append(_summary_row(name, rep.total, b.counters, srch, reads, srch, cfg))
    _write(out / "latency.csv", LATENCY_COLUMNS, lat)
    _write(out / "summary.csv", SUMMARY_COLUMNS, summary)


RUNNERS = {
    "oltp": run_oltp,
    "olap": run_olap,
    "olap_sweep": run_olap_sweep,
    "graph": run_graph,
    "microbench": run_microbench,
}


def cmd_validate(args) -> None:
    if args.config is not None:
        _check_input(args.config, "config file")
        load_config(args.config)
    if args.trace is not None:
        _check_input(args.trace, "trace")
        traces.read_oltp_trace(args.trace)
    if args.edges is not None:
        _check_input(args.edges, "edge list")
        traces.read_edge_list(args.edges)
    if args.vertex_trace is not None:
        _check_input(args.vertex_trace, "vertex trace")
        traces.read_vertex_trace(args.vertex_trace)


def cmd_gen(args) -> None:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "oltp":
        if args.queries < 1:
            raise ValidationError("--queries must be >= 1")
        traces.write_oltp_trace(args.out, traces.generate_oltp_trace(args.queries, args.seed))
        return
    if not 1 <= args.scale <= 26:
        raise ValidationError("--scale must lie in 1..26")
    src, dst = traces.rmat_edges(args.scale, args.edge_factor, args.seed)
    traces.write_edge_list(args.out, src, dst)
    if args.trace_out is not None:
        n = 1 << args.scale
        root = int(np.argmax(np.bincount(src, minlength=n)))
        traces.write_vertex_trace(args.trace_out, traces.bfs_order(src, dst, n, root))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            cmd_validate(args)
            print("ok")
        elif args.verb == "gen":
            cmd_gen(args)
        else:
            args.out.mkdir(parents=True, exist_ok=True)
            RUNNERS[args.experiment](args, args.out)
            print(f"wrote reports to {args.out}")
    except (ValidationError, ConfigError, MalformedInput) as exc:
        print(f"tcamssd: validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"tcamssd: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
