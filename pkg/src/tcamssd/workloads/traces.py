"""Streaming readers/writers for workload inputs and the synthetic generators."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MalformedInput, MalformedTrace

OLTP_HEADER = ("query_id", "index", "key", "baseline_pages")

# synthetic OLTP page-count shape: 73.5% of queries touch more than 3 pages
LONG_QUERY_FRACTION = 0.735
TAIL_EXPONENT = 2.8
TAIL_MAX_PAGES = 64


@dataclass(frozen=True)
class OltpQuery:
    query_id: int
    index: str
    key: str
    baseline_pages: int


def iter_oltp_trace(path: str | Path) -> Iterator[OltpQuery]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OLTP_HEADER:
            raise MalformedTrace(f"{path}:1: expected header {','.join(OLTP_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedTrace(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                qid, pages = int(row[0]), int(row[3])
            except ValueError:
                raise MalformedTrace(f"{path}:{lineno}: query_id and baseline_pages must be integers") from None
            if pages < 1:
                raise MalformedTrace(f"{path}:{lineno}: baseline_pages must be >= 1")
            yield OltpQuery(qid, row[1].strip(), row[2].strip(), pages)


def read_oltp_trace(path: str | Path) -> list[OltpQuery]:
    return list(iter_oltp_trace(path))


def write_oltp_trace(path: str | Path, queries: Iterable[OltpQuery]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OLTP_HEADER)
        for q in queries:
            w.writerow((q.query_id, q.index, q.key, q.baseline_pages))


def _int_fields(path, expected: int) -> Iterator[tuple[int, list[int]]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != expected:
                raise MalformedInput(f"{path}:{lineno}: expected {expected} field(s), got {len(parts)}")
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                raise MalformedInput(f"{path}:{lineno}: non-integer field in {text!r}") from None
            if any(v < 0 for v in vals):
                raise MalformedInput(f"{path}:{lineno}: vertex ids must be non-negative")
            yield lineno, vals


def read_edge_list(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    for _, (s, d) in _int_fields(path, 2):
        src.append(s)
        dst.append(d)
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def read_vertex_trace(path: str | Path) -> list[int]:
    return [v for _, (v,) in _int_fields(path, 1)]


def write_edge_list(path: str | Path, src: np.ndarray, dst: np.ndarray) -> None:
    np.savetxt(path, np.column_stack([src, dst]), fmt="%d")


def write_vertex_trace(path: str | Path, vertices: Iterable[int]) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{v}\n" for v in vertices)


def page_count_distribution() -> tuple[np.ndarray, np.ndarray]:
    """(pages, probability) for the synthetic trace: flat head over 1..3, Zipf tail above."""
    head = np.arange(1, 4)
    tail = np.arange(4, TAIL_MAX_PAGES + 1)
    w = tail.astype(float) ** -TAIL_EXPONENT
    probs = np.concatenate([np.full(3, (1 - LONG_QUERY_FRACTION) / 3), LONG_QUERY_FRACTION * w / w.sum()])
    return np.concatenate([head, tail]), probs


def generate_oltp_trace(n: int, seed: int = 0, warehouses: int = 23) -> list[OltpQuery]:
    """Secondary-index lookups with a fixed share of long (>3 page) fetches."""
    rng = np.random.default_rng(seed)
    n_long = round(n * LONG_QUERY_FRACTION)
    pages, probs = page_count_distribution()
    head_p = probs[:3] / probs[:3].sum()
    tail_p = probs[3:] / probs[3:].sum()
    counts = np.concatenate([
        rng.choice(pages[3:], size=n_long, p=tail_p),
        rng.choice(pages[:3], size=n - n_long, p=head_p),
    ])
    rng.shuffle(counts)
    wh = rng.integers(0, warehouses, size=n)
    keys = rng.integers(0, 1 << 20, size=n)
    indexes = ("customer_last", "order_customer", "stock_item")
    pick = rng.integers(0, len(indexes), size=n)
    return [
        OltpQuery(i, indexes[pick[i]], f"{wh[i]}:{keys[i]}", int(counts[i]))
        for i in range(n)
    ]


def rmat_edges(
    scale: int, edge_factor: int = 8, seed: int = 0, a: float = 0.57, b: float = 0.19, c: float = 0.19
) -> tuple[np.ndarray, np.ndarray]:
    """Kronecker/R-MAT edge list sorted by source, self loops and duplicates kept."""
    rng = np.random.default_rng(seed)
    n_edges = edge_factor << scale
    src = np.zeros(n_edges, dtype=np.int64)
    dst = np.zeros(n_edges, dtype=np.int64)
    for bit in range(scale):
        r = rng.random(n_edges)
        down = r >= a + b  # quadrants c, d
        right = ((r >= a) & (r < a + b)) | (r >= a + b + c)  # quadrants b, d
        src |= down.astype(np.int64) << bit
        dst |= right.astype(np.int64) << bit
    order = np.lexsort((dst, src))
    return src[order], dst[order]


def rmat_degrees(scale: int, n_edges: int, seed: int = 0, a: float = 0.57, b: float = 0.19) -> np.ndarray:
    """Expected R-MAT out-degrees drawn as Poisson counts; avoids materialising edges."""
    rng = np.random.default_rng(seed)
    p_top = a + b
    # probability mass per source id is a product over bits
    mass = np.ones(1)
    for _ in range(scale):
        mass = np.concatenate([mass * p_top, mass * (1 - p_top)])
    return rng.poisson(mass * n_edges).astype(np.int64)


def csr(src: np.ndarray, dst: np.ndarray, n_vertices: int) -> tuple[np.ndarray, np.ndarray]:
    if len(src) and np.any(np.diff(src) < 0):
        order = np.argsort(src, kind="stable")
        src, dst = src[order], dst[order]
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_vertices), out=offsets[1:])
    return offsets, dst


def bfs_order(src: np.ndarray, dst: np.ndarray, n_vertices: int, root: int = 0) -> list[int]:
    """Level-synchronous traversal order; stands in for the SSSP vertex access trace."""
    offsets, targets = csr(src, dst, n_vertices)
    seen = np.zeros(n_vertices, dtype=bool)
    seen[root] = True
    frontier = np.array([root], dtype=np.int64)
    order = [root]
    while frontier.size:
        starts, ends = offsets[frontier], offsets[frontier + 1]
        lens = ends - starts
        if lens.sum() == 0:
            break
        idx = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(lens.sum())
        nxt = np.unique(targets[idx])
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        order.extend(nxt.tolist())
        frontier = nxt
    return order
