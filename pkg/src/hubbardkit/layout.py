"""Heavy-hex coupling graphs, 1D-chain enumeration and calibration-aware layout scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class NoFeasibleLayout(ValueError):
    pass


@dataclass(frozen=True)
class NodeCalibration:
    p10: float = 0.0  # p(1|0)
    p01: float = 0.0  # p(0|1)
    t1: float = math.inf  # microseconds
    t2: float = math.inf

    @property
    def readout_error(self) -> float:
        return 0.5 * (self.p10 + self.p01)


@dataclass(frozen=True)
class CouplingGraph:
    """Undirected coupling map with per-node and per-edge calibration."""

    nodes: dict[int, NodeCalibration]
    edges: dict[tuple[int, int], float]  # (a, b) with a < b -> two-qubit error rate
    coords: dict[int, tuple[int, int]] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        nodes = {int(k): v for k, v in sorted(self.nodes.items())}
        edges = {}
        for (a, b), err in self.edges.items():
            a, b = int(a), int(b)
            if a == b or a not in nodes or b not in nodes:
                raise ValueError(f"bad edge ({a}, {b})")
            if not 0.0 <= err <= 1.0:
                raise ValueError(f"edge error {err} outside [0, 1]")
            edges[(min(a, b), max(a, b))] = float(err)
        for q, cal in nodes.items():
            if not (0 <= cal.p10 <= 1 and 0 <= cal.p01 <= 1):
                raise ValueError(f"readout error of qubit {q} outside [0, 1]")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", dict(sorted(edges.items())))
        adj: dict[int, list[int]] = {q: [] for q in nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", {q: tuple(sorted(v)) for q, v in adj.items()})

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self, q: int) -> tuple[int, ...]:
        return self._adj[q]  # type: ignore[attr-defined]

    def degree(self, q: int) -> int:
        return len(self.neighbors(q))

    def max_degree(self) -> int:
        return max((self.degree(q) for q in self.nodes), default=0)

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def edge_error(self, a: int, b: int) -> float:
        return self.edges[(min(a, b), max(a, b))]

    def with_calibration(
        self,
        nodes: Mapping[int, NodeCalibration] | None = None,
        edges: Mapping[tuple[int, int], float] | None = None,
    ) -> "CouplingGraph":
        n = dict(self.nodes)
        n.update(nodes or {})
        e = dict(self.edges)
        for (a, b), v in (edges or {}).items():
            e[(min(a, b), max(a, b))] = v
        return CouplingGraph(n, e, self.coords)

    def to_dict(self) -> dict:
        return {
            "nodes": {str(q): {"p10": c.p10, "p01": c.p01, "t1": _num(c.t1), "t2": _num(c.t2)} for q, c in self.nodes.items()},
            "edges": [[a, b, e] for (a, b), e in self.edges.items()],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CouplingGraph":
        nodes = {
            int(q): NodeCalibration(float(v.get("p10", 0)), float(v.get("p01", 0)), _inf(v.get("t1")), _inf(v.get("t2")))
            for q, v in d["nodes"].items()
        }
        edges = {(int(a), int(b)): float(e) for a, b, e in d["edges"]}
        return cls(nodes, edges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CouplingGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _num(x: float):
    return None if math.isinf(x) else x


def _inf(x) -> float:
    return math.inf if x is None else float(x)


def graph_from_edges(edges: Iterable[tuple[int, int]], nodes: Iterable[int] | None = None) -> CouplingGraph:
    """Uncalibrated (error-free) graph from an edge list."""
    edges = [(int(a), int(b)) for a, b in edges]
    ids = set(nodes or ())
    for a, b in edges:
        ids |= {a, b}
    return CouplingGraph({q: NodeCalibration() for q in sorted(ids)}, {e: 0.0 for e in edges})


def _relabel_by_coords(coord_edges: set[tuple[tuple[int, int], tuple[int, int]]]) -> CouplingGraph:
    pts = sorted({p for e in coord_edges for p in e})
    ids = {p: k for k, p in enumerate(pts)}
    g = graph_from_edges((ids[a], ids[b]) for a, b in coord_edges)
    return CouplingGraph(g.nodes, g.edges, {k: p for p, k in ids.items()})


def build_heavy_hex(rows: int, cols: int) -> CouplingGraph:
    """Heavy-hex lattice of ``rows x cols`` hexagonal cells, numbered row by row.

    A brick-wall hexagon lattice (degree <= 3) with every edge subdivided by a
    bridge qubit; ``(1, 1)`` is a 12-qubit ring.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be at least 1")
    hex_edges: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for r in range(rows):
        s = r % 2
        for c in range(cols):
            x0, x1 = 2 * c + s, 2 * c + 2 + s
            for y in (r, r + 1):
                for x in range(x0, x1):
                    hex_edges.add(((y, x), (y, x + 1)))
            hex_edges.add(((r, x0), (r + 1, x0)))
            hex_edges.add(((r, x1), (r + 1, x1)))
    heavy: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for (ya, xa), (yb, xb) in hex_edges:
        a, b = (2 * ya, 2 * xa), (2 * yb, 2 * xb)
        mid = ((a[0] + b[0]) // 2, (a[1] + b[1]) // 2)
        heavy.add((a, mid))
        heavy.add((mid, b))
    return _relabel_by_coords(heavy)


def heron_like(lines: int = 8, line_length: int = 16, bridges: int = 4) -> CouplingGraph:
    """156-qubit heavy-hex map of the Heron class: 8 lines of 16 joined by 7 rows of 4 bridges.

    Bridges sit at columns 3, 7, 11, 15 below even lines and 1, 5, 9, 13 below
    odd lines.
    """
    coord_edges = set()
    for y in range(lines):
        for x in range(line_length - 1):
            coord_edges.add(((2 * y, x), (2 * y, x + 1)))
    for y in range(lines - 1):
        start = 3 if y % 2 == 0 else 1
        for k in range(bridges):
            x = start + 4 * k
            if x >= line_length:
                break
            coord_edges.add(((2 * y, x), (2 * y + 1, x)))
            coord_edges.add(((2 * y + 1, x), (2 * y + 2, x)))
    return _relabel_by_coords(coord_edges)


def synthetic_calibration(
    graph: CouplingGraph,
    seed: int = 0,
    readout_median: float = 0.01,
    edge_median: float = 0.003,
    spread: float = 0.5,
    t1_median: float = 250.0,
) -> CouplingGraph:
    """Log-normal readout and gate errors around the given medians."""
    rng = np.random.default_rng(seed)
    nodes = {}
    for q in graph.nodes:
        p10, p01 = np.clip(readout_median * np.exp(spread * rng.standard_normal(2)), 1e-4, 0.5)
        t1 = t1_median * float(np.exp(0.3 * rng.standard_normal()))
        t2 = t1 * float(rng.uniform(0.5, 1.5))
        nodes[q] = NodeCalibration(float(p10), float(p01), t1, t2)
    edges = {e: float(np.clip(edge_median * np.exp(spread * rng.standard_normal()), 1e-5, 0.5)) for e in graph.edges}
    return CouplingGraph(nodes, edges, graph.coords)


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


ChainLayout = tuple[int, ...]


def is_chain(graph: CouplingGraph, layout: Sequence[int]) -> bool:
    return len(set(layout)) == len(layout) and all(graph.has_edge(a, b) for a, b in zip(layout, layout[1:]))


def enumerate_chains(
    graph: CouplingGraph, length: int, limit: int | None = None, oriented: bool = False
) -> list[ChainLayout]:
    """Every simple path on ``length`` qubits, sorted.

    By default one orientation is kept per path (the one starting at the
    smaller endpoint); ``oriented=True`` keeps both, since a reversed chain
    maps the modes onto the qubits differently.  ``limit`` stops the search
    early (for exploratory use on large devices).
    """
    if length < 1:
        raise ValueError("length must be positive")
    if length > graph.n_nodes:
        raise ValueError(f"length {length} exceeds {graph.n_nodes} nodes")
    out: list[ChainLayout] = []
    if length == 1:
        return [(q,) for q in graph.nodes]
    both = 1 if oriented else 0
    adj = {q: graph.neighbors(q) for q in graph.nodes}
    for start in graph.nodes:
        path = [start]
        on = {start}
        stack = [iter(adj[start])]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                on.discard(path.pop())
                continue
            if nxt in on:
                continue
            if len(path) + 1 == length:
                if both or start < nxt:
                    out.append(tuple(path) + (nxt,))
                    if limit is not None and len(out) >= limit:
                        return sorted(out)
                continue
            path.append(nxt)
            on.add(nxt)
            stack.append(iter(adj[nxt]))
    return sorted(out)


def count_chains(graph: CouplingGraph, length: int, oriented: bool = False) -> int:
    """Number of simple paths on ``length`` qubits, by a compiled DFS.

    Counts each path once, or twice (both orientations) with ``oriented=True``.
    """
    from numba import njit

    n = graph.n_nodes
    ids = list(graph.nodes)
    pos = {q: k for k, q in enumerate(ids)}
    deg = max(graph.max_degree(), 1)
    nbr = np.full((n, deg), -1, dtype=np.int64)
    for q in ids:
        for k, r in enumerate(graph.neighbors(q)):
            nbr[pos[q], k] = pos[r]

    @njit(cache=False)
    def _count(nbr, length):
        n, deg = nbr.shape
        total = 0
        path = np.empty(length, np.int64)
        choice = np.empty(length, np.int64)
        on = np.zeros(n, np.bool_)
        for start in range(n):
            depth = 0
            path[0] = start
            choice[0] = 0
            on[start] = True
            while depth >= 0:
                cur = path[depth]
                k = choice[depth]
                if k >= deg or nbr[cur, k] < 0:
                    on[cur] = False
                    depth -= 1
                    continue
                choice[depth] = k + 1
                nxt = nbr[cur, k]
                if on[nxt]:
                    continue
                if depth + 2 == length:
                    if start < nxt:
                        total += 1
                    continue
                depth += 1
                path[depth] = nxt
                choice[depth] = 0
                on[nxt] = True
        return total

    if length == 1:
        return n
    return int(_count(nbr, length)) * (2 if oriented else 1)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def excluded_qubits(graph: CouplingGraph, k: float = 5.0) -> set[int]:
    """Qubits whose readout error, or any adjacent gate error, exceeds ``k`` times the device median."""
    ro = np.array([c.readout_error for c in graph.nodes.values()])
    med_ro = float(np.median(ro)) if ro.size else 0.0
    med_e = float(np.median(list(graph.edges.values()))) if graph.edges else 0.0
    bad = {q for q, c in graph.nodes.items() if c.readout_error > k * med_ro}
    for (a, b), e in graph.edges.items():
        if e > k * med_e:
            bad |= {a, b}
    return bad


def score_layout(graph: CouplingGraph, layout: Sequence[int], idle_time: float = 0.0) -> float:
    """Product of edge fidelities along the chain and mean readout fidelities of its qubits.

    ``idle_time`` (microseconds) adds an ``exp(-t/T1 - t/T2)`` factor per qubit.
    """
    s = 1.0
    for a, b in zip(layout, layout[1:]):
        s *= 1.0 - graph.edge_error(a, b)
    for q in layout:
        c = graph.nodes[q]
        s *= 1.0 - c.readout_error
        if idle_time > 0:
            s *= math.exp(-idle_time / c.t1 - idle_time / c.t2)
    return s


def score_and_select(
    layouts: Sequence[Sequence[int]],
    graph: CouplingGraph,
    excluded: Iterable[int] | None = None,
    k: float | None = 5.0,
    idle_time: float = 0.0,
) -> list[tuple[float, ChainLayout]]:
    """Layouts ranked by score (best first), ties broken by qubit ids.

    Layouts touching an explicitly ``excluded`` qubit, or one flagged by the
    ``k``-times-median rule (``k=None`` disables the rule), are removed first.
    """
    if not layouts:
        raise ValueError("no layouts to score")
    bad = set(excluded or ())
    if k is not None:
        bad |= excluded_qubits(graph, k)
    ranked = [
        (score_layout(graph, lay, idle_time), tuple(lay))
        for lay in layouts
        if not bad.intersection(lay)
    ]
    if not ranked:
        raise NoFeasibleLayout(f"no feasible layout: every candidate touches an excluded qubit {sorted(bad)}")
    ranked.sort(key=lambda r: (-r[0], r[1]))
    return ranked


def layouts_csv(ranked: Sequence[tuple[float, ChainLayout]], top: int | None = None) -> str:
    lines = ["rank,score,qubits"]
    for i, (s, lay) in enumerate(ranked[:top] if top else ranked):
        lines.append(f"{i},{s:.12g},{' '.join(map(str, lay))}")
    return "\n".join(lines) + "\n"
