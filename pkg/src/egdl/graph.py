"""Spatial network and its graph-Laplacian diffusion operator.

The Laplacian follows the diffusion convention

    L_ii = -deg(i),  L_ij = 1 if i ~ j,  else 0

so that ``L @ h`` equals ``Delta h(x) = sum_{y ~ x} (h(y) - h(x))`` and
diffusion smooths a field rather than sharpening it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    Disconnected,
    DuplicateEdge,
    IndexOutOfRange,
    LengthMismatch,
    ParseError,
    SelfLoop,
)


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected, unweighted graph without self-loops.

    ``edges`` is stored canonically as sorted ``(i, j)`` tuples with ``i < j``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    node_labels: tuple[str, ...] | None = None
    _neighbors: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self._neighbors], dtype=np.int64)

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self._neighbors[node]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def label(self, node: int) -> str:
        if self.node_labels is None:
            return str(node)
        return self.node_labels[node]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour lists in compressed-row form ``(indptr, indices)``."""
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(nb) for nb in self._neighbors])
        indices = np.array([j for nb in self._neighbors for j in nb], dtype=np.int64)
        return indptr, indices


def _is_connected(n: int, neighbors: Sequence[Sequence[int]]) -> bool:
    if n == 0:
        return False
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in neighbors[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def build_graph(
    n: int,
    edges: Iterable[tuple[int, int]],
    node_labels: Sequence[str] | None = None,
    allow_disconnected: bool = False,
) -> SpatialGraph:
    """Validate an edge list and return a :class:`SpatialGraph`.

    Disconnected graphs raise :class:`Disconnected` unless
    ``allow_disconnected`` is set; the stability theory only covers the
    connected case.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"node count must be a positive integer, got {n!r}")
    n = int(n)
    seen: set[tuple[int, int]] = set()
    for pair in edges:
        i, j = (int(v) for v in pair)
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge ({i}, {j}) has endpoint outside [0, {n})")
        if i == j:
            raise SelfLoop(f"self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdge(f"edge {key} listed more than once")
        seen.add(key)
    canon = tuple(sorted(seen))
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in canon:
        nbrs[i].append(j)
        nbrs[j].append(i)
    neighbors = tuple(tuple(sorted(nb)) for nb in nbrs)
    if node_labels is not None:
        node_labels = tuple(str(s) for s in node_labels)
        if len(node_labels) != n:
            raise LengthMismatch(f"{len(node_labels)} labels for {n} nodes")
    if not allow_disconnected and not _is_connected(n, neighbors):
        raise Disconnected(f"graph with {n} nodes and {len(canon)} edges is not connected")
    return SpatialGraph(n=n, edges=canon, node_labels=node_labels, _neighbors=neighbors)


def laplacian(graph: SpatialGraph) -> np.ndarray:
    """Dense ``n x n`` diffusion Laplacian (``-deg`` on the diagonal)."""
    lap = graph.adjacency()
    lap[np.diag_indices(graph.n)] = -graph.degrees.astype(float)
    return lap


def apply_diffusion(graph: SpatialGraph, values: Sequence[float]) -> np.ndarray:
    """Evaluate ``sum_{y ~ x} (h(y) - h(x))`` at every node."""
    h = np.asarray(values, dtype=float)
    if h.shape != (graph.n,):
        raise LengthMismatch(f"field has shape {h.shape}, graph has {graph.n} nodes")
    out = np.zeros(graph.n)
    for x in range(graph.n):
        nb = graph.neighbors(x)
        if nb:
            out[x] = np.sum(h[list(nb)] - h[x])
    return out


def parse_edge_list(text: str, allow_disconnected: bool = False) -> SpatialGraph:
    """Parse the edge-list text format.

    The first non-comment line holds the node count, each later line two
    zero-based node indices. ``#`` starts a comment. A comment of the form
    ``# label <index> <name>`` attaches a display name to a node.
    """
    n = None
    edges = []
    labels: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body, _, comment = raw.partition("#")
        comment = comment.strip()
        if comment.startswith("label "):
            parts = comment.split(maxsplit=2)
            if len(parts) == 3 and parts[1].isdigit():
                labels[int(parts[1])] = parts[2].strip()
        tokens = body.split()
        if not tokens:
            continue
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise ParseError(f"expected integers, got {body.strip()!r}", lineno) from None
        if n is None:
            if len(values) != 1:
                raise ParseError("first line must hold the node count only", lineno)
            n = values[0]
            if n < 1:
                raise ParseError("node count must be positive", lineno)
            continue
        if len(values) != 2:
            raise ParseError(f"expected two node indices, got {len(values)} values", lineno)
        if not all(0 <= v < n for v in values):
            raise ParseError(f"node index out of range [0, {n})", lineno)
        edges.append((values[0], values[1]))
    if n is None:
        raise ParseError("empty edge list: missing node count")
    node_labels = None
    if labels:
        node_labels = [labels.get(i, str(i)) for i in range(n)]
    return build_graph(n, edges, node_labels=node_labels, allow_disconnected=allow_disconnected)


def load_edge_list(path, allow_disconnected: bool = False) -> SpatialGraph:
    text = Path(path).read_text()
    return parse_edge_list(text, allow_disconnected=allow_disconnected)


def save_edge_list(graph: SpatialGraph, path) -> None:
    lines = [str(graph.n)]
    if graph.node_labels is not None:
        lines += [f"# label {i} {name}" for i, name in enumerate(graph.node_labels)]
    lines += [f"{i} {j}" for i, j in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def load_fixture(name: str) -> SpatialGraph:
    """Load a shipped network, e.g. ``"japan47"`` or ``"china31"``."""
    fname = name if name.endswith(".edges") else f"{name}.edges"
    text = resources.files("egdl").joinpath("data").joinpath(fname).read_text()
    return parse_edge_list(text)


def random_connected_graph(n: int, extra_edges: int = 0, seed=None) -> SpatialGraph:
    """Random spanning tree plus up to ``extra_edges`` distinct chords."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        j = order[rng.integers(0, k)]
        i = order[k]
        edges.add((min(i, j), max(i, j)))
    max_edges = n * (n - 1) // 2
    target = min(max_edges, len(edges) + max(0, int(extra_edges)))
    while len(edges) < target:
        i, j = rng.choice(n, size=2, replace=False)
        edges.add((min(i, j), max(i, j)))
    return build_graph(n, sorted(edges))
