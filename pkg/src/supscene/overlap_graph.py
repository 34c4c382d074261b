"""Scene overlap graphs and induced overlap matrices.

A scene is a weighted undirected graph whose vertices are images and whose
edge weights are geometric overlap ratios in (0, 1]. Each edge is stored once
with ``i < j``; symmetry is produced by the matrix constructor.

Text format (one record per line, ``#`` starts a comment)::

    scene <scene_id> <num_nodes>
    node <index> <image_id>
    edge <i> <j> <weight>
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GraphFormatError(ValueError):
    """Malformed scene-graph text; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class GraphValidationError(ValueError):
    pass


@dataclass(frozen=True)
class OverlapGraph:
    scene_id: str
    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]
    _index: dict = field(init=False, repr=False, compare=False)
    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise GraphValidationError(f"scene {self.scene_id}: duplicate image ids")
        seen = set()
        adj: list[dict[int, float]] = [dict() for _ in range(n)]
        for i, j, w in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise GraphValidationError(f"edge ({i}, {j}) references a missing node")
            if i == j:
                raise GraphValidationError(f"self-edge on node {i}")
            if i > j:
                raise GraphValidationError(f"edge ({i}, {j}) must be stored with i < j")
            if (i, j) in seen:
                raise GraphValidationError(f"duplicate edge ({i}, {j})")
            if not (0.0 < w <= 1.0):
                raise GraphValidationError(f"edge ({i}, {j}) weight {w} outside (0, 1]")
            seen.add((i, j))
            adj[i][j] = w
            adj[j][i] = w
        object.__setattr__(self, "_index", {nid: k for k, nid in enumerate(self.node_ids)})
        object.__setattr__(self, "_adj", tuple(adj))

    @classmethod
    def from_edges(cls, scene_id: str, node_ids: Sequence[str],
                   edges: Iterable[tuple[int, int, float]]) -> "OverlapGraph":
        """Build a graph, reordering each edge to ``i < j``."""
        norm = []
        for i, j, w in edges:
            i, j = (int(i), int(j)) if i < j else (int(j), int(i))
            norm.append((i, j, float(w)))
        norm.sort()
        return cls(scene_id, tuple(node_ids), tuple(norm))

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r} in scene {self.scene_id}") from None

    def weight(self, a: str, b: str) -> float:
        """Overlap between two images (0 when there is no edge)."""
        return self._adj[self.index_of(a)].get(self.index_of(b), 0.0)

    def neighbors(self, node_id: str) -> dict[str, float]:
        adj = self._adj[self.index_of(node_id)]
        return {self.node_ids[j]: w for j, w in adj.items()}

    def dense(self) -> np.ndarray:
        """Full N_S x N_S overlap matrix with unit diagonal."""
        return induced_overlap_matrix(self, self.node_ids)


def induced_overlap_matrix(g: OverlapGraph, nodes: Sequence[str]) -> np.ndarray:
    """Overlap matrix restricted to ``nodes`` in the given order.

    Entry (j, k) is the edge weight if the images share an edge, 1 on the
    diagonal and 0 otherwise.
    """
    if len(set(nodes)) != len(nodes):
        raise ValueError("induced_overlap_matrix: duplicate node ids")
    idx = [g.index_of(v) for v in nodes]
    n = len(idx)
    out = np.zeros((n, n))
    pos = {v: k for k, v in enumerate(idx)}
    for a, ia in enumerate(idx):
        for jb, w in g._adj[ia].items():
            b = pos.get(jb)
            if b is not None:
                out[a, b] = w
    np.fill_diagonal(out, 1.0)
    return out


def neighbors_above(g: OverlapGraph, node: str, tau: float) -> list[str]:
    """Neighbors with overlap >= tau, by descending weight then ascending id."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    nbrs = [(w, nid) for nid, w in g.neighbors(node).items() if w >= tau]
    nbrs.sort(key=lambda t: (-t[0], t[1]))
    return [nid for _, nid in nbrs]


def load_graph(path: str | os.PathLike) -> OverlapGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def parse_graph(text: str) -> OverlapGraph:
    scene_id = None
    declared = None
    nodes: dict[int, str] = {}
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "scene":
                if len(parts) != 3:
                    raise GraphFormatError("expected 'scene <id> <count>'", lineno)
                if scene_id is not None:
                    raise GraphFormatError("repeated scene header", lineno)
                scene_id, declared = parts[1], int(parts[2])
            elif kind == "node":
                if len(parts) != 3:
                    raise GraphFormatError("expected 'node <index> <image_id>'", lineno)
                k = int(parts[1])
                if k in nodes:
                    raise GraphFormatError(f"node index {k} declared twice", lineno)
                nodes[k] = parts[2]
            elif kind == "edge":
                if len(parts) != 4:
                    raise GraphFormatError("expected 'edge <i> <j> <w>'", lineno)
                i, j, w = int(parts[1]), int(parts[2]), float(parts[3])
                if not (0.0 < w <= 1.0):
                    raise GraphValidationError(f"line {lineno}: weight {w} outside (0, 1]")
                edges.append((i, j, w, lineno))
            else:
                raise GraphFormatError(f"unknown record {kind!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, (GraphFormatError, GraphValidationError)):
                raise
            raise GraphFormatError(str(exc), lineno) from None
    if scene_id is None:
        raise GraphFormatError("missing scene header")
    if sorted(nodes) != list(range(declared)):
        raise GraphValidationError(
            f"scene {scene_id}: declared {declared} nodes but indices are {sorted(nodes)}")
    node_ids = [nodes[k] for k in range(declared)]
    for i, j, _w, lineno in edges:
        if not (0 <= i < declared and 0 <= j < declared):
            raise GraphValidationError(f"line {lineno}: edge ({i}, {j}) has a dangling endpoint")
    return OverlapGraph.from_edges(scene_id, node_ids, [(i, j, w) for i, j, w, _ in edges])


def format_graph(g: OverlapGraph) -> str:
    lines = [f"scene {g.scene_id} {g.num_nodes}"]
    lines += [f"node {k} {nid}" for k, nid in enumerate(g.node_ids)]
    # repr() round-trips doubles exactly
    lines += [f"edge {i} {j} {w!r}" for i, j, w in g.edges]
    return "\n".join(lines) + "\n"


def save_graph(g: OverlapGraph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph(g))
