"""Subgraph batch construction from scene overlap graphs.

Two strategies build a batch of ``n`` images from one scene:

* anchor expansion: breadth-first search from an anchor along edges whose
  overlap is at least ``tau_iou``;
* balanced sampling: a random node set refined by greedy swaps towards a
  target fraction ``rho`` of positive pairs.

Scenes smaller than ``n`` are padded with empty slots and a validity mask.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .overlap_graph import OverlapGraph, induced_overlap_matrix, neighbors_above

logger = logging.getLogger(__name__)

PAD_ID = ""


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    subgraph_size: int = 16
    tau_iou: float = 0.25
    rho: float = 0.5
    max_swap_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.subgraph_size < 2:
            raise ValueError(f"subgraph_size must be >= 2, got {self.subgraph_size}")
        if self.max_swap_iters < 1:
            raise ValueError("max_swap_iters must be >= 1")
        if not 0.0 <= self.tau_iou <= 1.0:
            raise ValueError("tau_iou must lie in [0, 1]")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def n(self) -> int:
        return self.subgraph_size


@dataclass
class SubgraphBatch:
    scene_id: str
    node_ids: list[str]
    overlap: np.ndarray
    valid_mask: np.ndarray
    swap_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def valid_ids(self) -> list[str]:
        return [nid for nid, ok in zip(self.node_ids, self.valid_mask) if ok]


def make_batch(g: OverlapGraph, nodes: Sequence[str], n: int) -> SubgraphBatch:
    """Pad ``nodes`` to ``n`` slots and attach the induced overlap matrix."""
    nodes = list(nodes)
    if len(nodes) > n:
        raise SamplingError(f"{len(nodes)} nodes do not fit a batch of {n}")
    m = len(nodes)
    overlap = np.zeros((n, n))
    overlap[:m, :m] = induced_overlap_matrix(g, nodes)
    np.fill_diagonal(overlap, 1.0)
    mask = np.zeros(n, dtype=bool)
    mask[:m] = True
    return SubgraphBatch(g.scene_id, nodes + [PAD_ID] * (n - m), overlap, mask)


def anchor_expansion(g: OverlapGraph, anchor: str, cfg: SamplerConfig) -> SubgraphBatch:
    g.index_of(anchor)
    visited = [anchor]
    seen = {anchor}
    queue = deque([anchor])
    while queue and len(visited) < cfg.n:
        cur = queue.popleft()
        for nb in neighbors_above(g, cur, cfg.tau_iou):
            if nb in seen:
                continue
            seen.add(nb)
            visited.append(nb)
            queue.append(nb)
            if len(visited) == cfg.n:
                break
    return make_batch(g, visited, cfg.n)


def positive_ratio(overlap: np.ndarray, tau: float) -> float:
    """Fraction of unordered pairs with overlap >= tau (0 for fewer than 2 nodes)."""
    m = overlap.shape[0]
    if m < 2:
        return 0.0
    iu = np.triu_indices(m, k=1)
    return float(np.count_nonzero(overlap[iu] >= tau)) / len(iu[0])


def balanced_sampling(g: OverlapGraph, cfg: SamplerConfig,
                      rng: np.random.Generator | None = None) -> SubgraphBatch:
    """Greedy-swap a random node set towards positive-pair ratio ``rho``.

    A proposal swaps one random in-set node for one random out-of-set node
    and is accepted only if it strictly reduces ``|ratio - rho|``. The
    accepted trajectory of ``|ratio - rho|`` is kept in ``swap_trace``.
    """
    N = g.num_nodes
    if N < 2:
        raise SamplingError(f"scene {g.scene_id} has {N} node(s); balanced sampling needs 2")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dense = g.dense()
    m = min(cfg.n, N)
    chosen = list(rng.choice(N, size=m, replace=False))
    outside = [k for k in range(N) if k not in set(chosen)]

    def gap(sel):
        return abs(positive_ratio(dense[np.ix_(sel, sel)], cfg.tau_iou) - cfg.rho)

    cur = gap(chosen)
    trace = [cur]
    if outside:
        for _ in range(cfg.max_swap_iters):
            if cur == 0.0:
                break
            a = int(rng.integers(m))
            b = int(rng.integers(len(outside)))
            trial = list(chosen)
            trial[a] = outside[b]
            new = gap(trial)
            if new < cur:
                outside[b] = chosen[a]
                chosen = trial
                cur = new
                trace.append(cur)
    batch = make_batch(g, [g.node_ids[k] for k in chosen], cfg.n)
    batch.swap_trace = trace
    return batch


def batch_count(num_images: int, n: int) -> int:
    """Batches drawn per scene and epoch: ``floor(num_images / n) + 1``."""
    if num_images < 1 or n < 1:
        raise ValueError("batch_count needs num_images >= 1 and n >= 1")
    return num_images // n + 1


STRATEGIES = ("anchor", "balanced")


def epoch_schedule(graphs: Sequence[OverlapGraph], cfg: SamplerConfig,
                   strategy: str = "anchor", epoch: int = 0) -> Iterator[SubgraphBatch]:
    """Yield the batches of one epoch.

    Each scene contributes ``batch_count`` batches whose anchors are drawn
    without replacement. The order of batches across scenes is shuffled.
    Everything derives from ``(cfg.seed, epoch)``.
    """
    if not graphs:
        raise SamplingError("epoch_schedule needs at least one scene")
    if strategy not in STRATEGIES:
        raise SamplingError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    rng = np.random.default_rng([cfg.seed, epoch])
    jobs = []
    for si, g in enumerate(graphs):
        T = batch_count(g.num_nodes, cfg.n)
        perm = rng.permutation(g.num_nodes)
        # n >= 2 guarantees T <= N_S, so anchors are distinct
        anchors = [g.node_ids[perm[t]] for t in range(T)]
        jobs.extend((si, a) for a in anchors)
    order = rng.permutation(len(jobs))
    for k in order:
        si, anchor = jobs[k]
        g = graphs[si]
        if strategy == "anchor" or g.num_nodes < 2:
            yield anchor_expansion(g, anchor, cfg)
        else:
            sub_rng = np.random.default_rng([cfg.seed, epoch, int(k)])
            yield balanced_sampling(g, cfg, rng=sub_rng)


def is_connected(batch: SubgraphBatch, g: OverlapGraph, tau: float) -> bool:
    """Whether the valid nodes of ``batch`` form one component of the tau-graph."""
    ids = batch.valid_ids
    if len(ids) <= 1:
        return True
    sel = set(ids)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        cur = stack.pop()
        for nb, w in g.neighbors(cur).items():
            if w >= tau and nb in sel and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(sel)
