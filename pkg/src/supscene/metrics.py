"""Retrieval index and ranking metrics.

Recall@k divides by the number of *all* relevant database images, so a query
with four relevant images and one hit in the top k scores 0.25. AP@k is
normalized by ``min(|relevant|, k)``; NDCG@k uses the raw overlap as gain.
Queries without any relevant image are left out of the means and counted
separately.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .overlap_graph import OverlapGraph

DEFAULT_KS = (25, 50, 100)


class SearchError(ValueError):
    pass


class RetrievalIndex:
    """Unit-norm descriptors with an id for each row, searched by cosine similarity."""

    def __init__(self, ids: Sequence[str], descriptors: np.ndarray):
        descriptors = np.asarray(descriptors, dtype=np.float64)
        if descriptors.ndim != 2 or descriptors.shape[0] != len(ids):
            raise ValueError(f"{len(ids)} ids for descriptor matrix {descriptors.shape}")
        if len(set(ids)) != len(ids):
            raise ValueError("index ids must be unique")
        # rows are kept in ascending id order so a stable sort breaks ties by id
        order = np.argsort(np.array(ids, dtype=object), kind="stable")
        self.ids = [ids[i] for i in order]
        self.descriptors = descriptors[order]
        self._row = {nid: r for r, nid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, image_id: str) -> int:
        return self._row[image_id]

    def vector(self, image_id: str) -> np.ndarray:
        return self.descriptors[self._row[image_id]]


def _top_k(sims: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties by lower index (i.e. by id)."""
    k = min(k, sims.size)
    if k == 0:
        return np.empty(0, dtype=int)
    if k < sims.size:
        thresh = np.partition(sims, sims.size - k)[sims.size - k]
        cand = np.flatnonzero(sims >= thresh)
    else:
        cand = np.arange(sims.size)
    order = np.argsort(-sims[cand], kind="stable")
    return cand[order[:k]]


def search_scored(index: RetrievalIndex, query: np.ndarray, k: int,
                  query_id: str | None = None) -> list[tuple[str, float]]:
    """Top-k (id, similarity) by descending cosine, ties broken by ascending id.

    The query's own row is excluded: by id when ``query_id`` is given,
    otherwise any row bit-identical to the query vector.
    """
    if k < 1:
        raise SearchError("k must be >= 1")
    if len(index) == 0:
        raise SearchError("cannot search an empty index")
    q = np.asarray(query, dtype=np.float64)
    sims = index.descriptors @ q
    if query_id is not None:
        if query_id in index._row:
            sims[index._row[query_id]] = -np.inf
    else:
        same = np.all(index.descriptors == q, axis=1)
        sims[same] = -np.inf
    top = _top_k(sims, k)
    return [(index.ids[r], float(sims[r])) for r in top if np.isfinite(sims[r])]


def search(index: RetrievalIndex, query: np.ndarray, k: int,
           query_id: str | None = None) -> list[str]:
    return [nid for nid, _ in search_scored(index, query, k, query_id)]


def rank_all(index: RetrievalIndex, k: int, query_ids: Iterable[str] | None = None,
             chunk: int = 512) -> dict[str, list[tuple[str, float]]]:
    """Retrieve the top k for every indexed image (or ``query_ids``) against the index."""
    if k < 1:
        raise SearchError("k must be >= 1")
    if len(index) == 0:
        raise SearchError("cannot search an empty index")
    qids = list(index.ids if query_ids is None else query_ids)
    out: dict[str, list[tuple[str, float]]] = {}
    for start in range(0, len(qids), chunk):
        block = qids[start:start + chunk]
        rows = np.array([index.row(q) for q in block])
        sims = index.descriptors[rows] @ index.descriptors.T
        sims[np.arange(len(block)), rows] = -np.inf
        for qi, qid in enumerate(block):
            top = _top_k(sims[qi], k)
            out[qid] = [(index.ids[r], float(sims[qi, r])) for r in top if np.isfinite(sims[qi, r])]
    return out


@dataclass
class RelevanceOracle:
    """Relevant database ids per query with graded relevance (overlap)."""

    relevant: dict[str, dict[str, float]]

    def __post_init__(self):
        for q, rel in self.relevant.items():
            if q in rel:
                raise ValueError(f"query {q!r} listed as relevant to itself")

    @classmethod
    def from_graphs(cls, graphs: Iterable[OverlapGraph], tau: float = 0.25) -> "RelevanceOracle":
        rel: dict[str, dict[str, float]] = {}
        for g in graphs:
            for nid in g.node_ids:
                rel[nid] = {m: w for m, w in g.neighbors(nid).items() if w >= tau}
        return cls(rel)

    def get(self, query_id: str) -> dict[str, float]:
        return self.relevant.get(query_id, {})


def _ids(ranking: Sequence) -> list[str]:
    return [r[0] if isinstance(r, tuple) else r for r in ranking]


def _per_query(rankings: Mapping[str, Sequence], oracle: RelevanceOracle, fn) -> tuple[float, int]:
    scores = []
    skipped = 0
    for q, ranking in rankings.items():
        rel = oracle.get(q)
        if not rel:
            skipped += 1
            continue
        scores.append(fn(_ids(ranking), rel))
    return (float(np.mean(scores)) if scores else math.nan), skipped


def recall_at_k(rankings: Mapping[str, Sequence], oracle: RelevanceOracle, k: int) -> float:
    def one(ids, rel):
        return sum(1 for i in ids[:k] if i in rel) / len(rel)
    return _per_query(rankings, oracle, one)[0]


def average_precision_at_k(ids: Sequence[str], rel: Mapping[str, float], k: int) -> float:
    hits = 0
    acc = 0.0
    for r, nid in enumerate(ids[:k], start=1):
        if nid in rel:
            hits += 1
            acc += hits / r
    return acc / min(len(rel), k)


def map_at_k(rankings: Mapping[str, Sequence], oracle: RelevanceOracle, k: int) -> float:
    return _per_query(rankings, oracle, lambda ids, rel: average_precision_at_k(ids, rel, k))[0]


def ndcg_one(ids: Sequence[str], rel: Mapping[str, float], k: int) -> float:
    dcg = sum(rel.get(nid, 0.0) / math.log2(r + 1) for r, nid in enumerate(ids[:k], start=1))
    ideal = sorted(rel.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(r + 1) for r, g in enumerate(ideal, start=1))
    return dcg / idcg if idcg > 0 else 0.0


def ndcg_at_k(rankings: Mapping[str, Sequence], oracle: RelevanceOracle, k: int) -> float:
    return _per_query(rankings, oracle, lambda ids, rel: ndcg_one(ids, rel, k))[0]


def evaluate(rankings: Mapping[str, Sequence], oracle: RelevanceOracle,
             ks: Iterable[int] = DEFAULT_KS) -> dict:
    """Recall/mAP/NDCG at each k plus query counts, as a JSON-ready dict."""
    ks = sorted(set(int(k) for k in ks))
    report: dict = {}
    for k in ks:
        report[f"recall@{k}"] = recall_at_k(rankings, oracle, k)
        report[f"map@{k}"] = map_at_k(rankings, oracle, k)
        report[f"ndcg@{k}"] = ndcg_at_k(rankings, oracle, k)
    skipped = sum(1 for q in rankings if not oracle.get(q))
    report["queries"] = len(rankings) - skipped
    report["skipped_queries"] = skipped
    return report


def write_report(report: dict, path: str | os.PathLike) -> None:
    """JSON report; NaN (no qualifying query) becomes null."""
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in report.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def pair_list(rankings: Mapping[str, Sequence[tuple[str, float]]], k: int
              ) -> list[tuple[str, str, int, float]]:
    """Unordered-deduplicated (query, match, rank, similarity) from top-k rankings."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seen = set()
    out = []
    for q, ranking in rankings.items():
        for r, (m, sim) in enumerate(ranking[:k], start=1):
            key = (q, m) if q < m else (m, q)
            if key in seen:
                continue
            seen.add(key)
            out.append((q, m, r, sim))
    return out


def export_pairs(rankings: Mapping[str, Sequence[tuple[str, float]]], k: int,
                 path: str | os.PathLike) -> int:
    """Write ``query_id match_id rank similarity`` lines; returns the line count."""
    pairs = pair_list(rankings, k)
    with open(path, "w", encoding="utf-8") as fh:
        for q, m, r, sim in pairs:
            fh.write(f"{q} {m} {r} {sim!r}\n")
    return len(pairs)
