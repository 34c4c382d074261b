import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supscene.overlap_graph import OverlapGraph
from supscene.sampler import (PAD_ID, SamplerConfig, SamplingError, anchor_expansion,
                              balanced_sampling, batch_count, epoch_schedule, make_batch,
                              positive_ratio)


def random_graph(rng, n=None, density=None, scene="s"):
    n = int(rng.integers(1, 31)) if n is None else n
    density = rng.uniform(0.05, 0.6) if density is None else density
    edges = [(i, j, float(rng.uniform(0.01, 1.0)))
             for i in range(n) for j in range(i + 1, n) if rng.uniform() < density]
    return OverlapGraph.from_edges(scene, [f"{scene}_{k}" for k in range(n)], edges)


def connected_in_batch(batch, tau):
    """Independent check on the batch's own overlap matrix."""
    m = int(batch.valid_mask.sum())
    if m <= 1:
        return True
    adj = batch.overlap[:m, :m] >= tau
    seen = np.zeros(m, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero(adj[i] & ~seen):
                seen[j] = True
                nxt.append(j)
        frontier = nxt
    return bool(seen.all())


def check_batch_invariants(batch, g, n):
    m = int(batch.valid_mask.sum())
    assert batch.n == n
    assert list(batch.valid_mask) == [True] * m + [False] * (n - m)
    assert all(nid == PAD_ID for nid in batch.node_ids[m:])
    assert len(set(batch.node_ids[:m])) == m
    off = ~np.eye(n, dtype=bool)
    pad = ~batch.valid_mask
    assert np.all(batch.overlap[pad][:, :][off[pad]] == 0)
    assert np.all(batch.overlap[:, pad][off[:, pad]] == 0)
    for a in range(m):
        for b in range(m):
            expect = 1.0 if a == b else g.weight(batch.node_ids[a], batch.node_ids[b])
            assert batch.overlap[a, b] == expect


# --- anchor expansion ---------------------------------------------------------


def test_anchor_in_a_clique_takes_all_three():
    g = OverlapGraph.from_edges("s", ["a", "b", "c"], [(0, 1, 0.5), (0, 2, 0.5), (1, 2, 0.5)])
    b = anchor_expansion(g, "a", SamplerConfig(subgraph_size=3))
    assert b.node_ids == ["a", "b", "c"] and b.valid_mask.all()


def test_isolated_anchor_is_padded():
    g = OverlapGraph.from_edges("s", ["a", "b"], [])
    b = anchor_expansion(g, "a", SamplerConfig(subgraph_size=4))
    assert b.node_ids == ["a", PAD_ID, PAD_ID, PAD_ID]
    assert list(b.valid_mask) == [True, False, False, False]


def test_chain_is_cut_by_the_threshold():
    g = OverlapGraph.from_edges("s", ["a", "b", "c"], [(0, 1, 0.3), (1, 2, 0.1)])
    b = anchor_expansion(g, "a", SamplerConfig(subgraph_size=3, tau_iou=0.25))
    assert b.node_ids == ["a", "b", PAD_ID]


def test_bfs_prefers_heavier_edges_then_lower_ids():
    g = OverlapGraph.from_edges("s", ["a", "b", "c", "d", "e"],
                                [(0, 1, 0.3), (0, 2, 0.9), (0, 3, 0.3), (2, 4, 0.95)])
    b = anchor_expansion(g, "a", SamplerConfig(subgraph_size=3))
    # breadth first: all of a's neighbors before e
    assert b.node_ids == ["a", "c", "b"]


def test_unknown_anchor():
    g = OverlapGraph.from_edges("s", ["a"], [])
    with pytest.raises(KeyError):
        anchor_expansion(g, "zz", SamplerConfig())


def test_anchor_batches_are_connected_on_1000_random_graphs():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        g = random_graph(rng)
        cfg = SamplerConfig(subgraph_size=int(rng.integers(2, 12)), tau_iou=float(rng.uniform(0, 0.8)))
        anchor = g.node_ids[int(rng.integers(g.num_nodes))]
        b = anchor_expansion(g, anchor, cfg)
        assert b.node_ids[0] == anchor
        assert connected_in_batch(b, cfg.tau_iou), trial
        check_batch_invariants(b, g, cfg.n)


# --- balanced sampling --------------------------------------------------------


def test_ratio_already_at_rho_needs_no_swaps():
    # path a-b-c with both edges positive, plus a far node: any 3-set containing
    # the path has ratio 2/3; pick rho so the start is already optimal
    g = OverlapGraph.from_edges("s", ["a", "b", "c"], [(0, 1, 0.5), (1, 2, 0.5)])
    cfg = SamplerConfig(subgraph_size=3, rho=2 / 3)
    b = balanced_sampling(g, cfg)
    assert b.swap_trace == [pytest.approx(0.0)]
    assert sorted(b.node_ids) == ["a", "b", "c"]


def test_complete_graph_ratio_is_one():
    n = 7
    g = OverlapGraph.from_edges("s", [str(k) for k in range(n)],
                                [(i, j, 0.8) for i in range(n) for j in range(i + 1, n)])
    for seed in range(5):
        b = balanced_sampling(g, SamplerConfig(subgraph_size=4, seed=seed))
        m = int(b.valid_mask.sum())
        assert positive_ratio(b.overlap[:m, :m], 0.25) == 1.0
        assert len(b.swap_trace) == 1  # nothing can improve


def test_six_node_graph_gap_never_grows():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, n=6, density=0.5)
        b = balanced_sampling(g, SamplerConfig(subgraph_size=4, rho=0.5, seed=seed))
        m = int(b.valid_mask.sum())
        final = abs(positive_ratio(b.overlap[:m, :m], 0.25) - 0.5)
        assert final <= b.swap_trace[0] + 1e-15
        assert final == pytest.approx(b.swap_trace[-1])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_swap_trace_is_non_increasing(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n=int(rng.integers(2, 25)))
    cfg = SamplerConfig(subgraph_size=int(rng.integers(2, 10)), rho=float(rng.uniform(0.05, 0.95)),
                        seed=seed)
    b = balanced_sampling(g, cfg)
    assert all(b2 < b1 for b1, b2 in zip(b.swap_trace, b.swap_trace[1:]))
    check_batch_invariants(b, g, cfg.n)


def test_balanced_needs_two_nodes():
    g = OverlapGraph.from_edges("s", ["a"], [])
    with pytest.raises(SamplingError):
        balanced_sampling(g, SamplerConfig())


# --- batch counts and epochs ---------------------------------------------------


@pytest.mark.parametrize("N,n,T", [(10, 4, 3), (3, 4, 1), (4, 4, 2), (16, 16, 2), (1, 16, 1)])
def test_batch_count(N, n, T):
    assert batch_count(N, n) == T


def test_epoch_batch_total_is_the_sum_over_scenes():
    a = random_graph(np.random.default_rng(1), n=9, scene="a")   # 9 // 4 + 1 = 3
    b = random_graph(np.random.default_rng(2), n=2, scene="b")   # 1
    batches = list(epoch_schedule([a, b], SamplerConfig(subgraph_size=4)))
    assert len(batches) == 4
    assert sorted(x.scene_id for x in batches) == ["a", "a", "a", "b"]


def test_single_image_scene():
    g = OverlapGraph.from_edges("one", ["only"], [])
    for strategy in ("anchor", "balanced"):
        (b,) = list(epoch_schedule([g], SamplerConfig(subgraph_size=4), strategy))
        assert int(b.valid_mask.sum()) == 1


@pytest.mark.parametrize("strategy", ["anchor", "balanced"])
def test_epoch_schedule_is_deterministic(strategy):
    rng = np.random.default_rng(5)
    gs = [random_graph(rng, n=int(rng.integers(5, 20)), scene=f"s{k}") for k in range(4)]
    cfg = SamplerConfig(subgraph_size=5, seed=9)

    def run(epoch):
        return [(b.node_ids, b.overlap.tobytes()) for b in epoch_schedule(gs, cfg, strategy, epoch)]

    assert run(0) == run(0)
    assert run(0) != run(1)


def test_epoch_anchors_are_distinct_per_scene():
    g = random_graph(np.random.default_rng(8), n=12, density=0.0)
    anchors = [b.node_ids[0] for b in epoch_schedule([g], SamplerConfig(subgraph_size=2))]
    assert len(anchors) == 7 and len(set(anchors)) == 7


def test_schedule_errors():
    with pytest.raises(SamplingError):
        list(epoch_schedule([], SamplerConfig()))
    g = random_graph(np.random.default_rng(0), n=3)
    with pytest.raises(SamplingError):
        list(epoch_schedule([g], SamplerConfig(), "random"))


def test_config_validation():
    with pytest.raises(ValueError, match="subgraph_size"):
        SamplerConfig(subgraph_size=1)
    with pytest.raises(ValueError):
        SamplerConfig(rho=1.0)
    with pytest.raises(ValueError):
        SamplerConfig(tau_iou=1.5)


def test_make_batch_overflow():
    g = random_graph(np.random.default_rng(0), n=5)
    with pytest.raises(SamplingError):
        make_batch(g, g.node_ids, 3)
