"""Hierarchy detectors, modularity, super-graph construction, serialization.

Independent oracles: networkx for modularity and edge betweenness, explicit
set-partition enumeration for the max-modularity ground truth, and a naive
double loop for crossing counts.
"""

import warnings

import networkx as nx
import numpy as np
import pytest

from hcgnn.graphs import AttributedGraph, generate_grid
from hcgnn.hierarchy import (
    Hierarchy,
    Partition,
    build_hierarchy,
    build_super_graph,
    dump_hierarchy,
    edge_betweenness,
    flatten_partitions,
    girvan_newman,
    louvain,
    modularity,
    parse_hierarchy,
    randomize_hierarchy,
)


def two_cliques_bridge():
    edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
             (4, 5), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7),
             (3, 4)]
    return AttributedGraph(8, edges)


def barbell():
    return AttributedGraph(6, [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)])


def to_nx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.num_nodes))
    G.add_edges_from(map(tuple, g.edges))
    return G


def set_partitions(items):
    """All partitions of a list (Bell-number enumeration)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [smaller[i] + [first]] + smaller[i + 1 :]
        yield [[first]] + smaller


def partition_from_blocks(blocks, n):
    assign = np.zeros(n, dtype=np.int64)
    for cid, block in enumerate(blocks):
        for node in block:
            assign[node] = cid
    return Partition.from_labels(assign)


def brute_force_best_modularity(g):
    best = -1.0
    for blocks in set_partitions(list(range(g.num_nodes))):
        q = modularity(g, partition_from_blocks(blocks, g.num_nodes))
        best = max(best, q)
    return best


def random_graph(rng, n, p):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return AttributedGraph(n, pairs)


# ---------------------------------------------------------------------------
# modularity
# ---------------------------------------------------------------------------

def test_modularity_single_cluster_is_zero():
    g = AttributedGraph(2, [(0, 1)])
    assert modularity(g, Partition(np.zeros(2, dtype=np.int64), 1)) == pytest.approx(0.0)


def test_modularity_two_cliques_value():
    # frozen from direct evaluation of the Q formula: 24/26 - 2*(13/26)^2 = 11/26
    g = two_cliques_bridge()
    p = Partition(np.array([0, 0, 0, 0, 1, 1, 1, 1]), 2)
    assert modularity(g, p) == pytest.approx(11 / 26)


def test_modularity_singletons_negative():
    g = two_cliques_bridge()
    p = Partition(np.arange(8), 8)
    deg = g.degrees().astype(float)
    expected = -float((deg**2).sum()) / (4.0 * g.num_edges**2)
    assert modularity(g, p) == pytest.approx(expected)
    assert modularity(g, p) < 0


def test_modularity_edgeless_undefined():
    g = AttributedGraph(3, [])
    with pytest.raises(ValueError):
        modularity(g, Partition(np.zeros(3, dtype=np.int64), 1))


def test_modularity_matches_networkx_on_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(25):
        g = random_graph(rng, int(rng.integers(4, 10)), 0.5)
        if g.num_edges == 0:
            continue
        k = int(rng.integers(1, 4))
        assign = rng.integers(0, k, g.num_nodes)
        p = Partition.from_labels(assign)
        blocks = [set(np.flatnonzero(p.assignment == c)) for c in range(p.num_clusters)]
        expected = nx.algorithms.community.modularity(to_nx(g), blocks)
        assert modularity(g, p) == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------------------
# louvain
# ---------------------------------------------------------------------------

def test_louvain_two_cliques_found():
    h = louvain(two_cliques_bridge(), seed=0)
    assert h.num_levels >= 2
    top = flatten_partitions(h.partitions, len(h.partitions))
    # brute-force optimum over all partitions of 8 nodes is the two cliques
    left = set(top.assignment[:4])
    right = set(top.assignment[4:])
    assert len(left) == 1 and len(right) == 1 and left != right


def test_louvain_triangle_covers_all_nodes():
    g = AttributedGraph(3, [(0, 1), (1, 2), (0, 2)])
    h = louvain(g, seed=1)
    for i, p in enumerate(h.partitions):
        assert p.assignment.shape[0] == h.graphs[i].num_nodes
        assert p.sizes().sum() == h.graphs[i].num_nodes


def test_louvain_deterministic():
    g = generate_grid(6, 6)
    h1 = louvain(g, seed=5)
    h2 = louvain(g, seed=5)
    assert h1.num_levels == h2.num_levels
    for p1, p2 in zip(h1.partitions, h2.partitions):
        np.testing.assert_array_equal(p1.assignment, p2.assignment)


def test_louvain_edgeless_warns_flat():
    g = AttributedGraph(4, [])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        h = louvain(g, seed=0)
    assert h.num_levels == 1
    assert any("edgeless" in str(w.message) for w in caught)


def test_louvain_modularity_nondecreasing_and_coarsening():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g = random_graph(rng, 24, 0.15)
        if g.num_edges < 2:
            continue
        h = louvain(g, seed=int(rng.integers(1 << 16)))
        sizes = h.level_sizes()
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        prev_q = -1.0
        for lvl in range(1, len(h.partitions) + 1):
            q = modularity(h.graphs[0], flatten_partitions(h.partitions, lvl))
            assert q >= prev_q - 1e-12
            prev_q = q


def test_louvain_near_bruteforce_on_small_corpus():
    rng = np.random.default_rng(123)
    checked = 0
    for _ in range(12):
        g = random_graph(rng, int(rng.integers(4, 8)), 0.45)
        if g.num_edges == 0:
            continue
        h = louvain(g, seed=3)
        if h.partitions:
            q = modularity(h.graphs[0], flatten_partitions(h.partitions, len(h.partitions)))
        else:
            q = modularity(g, Partition(np.arange(g.num_nodes), g.num_nodes))
        best = brute_force_best_modularity(g)
        assert q >= 0.9 * best - 1e-12
        checked += 1
    assert checked >= 5


# ---------------------------------------------------------------------------
# super graphs
# ---------------------------------------------------------------------------

def test_super_graph_single_crossing():
    lower = AttributedGraph(4, [(0, 1), (1, 2), (2, 3)])
    p = Partition(np.array([0, 0, 1, 1]), 2)
    sg = build_super_graph(lower, p, lam=1)
    assert sg.num_nodes == 2 and sg.edge_set() == {(0, 1)}


def test_super_graph_threshold_two():
    lower = AttributedGraph(4, [(0, 1), (1, 2), (2, 3)])
    p = Partition(np.array([0, 0, 1, 1]), 2)
    assert build_super_graph(lower, p, lam=2).num_edges == 0


def test_super_graph_strict_reading():
    lower = AttributedGraph(4, [(0, 1), (1, 2), (2, 3)])
    p = Partition(np.array([0, 0, 1, 1]), 2)
    assert build_super_graph(lower, p, lam=1, lam_strict=True).num_edges == 0


def test_super_graph_triangle():
    # 3 clusters of 2 nodes, two crossing edges per cluster pair
    edges = [(0, 2), (1, 3), (2, 4), (3, 5), (0, 4), (1, 5)]
    lower = AttributedGraph(6, edges)
    p = Partition(np.array([0, 0, 1, 1, 2, 2]), 3)
    sg = build_super_graph(lower, p, lam=2)
    assert sg.edge_set() == {(0, 1), (0, 2), (1, 2)}


def test_super_graph_lambda_validated():
    with pytest.raises(ValueError):
        build_super_graph(AttributedGraph(2, [(0, 1)]), Partition(np.array([0, 1]), 2), lam=0)


def test_super_graph_crossings_match_double_loop():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(3, 13))
        g = random_graph(rng, n, 0.4)
        k = int(rng.integers(1, max(2, n // 2 + 1)))
        p = Partition.from_labels(rng.integers(0, k, n))
        for lam in (1, 2, 3):
            sg = build_super_graph(g, p, lam=lam)
            counts = {}
            for u, v in g.edges:  # brute force double loop over edges
                a, b = p.assignment[u], p.assignment[v]
                if a != b:
                    key = (min(a, b), max(a, b))
                    counts[key] = counts.get(key, 0) + 1
            expected = {k_ for k_, c in counts.items() if c >= lam}
            assert sg.edge_set() == expected


# ---------------------------------------------------------------------------
# girvan-newman
# ---------------------------------------------------------------------------

def test_edge_betweenness_matches_networkx():
    rng = np.random.default_rng(5)
    for _ in range(15):
        g = random_graph(rng, int(rng.integers(4, 12)), 0.4)
        if g.num_edges == 0:
            continue
        mine = edge_betweenness(g.num_nodes, g.edges)
        ref = nx.edge_betweenness_centrality(to_nx(g), normalized=False)
        for (u, v), val in zip(map(tuple, g.edges), mine):
            assert val == pytest.approx(ref[(u, v)] if (u, v) in ref else ref[(v, u)])


def test_girvan_newman_barbell_splits_at_bridge():
    # the bridge has maximal betweenness (9.0 by path enumeration), so the
    # first removal separates the triangles
    g = barbell()
    bet = edge_betweenness(g.num_nodes, g.edges)
    bridge_idx = list(map(tuple, g.edges)).index((2, 3))
    assert bet[bridge_idx] == max(bet)
    h = girvan_newman(g, target_levels=2)
    assert h.num_levels == 2
    p = h.partitions[0]
    assert p.num_clusters == 2
    assert len(set(p.assignment[:3])) == 1
    assert len(set(p.assignment[3:])) == 1


def test_girvan_newman_disconnected_components():
    g = AttributedGraph(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    h = girvan_newman(g, target_levels=2)
    p = h.partitions[0]
    assert p.num_clusters == 2
    assert set(p.assignment[:3]) != set(p.assignment[3:])


def test_girvan_newman_path3():
    g = AttributedGraph(3, [(0, 1), (1, 2)])
    h = girvan_newman(g, target_levels=2)
    # betweenness ties on both edges; lexicographic rule removes (0, 1)
    p = h.partitions[0]
    assert p.num_clusters == 2
    assert p.assignment[1] == p.assignment[2] != p.assignment[0]


def test_girvan_newman_unreachable_levels_flagged():
    g = AttributedGraph(2, [(0, 1)])
    h = girvan_newman(g, target_levels=4)
    assert h.meta["fewer_levels"]
    assert h.num_levels < 4


def test_girvan_newman_nested_levels():
    g = generate_grid(4, 4)
    h = girvan_newman(g, target_levels=3)
    sizes = h.level_sizes()
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


# ---------------------------------------------------------------------------
# randomization
# ---------------------------------------------------------------------------

def test_randomize_preserves_size_profile():
    h = louvain(two_cliques_bridge(), seed=0)
    r = randomize_hierarchy(h, seed=9)
    for p, q in zip(h.partitions, r.partitions):
        np.testing.assert_array_equal(np.sort(p.sizes()), np.sort(q.sizes()))
    assert r.method == "random"


def test_randomize_single_cluster_unchanged():
    g = AttributedGraph(3, [(0, 1), (1, 2), (0, 2)])
    h = Hierarchy(
        [AttributedGraph(3, g.edges), AttributedGraph(1, [])],
        [Partition(np.zeros(3, dtype=np.int64), 1)],
    )
    r = randomize_hierarchy(h, seed=4)
    np.testing.assert_array_equal(r.partitions[0].assignment, [0, 0, 0])


def test_randomize_keep_fraction_matches_hypergeometric():
    # closed form: P(node keeps its cluster) = s_{c(node)} / n, so the
    # expected kept fraction is sum(s_c^2) / n^2
    sizes = np.array([3, 2])
    n = sizes.sum()
    assign = np.repeat(np.arange(2), sizes).astype(np.int64)
    base = Hierarchy(
        [AttributedGraph(5, [(0, 1), (1, 2), (3, 4), (2, 3)]), AttributedGraph(2, [(0, 1)])],
        [Partition(assign, 2)],
    )
    expected = float((sizes**2).sum()) / n**2
    kept = [
        float(np.mean(randomize_hierarchy(base, seed=s).partitions[0].assignment == assign))
        for s in range(1000)
    ]
    assert np.mean(kept) == pytest.approx(expected, rel=0.05)


# ---------------------------------------------------------------------------
# build_hierarchy and serialization
# ---------------------------------------------------------------------------

def test_build_hierarchy_grid_louvain():
    h = build_hierarchy(generate_grid(20, 20), "louvain", lam=1, seed=0)
    assert h.num_levels >= 2
    sizes = h.level_sizes()
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_build_hierarchy_flat():
    h = build_hierarchy(generate_grid(3, 3), "flat")
    assert h.num_levels == 1 and h.partitions == []


def test_build_hierarchy_random_composition():
    g = generate_grid(6, 6)
    base = build_hierarchy(g, "louvain", seed=2)
    rand = build_hierarchy(g, "random", seed=2)
    assert rand.num_levels == base.num_levels
    for p, q in zip(base.partitions, rand.partitions):
        np.testing.assert_array_equal(np.sort(p.sizes()), np.sort(q.sizes()))


def test_ancestor_matrix_chain_length():
    h = build_hierarchy(generate_grid(8, 8), "louvain", seed=0)
    anc = h.ancestor_matrix()
    assert anc.shape == (64, h.num_levels)
    np.testing.assert_array_equal(anc[:, 0], np.arange(64))
    for j in range(1, h.num_levels):
        assert anc[:, j].max() < h.graphs[j].num_nodes


def test_serialization_roundtrip_exact():
    g = generate_grid(6, 6)
    h = build_hierarchy(g, "louvain", lam=1, seed=3)
    text = dump_hierarchy(h)
    back = parse_hierarchy(text, g)
    assert back.num_levels == h.num_levels
    assert back.method == h.method and back.lam == h.lam and back.seed == h.seed
    for p, q in zip(h.partitions, back.partitions):
        np.testing.assert_array_equal(p.assignment, q.assignment)
    for a, b in zip(h.graphs, back.graphs):
        np.testing.assert_array_equal(a.edges, b.edges)
    assert dump_hierarchy(back) == text


def test_parse_rejects_wrong_base():
    h = build_hierarchy(generate_grid(4, 4), "louvain", seed=0)
    text = dump_hierarchy(h)
    from hcgnn.errors import DataError

    with pytest.raises(DataError):
        parse_hierarchy(text, generate_grid(3, 3))
