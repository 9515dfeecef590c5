"""Multi-level community hierarchies and super-graph construction.

A hierarchy is a list of graphs, level 1 being the input topology and each
higher level having one node per cluster of the level below. Level-k edges
connect clusters with at least `lam` crossing edges below (strictly more
with `lam_strict`). Detectors: Louvain (one aggregation pass per level),
Girvan-Newman (betweenness-driven splits snapshotted at geometrically spaced
component counts) and a size-preserving random perturbation of a Louvain
base.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .graphs import AttributedGraph


@dataclass
class Partition:
    """Dense cluster assignment of one level's nodes."""

    assignment: np.ndarray
    num_clusters: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be a vector")
        if a.size:
            present = np.unique(a)
            if present[0] < 0 or present[-1] >= self.num_clusters:
                raise ValueError("cluster ids out of range")
            if len(present) != self.num_clusters:
                raise ValueError("cluster ids must be dense in [0, num_clusters)")
        elif self.num_clusters != 0:
            raise ValueError("empty assignment with nonzero cluster count")
        a.flags.writeable = False
        self.assignment = a

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Renumber arbitrary labels into a dense partition (stable by label order)."""
        labels = np.asarray(labels)
        uniq, dense = np.unique(labels, return_inverse=True)
        return cls(dense.astype(np.int64), len(uniq))

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)


@dataclass
class Hierarchy:
    """Graphs G_1..G_K plus the parent maps linking consecutive levels.

    `partitions[i]` assigns nodes of `graphs[i]` (level i+1) to nodes of
    `graphs[i+1]` (level i+2); these assignments are the inter-level edges.
    """

    graphs: list
    partitions: list
    method: str = "louvain"
    lam: int = 1
    lam_strict: bool = False
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.partitions) != len(self.graphs) - 1:
            raise ValueError("need exactly K-1 partitions for K levels")
        prev = None
        for i, g in enumerate(self.graphs):
            if prev is not None and g.num_nodes >= prev:
                raise ValueError("level node counts must strictly decrease")
            prev = g.num_nodes
            if i < len(self.partitions):
                p = self.partitions[i]
                if p.assignment.shape[0] != g.num_nodes:
                    raise ValueError(f"partition {i} does not cover level {i + 1}")
                if p.num_clusters != self.graphs[i + 1].num_nodes:
                    raise ValueError(f"partition {i} disagrees with level {i + 2} size")

    @property
    def num_levels(self) -> int:
        return len(self.graphs)

    def parent_of(self, level: int) -> np.ndarray:
        """Parent cluster ids for nodes of `level` (1-based, < K)."""
        return self.partitions[level - 1].assignment

    def ancestor_matrix(self, levels_used: int | None = None) -> np.ndarray:
        """Column j = ancestor of each base node at level j+1 (column 0 = itself)."""
        k = self.num_levels if levels_used is None else levels_used
        if not 1 <= k <= self.num_levels:
            raise ValueError(f"levels_used must lie in [1, {self.num_levels}]")
        n = self.graphs[0].num_nodes
        out = np.empty((n, k), dtype=np.int64)
        out[:, 0] = np.arange(n)
        for j in range(1, k):
            out[:, j] = self.partitions[j - 1].assignment[out[:, j - 1]]
        return out

    def level_sizes(self) -> list[int]:
        return [g.num_nodes for g in self.graphs]


# ---------------------------------------------------------------------------
# modularity
# ---------------------------------------------------------------------------

def modularity(graph: AttributedGraph, partition: Partition) -> float:
    """Newman modularity Q of a flat partition on an unweighted graph."""
    m = graph.num_edges
    if m == 0:
        raise ValueError("modularity is undefined for an edgeless graph")
    a = partition.assignment
    intra = np.bincount(
        a[graph.edges[:, 0]],
        weights=(a[graph.edges[:, 0]] == a[graph.edges[:, 1]]).astype(np.float64),
        minlength=partition.num_clusters,
    )
    deg_sum = np.bincount(
        a, weights=graph.degrees().astype(np.float64), minlength=partition.num_clusters
    )
    return float(np.sum(intra / m - (deg_sum / (2.0 * m)) ** 2))


def flatten_partitions(parts: list[Partition], level: int) -> Partition:
    """Compose partitions 1..level into a flat partition of the base nodes."""
    a = parts[0].assignment
    for p in parts[1:level]:
        a = p.assignment[a]
    return Partition.from_labels(a)


# ---------------------------------------------------------------------------
# Louvain
# ---------------------------------------------------------------------------

def _louvain_local_pass(adj, self_w, order):
    """One local-moving phase on a weighted graph; returns assignments or None.

    adj: list of {neighbor: weight} (no self entries); self_w: self-loop
    weights. Ties in gain break toward the lowest community id, moves need a
    strictly positive gain, so modularity never decreases and the sweep
    terminates.
    """
    n = len(adj)
    strength = np.array(
        [sum(adj[i].values()) + 2.0 * self_w[i] for i in range(n)], dtype=np.float64
    )
    m2 = float(strength.sum())
    if m2 <= 0:
        return None
    community = np.arange(n, dtype=np.int64)
    com_tot = strength.copy()
    moved_any = False
    while True:
        moved = False
        for i in order:
            ci = community[i]
            k_i = strength[i]
            w_to = {}
            for j, w in adj[i].items():
                cj = community[j]
                w_to[cj] = w_to.get(cj, 0.0) + w
            com_tot[ci] -= k_i
            # ascending candidate order + strict improvement = lowest-id tie-break
            best_c, best_gain = ci, w_to.get(ci, 0.0) - com_tot[ci] * k_i / m2
            for c in sorted(w_to):
                if c == ci:
                    continue
                gain = w_to[c] - com_tot[c] * k_i / m2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            community[i] = best_c
            com_tot[best_c] += k_i
            if best_c != ci:
                moved = True
                moved_any = True
        if not moved:
            break
    if not moved_any or len(np.unique(community)) == n:
        return None
    return community


def _aggregate(adj, self_w, dense):
    c = int(dense.max()) + 1
    new_adj = [dict() for _ in range(c)]
    new_self = np.zeros(c, dtype=np.float64)
    for i, nbrs in enumerate(adj):
        ci = int(dense[i])
        new_self[ci] += self_w[i]
        for j, w in nbrs.items():
            if j < i:
                continue
            cj = int(dense[j])
            if ci == cj:
                new_self[ci] += w
            else:
                new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
                new_adj[cj][ci] = new_adj[cj].get(ci, 0.0) + w
    return new_adj, new_self


def louvain_partitions(graph: AttributedGraph, seed: int) -> list[Partition]:
    """Per-level cluster assignments, one Louvain aggregation pass per level."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    adj = [dict() for _ in range(graph.num_nodes)]
    for u, v in graph.edges:
        adj[int(u)][int(v)] = 1.0
        adj[int(v)][int(u)] = 1.0
    self_w = np.zeros(graph.num_nodes, dtype=np.float64)
    parts: list[Partition] = []
    while True:
        order = rng.permutation(len(adj))
        community = _louvain_local_pass(adj, self_w, order)
        if community is None:
            break
        part = Partition.from_labels(community)
        parts.append(part)
        adj, self_w = _aggregate(adj, self_w, part.assignment)
    return parts


# ---------------------------------------------------------------------------
# Girvan-Newman
# ---------------------------------------------------------------------------

def edge_betweenness(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    """Brandes edge betweenness (undirected, unweighted, halved as usual)."""
    m = len(edges)
    bet = np.zeros(m, dtype=np.float64)
    if m == 0:
        return bet
    heads = np.concatenate([edges[:, 0], edges[:, 1]])
    tails = np.concatenate([edges[:, 1], edges[:, 0]])
    eids = np.concatenate([np.arange(m), np.arange(m)])
    order = np.argsort(heads, kind="stable")
    heads, tails, eids = heads[order], tails[order], eids[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, heads + 1, 1)
    np.cumsum(indptr, out=indptr)
    for s in range(num_nodes):
        dist = np.full(num_nodes, -1, dtype=np.int64)
        sigma = np.zeros(num_nodes, dtype=np.float64)
        dist[s] = 0
        sigma[s] = 1.0
        queue = [s]
        visited = []
        head = 0
        while head < len(queue):
            v = queue[head]
            head += 1
            visited.append(v)
            for p in range(indptr[v], indptr[v + 1]):
                w = int(tails[p])
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        delta = np.zeros(num_nodes, dtype=np.float64)
        for w in reversed(visited):
            for p in range(indptr[w], indptr[w + 1]):
                v = int(tails[p])
                if dist[v] == dist[w] - 1:
                    c = sigma[v] / sigma[w] * (1.0 + delta[w])
                    bet[eids[p]] += c
                    delta[v] += c
    return bet / 2.0


def _components(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    """Connected-component labels, renumbered by smallest member id."""
    parent = np.arange(num_nodes, dtype=np.int64)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    roots = np.array([find(i) for i in range(num_nodes)], dtype=np.int64)
    return Partition.from_labels(roots).assignment


def _geometric_targets(n: int) -> list[int]:
    targets = []
    j = 1
    while True:
        t = math.ceil(n / 2**j)
        if t < 2:
            break
        if not targets or t != targets[-1]:
            targets.append(t)
        j += 1
    return targets  # descending component counts, finest first


def girvan_newman_partitions(
    graph: AttributedGraph, target_levels: int
) -> tuple[list[Partition], dict]:
    """Nested component snapshots from repeated max-betweenness edge removal.

    Snapshot component-count targets are the target_levels-1 coarsest values
    of {ceil(n/2^j)}; removing one lexicographically-smallest max-betweenness
    edge at a time, the partition is recorded the first time the component
    count reaches each target. Returned finest first, so the coarsest
    partition sits at the top level.
    """
    if target_levels < 2:
        raise ValueError("target_levels must be >= 2")
    meta: dict = {"fewer_levels": False}
    targets = _geometric_targets(graph.num_nodes)
    if len(targets) < target_levels - 1:
        meta["fewer_levels"] = True
    wanted = targets[-(target_levels - 1) :] if target_levels > 1 else []
    pending = sorted(wanted)  # chronological: small counts reached first
    edges = graph.edges.copy()
    snapshots: list[np.ndarray] = []  # coarsest first
    comp = _components(graph.num_nodes, edges)
    count = comp.max() + 1 if graph.num_nodes else 0
    while pending and pending[0] <= count:
        snapshots.append(comp)
        pending.pop(0)
    while pending and len(edges):
        bet = edge_betweenness(graph.num_nodes, edges)
        best = np.lexsort((edges[:, 1], edges[:, 0], -bet))[0]
        edges = np.delete(edges, best, axis=0)
        comp = _components(graph.num_nodes, edges)
        count = comp.max() + 1
        while pending and pending[0] <= count:
            snapshots.append(comp)
            pending.pop(0)
    # dedup identical snapshots (same component count collapses levels)
    distinct: list[np.ndarray] = []
    for snap in snapshots:
        if any(np.array_equal(snap, d) for d in distinct):
            meta["fewer_levels"] = True
            continue
        distinct.append(snap)
    # stack from finest to coarsest, mapping through the previous level
    parts: list[Partition] = []
    for snap in reversed(distinct):
        if not parts:
            parts.append(Partition.from_labels(snap))
            continue
        prev_flat = flatten_partitions(parts, len(parts))
        reps = np.zeros(prev_flat.num_clusters, dtype=np.int64)
        reps[prev_flat.assignment] = np.arange(graph.num_nodes)
        parts.append(Partition.from_labels(snap[reps]))
    parts = [p for p in parts if p.num_clusters > 0]
    return parts, meta


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_super_graph(
    lower: AttributedGraph,
    partition: Partition,
    lam: int = 1,
    lam_strict: bool = False,
) -> AttributedGraph:
    """One node per cluster; an edge where enough lower-level edges cross.

    Non-strict (default): crossing count >= lam. Strict: count > lam, the
    literal reading of the threshold rule.
    """
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    if partition.assignment.shape[0] != lower.num_nodes:
        raise ValueError("partition does not cover the lower level")
    c = partition.num_clusters
    a = partition.assignment[lower.edges[:, 0]]
    b = partition.assignment[lower.edges[:, 1]]
    cross = a != b
    lo = np.minimum(a[cross], b[cross])
    hi = np.maximum(a[cross], b[cross])
    keys, counts = np.unique(lo * c + hi, return_counts=True)
    ok = counts > lam if lam_strict else counts >= lam
    keys = keys[ok]
    super_edges = np.stack([keys // c, keys % c], axis=1)
    return AttributedGraph(c, super_edges)


def _assemble(
    graph: AttributedGraph,
    parts: list[Partition],
    method: str,
    lam: int,
    lam_strict: bool,
    seed: int,
    meta: dict,
) -> Hierarchy:
    base = AttributedGraph(graph.num_nodes, graph.edges)
    graphs = [base]
    for p in parts:
        graphs.append(build_super_graph(graphs[-1], p, lam, lam_strict))
    return Hierarchy(graphs, list(parts), method, lam, lam_strict, seed, meta)


def louvain(
    graph: AttributedGraph, seed: int, lam: int = 1, lam_strict: bool = False
) -> Hierarchy:
    """Louvain hierarchy: one level per aggregation pass."""
    if graph.num_edges == 0:
        warnings.warn("edgeless graph: hierarchy degenerates to singletons (K=1)")
        return _assemble(graph, [], "louvain", lam, lam_strict, seed, {"edgeless": True})
    parts = louvain_partitions(graph, seed)
    return _assemble(graph, parts, "louvain", lam, lam_strict, seed, {})


def girvan_newman(
    graph: AttributedGraph,
    target_levels: int,
    lam: int = 1,
    lam_strict: bool = False,
) -> Hierarchy:
    """Girvan-Newman hierarchy with geometrically spaced component snapshots."""
    parts, meta = girvan_newman_partitions(graph, target_levels)
    return _assemble(graph, parts, "girvan_newman", lam, lam_strict, 0, meta)


def randomize_hierarchy(h: Hierarchy, seed: int) -> Hierarchy:
    """Permute memberships at every level, preserving cluster sizes exactly."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    new_parts = []
    for p in h.partitions:
        perm = rng.permutation(p.assignment.shape[0])
        new_parts.append(Partition(p.assignment[perm], p.num_clusters))
    out = _assemble(h.graphs[0], new_parts, "random", h.lam, h.lam_strict, seed, dict(h.meta))
    return out


def build_hierarchy(
    graph: AttributedGraph,
    method: str = "louvain",
    lam: int = 1,
    seed: int = 0,
    lam_strict: bool = False,
    target_levels: int = 3,
) -> Hierarchy:
    """Compose the chosen detector with super-graph construction per level.

    `flat` yields the degenerate K=1 hierarchy used by ablations; `random`
    runs Louvain and then perturbs memberships.
    """
    if method == "louvain":
        return louvain(graph, seed, lam, lam_strict)
    if method == "girvan_newman":
        return girvan_newman(graph, target_levels, lam, lam_strict)
    if method == "random":
        return randomize_hierarchy(louvain(graph, seed, lam, lam_strict), seed)
    if method == "flat":
        return _assemble(graph, [], "flat", lam, lam_strict, seed, {})
    raise ValueError(f"unknown hierarchy method {method!r}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def dump_hierarchy(h: Hierarchy) -> str:
    """Text form: per level, `cluster: members...` lines plus a super-edge list."""
    lines = [
        "hcgnn-hierarchy v1",
        f"method {h.method} lambda {h.lam} strict {int(h.lam_strict)} seed {h.seed}",
        f"levels {h.num_levels}",
        f"base {h.graphs[0].num_nodes} {h.graphs[0].num_edges}",
    ]
    for i, p in enumerate(h.partitions):
        g = h.graphs[i + 1]
        lines.append(f"level {i + 2} clusters {g.num_nodes} edges {g.num_edges}")
        members = [[] for _ in range(p.num_clusters)]
        for node, c in enumerate(p.assignment):
            members[int(c)].append(node)
        for c, ms in enumerate(members):
            lines.append(f"{c}: " + " ".join(str(x) for x in ms))
        for u, v in g.edges:
            lines.append(f"{u} {v}")
    return "\n".join(lines) + "\n"


def parse_hierarchy(text: str, base_graph: AttributedGraph) -> Hierarchy:
    """Inverse of dump_hierarchy; validates against the supplied base graph."""
    lines = text.strip().split("\n")
    if lines[0] != "hcgnn-hierarchy v1":
        raise DataError("not a hierarchy file (bad magic line)")
    _, method, _, lam, _, strict, _, seed = lines[1].split()
    levels = int(lines[2].split()[1])
    _, bn, bm = lines[3].split()
    if int(bn) != base_graph.num_nodes or int(bm) != base_graph.num_edges:
        raise DataError("hierarchy file does not match the base graph")
    graphs = [AttributedGraph(base_graph.num_nodes, base_graph.edges)]
    partitions = []
    pos = 4
    for lvl in range(2, levels + 1):
        hdr = lines[pos].split()
        pos += 1
        nclusters, nedges = int(hdr[3]), int(hdr[5])
        assign = np.empty(graphs[-1].num_nodes, dtype=np.int64)
        for c in range(nclusters):
            cid, _, rest = lines[pos].partition(":")
            pos += 1
            for node in rest.split():
                assign[int(node)] = int(cid)
        edges = []
        for _ in range(nedges):
            u, v = lines[pos].split()
            pos += 1
            edges.append((int(u), int(v)))
        partitions.append(Partition(assign, nclusters))
        graphs.append(AttributedGraph(nclusters, np.array(edges, dtype=np.int64).reshape(-1, 2)))
    return Hierarchy(
        graphs, partitions, method, int(lam), bool(int(strict)), int(seed), {}
    )
