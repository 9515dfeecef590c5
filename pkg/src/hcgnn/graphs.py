"""Graph representation, dataset ingestion, synthetic generators and split samplers.

Graphs are undirected, unweighted and immutable. Edges are stored canonically
as an (m, 2) int64 array with u < v, lexicographically sorted and
deduplicated, so symmetry / no-self-loop / no-duplicate invariants hold by
construction and a full-scan validator can re-assert them cheaply.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, SamplingError


def _canonical_edges(edges, num_nodes: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise DataError(
            f"edge endpoint out of range: ids must lie in [0, {num_nodes})"
        )
    if (e[:, 0] == e[:, 1]).any():
        raise DataError("self-loops are not allowed")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    e = np.unique(np.stack([lo, hi], axis=1), axis=0) if e.size else e.reshape(0, 2)
    e.flags.writeable = False
    return e


@dataclass
class AttributedGraph:
    """Sparse undirected graph with optional dense node features and labels.

    `labels` is either an int vector of class ids or, for multi-label data,
    a {0,1} matrix with one column per target.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if self.num_nodes < 0:
            raise ValueError("num_nodes must be nonnegative")
        self.edges = _canonical_edges(self.edges, self.num_nodes)
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
                raise DataError(
                    f"feature matrix has {self.features.shape[0] if self.features.ndim == 2 else '?'}"
                    f" rows, expected {self.num_nodes}"
                )
            self.features.flags.writeable = False
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim == 1:
                lab = lab.astype(np.int64)
                if lab.shape[0] != self.num_nodes:
                    raise DataError(
                        f"label vector has {lab.shape[0]} entries, expected {self.num_nodes}"
                    )
                inferred = int(lab.max()) + 1 if lab.size else 0
                if self.num_classes is None:
                    self.num_classes = inferred
                if lab.size and (lab.min() < 0 or int(lab.max()) >= self.num_classes):
                    raise DataError("labels must lie in [0, num_classes)")
            elif lab.ndim == 2:
                lab = lab.astype(np.int64)
                if lab.shape[0] != self.num_nodes:
                    raise DataError(
                        f"label matrix has {lab.shape[0]} rows, expected {self.num_nodes}"
                    )
                if not np.isin(lab, (0, 1)).all():
                    raise DataError("multi-label matrices must be binary")
                if self.num_classes is None:
                    self.num_classes = lab.shape[1]
            else:
                raise DataError("labels must be a vector or a binary matrix")
            lab.flags.writeable = False
            self.labels = lab

    # -- basic accessors ----------------------------------------------------

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def multilabel(self) -> bool:
        return self.labels is not None and self.labels.ndim == 2

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if self.num_edges:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def adjacency_csr(self, include_self: bool = False):
        """(indices, indptr) of sorted neighbor lists, optionally closed (v in N(v))."""
        n = self.num_nodes
        heads = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        tails = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        if include_self:
            heads = np.concatenate([heads, np.arange(n, dtype=np.int64)])
            tails = np.concatenate([tails, np.arange(n, dtype=np.int64)])
        order = np.lexsort((tails, heads))
        heads, tails = heads[order], tails[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, heads + 1, 1)
        np.cumsum(indptr, out=indptr)
        return tails.astype(np.int64), indptr

    def with_edges(self, edges) -> "AttributedGraph":
        return AttributedGraph(
            self.num_nodes, edges, self.features, self.labels, self.num_classes
        )

    def validate(self) -> None:
        """Full-scan re-assertion of the structural invariants."""
        e = self.edges
        assert (e[:, 0] < e[:, 1]).all(), "edges not canonical (u < v)"
        assert len(np.unique(e, axis=0)) == len(e), "duplicate edges"
        if len(e):
            assert e.min() >= 0 and e.max() < self.num_nodes, "endpoint out of range"
        if self.features is not None:
            assert self.features.shape[0] == self.num_nodes
        if self.labels is not None and self.labels.ndim == 1 and self.labels.size:
            assert 0 <= self.labels.min() and self.labels.max() < self.num_classes


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def load_edge_list(
    path, num_nodes_hint: int | None = None, one_based: bool = False
) -> AttributedGraph:
    """Load a whitespace-separated "u v" edge file into an undirected graph.

    Duplicate and reversed edges collapse to one; self-loop lines are dropped
    (public copies of several datasets contain them). `one_based` rebases
    1-based node ids to 0-based.
    """
    path = Path(path)
    pairs = []
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 2:
                raise ParseError(path, line_no, f"expected 'u v', got {line.rstrip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(
                    path, line_no, f"non-integer endpoint in {line.rstrip()!r}"
                ) from None
            if one_based:
                u, v = u - 1, v - 1
            if u < 0 or v < 0:
                raise ParseError(path, line_no, "negative node id")
            if u == v:
                continue
            pairs.append((u, v))
    max_id = max((max(u, v) for u, v in pairs), default=-1)
    if num_nodes_hint is not None:
        if max_id >= num_nodes_hint:
            raise DataError(
                f"{path}: endpoint {max_id} >= declared node count {num_nodes_hint}"
            )
        n = num_nodes_hint
    else:
        n = max_id + 1
    return AttributedGraph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def _load_labels_file(path) -> np.ndarray:
    rows = []
    width = None
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                raise ParseError(path, line_no, f"non-integer label {line!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(path, line_no, "inconsistent label row width")
            rows.append(vals)
    if width == 1:
        return np.array([r[0] for r in rows], dtype=np.int64)
    return np.array(rows, dtype=np.int64)


def load_features_labels(
    feat_path, label_path, graph: AttributedGraph
) -> AttributedGraph:
    """Attach a headerless CSV feature matrix and/or a label file to a graph.

    Either path may be None. Feature dimension and class count are inferred.
    """
    features = graph.features
    labels = graph.labels
    if feat_path is not None:
        try:
            features = np.loadtxt(feat_path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{feat_path}: could not parse features ({exc})") from None
        if features.shape[0] != graph.num_nodes:
            raise DataError(
                f"{feat_path}: {features.shape[0]} feature rows for "
                f"{graph.num_nodes} nodes"
            )
    if label_path is not None:
        labels = _load_labels_file(label_path)
        if labels.shape[0] != graph.num_nodes:
            raise DataError(
                f"{label_path}: {labels.shape[0]} label rows for {graph.num_nodes} nodes"
            )
    return AttributedGraph(graph.num_nodes, graph.edges, features, labels)


def one_hot_features(graph: AttributedGraph) -> AttributedGraph:
    """Give a featureless graph unique one-hot identifier features (identity matrix)."""
    if graph.features is not None:
        raise ValueError("graph already has features")
    return AttributedGraph(
        graph.num_nodes,
        graph.edges,
        np.eye(graph.num_nodes, dtype=np.float64),
        graph.labels,
        graph.num_classes,
    )


def generate_grid(rows: int, cols: int) -> AttributedGraph:
    """4-neighborhood lattice with rows*cols nodes."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    pairs = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                pairs.append((v, v + 1))
            if r + 1 < rows:
                pairs.append((v, v + cols))
    return AttributedGraph(rows * cols, np.array(pairs, dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class LinkSplit:
    """Edge-level split for link prediction, with fixed sampled negatives."""

    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    residual_graph: AttributedGraph


@dataclass
class NodeSplit:
    """Disjoint train/val/test node-id sets."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    metadata: dict = field(default_factory=dict)


def _sample_negative_pairs(graph: AttributedGraph, count: int, rng) -> np.ndarray:
    n = graph.num_nodes
    total_pairs = n * (n - 1) // 2
    if total_pairs - graph.num_edges <= 0:
        raise SamplingError("graph is complete: no negative pairs exist")
    existing = set()
    for u, v in graph.edges:
        existing.add(int(u) * n + int(v))
    out = []
    attempts = 0
    cap = 100 * max(count, 1)
    while len(out) < count:
        if attempts >= cap:
            raise SamplingError(
                f"could not sample {count} negative pairs in {cap} attempts"
            )
        attempts += 1
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        if u > v:
            u, v = v, u
        key = u * n + v
        if key in existing:
            continue
        existing.add(key)
        out.append((u, v))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_links(graph: AttributedGraph, seed: int) -> LinkSplit:
    """10%/10% of edges to val/test, the rest to train; sampled non-edges as negatives.

    Negatives are pairwise distinct and disjoint from E; |val_neg| = |val_pos|,
    |test_neg| = |test_pos|, |train_neg| = 2 |train_pos|. The residual graph
    contains exactly the train positives.
    """
    m = graph.num_edges
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    # an impossible negative pool fails before the size gate so a complete
    # graph reports the true cause
    if graph.num_nodes * (graph.num_nodes - 1) // 2 - m <= 0:
        raise SamplingError("graph is complete: no negative pairs exist")
    if m < 10:
        raise DataError(f"need at least 10 edges to split links, got {m}")
    order = rng.permutation(m)
    k = m // 10
    val_pos = graph.edges[order[:k]]
    test_pos = graph.edges[order[k : 2 * k]]
    train_pos = graph.edges[order[2 * k :]]
    negs = _sample_negative_pairs(graph, k + k + 2 * len(train_pos), rng)
    val_neg = negs[:k]
    test_neg = negs[k : 2 * k]
    train_neg = negs[2 * k :]
    residual = graph.with_edges(train_pos)
    return LinkSplit(train_pos, val_pos, test_pos, train_neg, val_neg, test_neg, residual)


def sample_semi_supervised(
    graph: AttributedGraph,
    per_class: int = 20,
    val_size: int = 500,
    test_size: int = 1000,
    seed: int = 0,
) -> NodeSplit:
    """Per-class train nodes plus fixed-size val/test pools from the remainder.

    When a class is smaller than `per_class` the whole class is taken; when the
    remainder cannot fill val+test the two shrink proportionally. Both
    fallbacks are flagged in split metadata.
    """
    if graph.labels is None or graph.labels.ndim != 1:
        raise DataError("semi-supervised split needs single-label node classes")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    labels = graph.labels
    meta: dict = {"shrunk": False}
    train = []
    for c in range(graph.num_classes):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            raise DataError(f"class {c} has no nodes")
        take = min(per_class, len(members))
        if take < per_class:
            meta["shrunk"] = True
        train.extend(rng.choice(members, size=take, replace=False))
    train = np.sort(np.array(train, dtype=np.int64))
    rest = np.setdiff1d(np.arange(graph.num_nodes), train)
    rest = rest[rng.permutation(len(rest))]
    want = val_size + test_size
    if len(rest) < want:
        ratio = len(rest) / want
        val_size = int(val_size * ratio)
        test_size = len(rest) - val_size
        meta["shrunk"] = True
    meta["val_size"] = val_size
    meta["test_size"] = test_size
    val = np.sort(rest[:val_size])
    test = np.sort(rest[val_size : val_size + test_size])
    return NodeSplit(train, val, test, meta)


def sample_supervised_fraction(
    graph: AttributedGraph, train_frac: float = 0.8, seed: int = 0
) -> NodeSplit:
    """train_frac of labeled nodes to train, the remainder halved into val/test."""
    if graph.labels is None:
        raise DataError("supervised split needs labels")
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    n = graph.num_nodes
    if n < 10:
        raise DataError("supervised split needs at least 10 labeled nodes")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(n)
    n_train = int(train_frac * n)
    rest = order[n_train:]
    half = len(rest) // 2
    return NodeSplit(
        np.sort(order[:n_train]),
        np.sort(rest[:half]),
        np.sort(rest[half:]),
        {"shrunk": False},
    )


def remove_edges(
    graph: AttributedGraph, fraction: float, mode: str = "global", seed: int = 0
) -> AttributedGraph:
    """Sparsify a graph by dropping edges; isolated nodes remain.

    global: floor(fraction * |E|) edges removed uniformly at random.
    per-node: nodes visited in random order, each node loses
    floor(fraction * original_degree) incident edges, counting edges already
    removed by earlier nodes against the quota and never re-removing.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    if fraction == 0.0:
        return graph
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    m = graph.num_edges
    if mode == "global":
        n_remove = int(fraction * m)
        keep = np.ones(m, dtype=bool)
        keep[rng.choice(m, size=n_remove, replace=False)] = False
        return graph.with_edges(graph.edges[keep])
    if mode != "per-node":
        raise ValueError(f"unknown removal mode {mode!r}")
    deg0 = graph.degrees()
    incident: list[list[int]] = [[] for _ in range(graph.num_nodes)]
    for idx, (u, v) in enumerate(graph.edges):
        incident[int(u)].append(idx)
        incident[int(v)].append(idx)
    removed = np.zeros(m, dtype=bool)
    removed_count = np.zeros(graph.num_nodes, dtype=np.int64)
    for v in rng.permutation(graph.num_nodes):
        quota = int(fraction * deg0[v])
        need = quota - int(removed_count[v])
        if need <= 0:
            continue
        alive = [e for e in incident[v] if not removed[e]]
        if not alive:
            continue
        chosen = rng.choice(len(alive), size=min(need, len(alive)), replace=False)
        for ci in np.atleast_1d(chosen):
            e = alive[int(ci)]
            removed[e] = True
            removed_count[graph.edges[e, 0]] += 1
            removed_count[graph.edges[e, 1]] += 1
    return graph.with_edges(graph.edges[~removed])


# ---------------------------------------------------------------------------
# multi-graph manifests (inductive datasets)
# ---------------------------------------------------------------------------

@dataclass
class GraphManifestEntry:
    graph: AttributedGraph
    split: str  # train | val | test


def load_manifest(path) -> list[GraphManifestEntry]:
    """Load a multi-graph dataset manifest.

    CSV rows: edge_file, feat_file, label_file, split. '-' marks a missing
    feature or label file; paths resolve relative to the manifest.
    """
    path = Path(path)
    entries = []
    with path.open() as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) != 4:
                raise ParseError(path, line_no, "expected 4 columns")
            edge_f, feat_f, label_f, split = (c.strip() for c in row)
            if split not in ("train", "val", "test"):
                raise ParseError(path, line_no, f"bad split column {split!r}")
            g = load_edge_list(path.parent / edge_f)
            g = load_features_labels(
                path.parent / feat_f if feat_f != "-" else None,
                path.parent / label_f if label_f != "-" else None,
                g,
            )
            entries.append(GraphManifestEntry(g, split))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries
