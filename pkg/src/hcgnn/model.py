"""Hierarchical message-passing layer stack over a community hierarchy.

Each layer runs three phases: bottom-up averaging of child states into their
parent clusters, within-level closed-neighborhood mean aggregation on every
level's graph, and top-down attention that fuses a base node's ancestor
chain back into its own embedding. Hidden layers end in ReLU; the final
layer emits row-wise L2-normalized embeddings (the normalization cannot map
negative coordinates into [0, 1]; rows simply have unit norm).

The trained forward pass applies the shared within-level weight before the
averaging kernels; both operators are linear over rows, so this matches the
aggregate-then-project definition exactly while keeping wide one-hot inputs
cheap. The definition-order operations are exposed separately for reference
use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    SegmentIndex,
    Tensor,
    add,
    concat_rows,
    constant,
    gather_rows,
    l2_normalize_rows,
    leaky_relu,
    load_arrays,
    matmul,
    mul,
    relu,
    reshape,
    save_arrays,
    segment_mean,
    segment_weighted_sum,
    slice_rows,
    softmax_rows,
)
from .errors import DataError, ShapeError
from .graphs import AttributedGraph
from .hierarchy import Hierarchy


def glorot(rng, rows: int, cols: int) -> Tensor:
    limit = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)


@dataclass
class HcGnnLayer:
    """One layer's parameters, shared across hierarchy levels.

    `w_within_levels` replaces the shared within-level weight with one matrix
    per level when per-level weights are enabled.
    """

    w_within: Tensor | None
    w_topdown: Tensor
    att: Tensor
    w_within_levels: list | None = None

    def within_weight(self, level_index: int) -> Tensor:
        if self.w_within_levels is not None:
            return self.w_within_levels[level_index]
        return self.w_within

    def parameters(self) -> list:
        ws = self.w_within_levels if self.w_within_levels is not None else [self.w_within]
        return [*ws, self.w_topdown, self.att]


def closed_neighborhood_index(graph: AttributedGraph) -> SegmentIndex:
    indices, indptr = graph.adjacency_csr(include_self=True)
    return SegmentIndex(indices, indptr, graph.num_nodes)


def children_index(assignment: np.ndarray, num_clusters: int) -> SegmentIndex:
    order = np.argsort(assignment, kind="stable").astype(np.int64)
    counts = np.bincount(assignment, minlength=num_clusters)
    indptr = np.zeros(num_clusters + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return SegmentIndex(order, indptr, len(assignment))


class HcGnnModel:
    """L stacked layers bound to one hierarchy; embeddings have unit L2 norm."""

    def __init__(
        self,
        hierarchy: Hierarchy,
        input_dim: int,
        num_layers: int,
        dim: int = 32,
        seed: int = 0,
        per_level_weights: bool = False,
        levels_used: int | None = None,
    ):
        if num_layers not in (1, 2, 3):
            raise ValueError("num_layers must be 1, 2 or 3")
        self.hierarchy = hierarchy
        self.input_dim = input_dim
        self.embed_dim = dim
        self.num_layers = num_layers
        self.levels_used = levels_used
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        k = hierarchy.num_levels
        self.layers: list[HcGnnLayer] = []
        for li in range(num_layers):
            d_in = input_dim if li == 0 else dim
            if per_level_weights:
                within = None
                per_level = [glorot(rng, d_in, dim) for _ in range(k)]
            else:
                within = glorot(rng, d_in, dim)
                per_level = None
            self.layers.append(
                HcGnnLayer(within, glorot(rng, dim, dim), glorot(rng, 2 * dim, 1), per_level)
            )
        # static aggregation structure, shared by every forward pass
        self._nbr = [closed_neighborhood_index(g) for g in hierarchy.graphs]
        self._children = [
            children_index(p.assignment, hierarchy.graphs[i + 1].num_nodes)
            for i, p in enumerate(hierarchy.partitions)
        ]
        self._child_counts = [idx.counts().astype(np.float64) for idx in self._children]

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def active_levels(self, levels_used: int | None = None) -> int:
        """Requested level count, clamped to the hierarchy's depth."""
        k = levels_used if levels_used is not None else self.levels_used
        if k is None:
            return self.hierarchy.num_levels
        if k < 1:
            raise ValueError("levels_used must be >= 1")
        return min(k, self.hierarchy.num_levels)


# ---------------------------------------------------------------------------
# propagation phases (definition order, used as reference and by tests)
# ---------------------------------------------------------------------------

def init_states(model: HcGnnModel, graph: AttributedGraph) -> list[Tensor]:
    """Level-1 rows are the node features; cluster rows start at zero."""
    if graph.features is None:
        raise ShapeError("graph has no features; add one-hot identifiers first")
    h = model.hierarchy
    if graph.num_nodes != h.graphs[0].num_nodes:
        raise ShapeError("hierarchy was built over a different node count")
    if graph.features.shape[1] != model.input_dim:
        raise ShapeError(
            f"model expects {model.input_dim}-dim features, got {graph.features.shape[1]}"
        )
    states = [constant(graph.features)]
    for g in h.graphs[1:]:
        states.append(constant(np.zeros((g.num_nodes, graph.features.shape[1]))))
    return states


def bottom_up(model: HcGnnModel, states: list[Tensor], level_k: int) -> Tensor:
    """Eq.-style child averaging: (sum of children + self) / (delta + 1) at level_k >= 2."""
    if level_k == 1:
        return states[0]
    idx = model._children[level_k - 2]
    delta = model._child_counts[level_k - 2]
    if (delta == 0).any():
        raise DataError(f"level {level_k} has a cluster without children")
    child_mean = segment_mean(states[level_k - 2], idx)
    w_child = constant((delta / (delta + 1.0))[:, None])
    w_self = constant((1.0 / (delta + 1.0))[:, None])
    return add(mul(child_mean, w_child), mul(states[level_k - 1], w_self))


def within_level(model: HcGnnModel, layer: HcGnnLayer, a_k: Tensor, level_k: int) -> Tensor:
    """Closed-neighborhood mean followed by the layer's within-level map."""
    return matmul(segment_mean(a_k, model._nbr[level_k - 1]), layer.within_weight(level_k - 1))


def top_down(
    model: HcGnnModel,
    layer: HcGnnLayer,
    b_levels: list[Tensor],
    is_last: bool,
    levels_used: int | None = None,
    capture: dict | None = None,
) -> Tensor:
    """Attention over each base node's ancestor chain plus itself.

    Scores are additive (leaky-relu of att . [W b_self || W b_other]),
    softmax-normalized over the chain, and the aggregate is the
    attention-weighted sum mapped by the top-down weight. Hidden layers apply
    ReLU, the final layer row-wise L2 normalization.
    """
    ku = model.active_levels(levels_used)
    n = model.hierarchy.graphs[0].num_nodes
    d = model.embed_dim
    b_cat = concat_rows(b_levels[:ku])
    t = matmul(b_cat, layer.w_topdown)
    anc = model.hierarchy.ancestor_matrix(ku)
    offsets = np.cumsum([0] + [g.num_nodes for g in model.hierarchy.graphs[:ku]])
    flat_idx = (anc + offsets[None, :ku]).ravel()
    s_self = matmul(t, slice_rows(layer.att, 0, d))
    s_other = matmul(t, slice_rows(layer.att, d, 2 * d))
    scores = add(slice_rows(s_self, 0, n), reshape(gather_rows(s_other, flat_idx), n, ku))
    alpha = softmax_rows(leaky_relu(scores, 0.2))
    if capture is not None:
        capture.setdefault("alpha", []).append(alpha)
    seg = SegmentIndex(
        flat_idx, np.arange(0, (n + 1) * ku, ku, dtype=np.int64), int(offsets[ku])
    )
    agg = segment_weighted_sum(t, seg, reshape(alpha, n * ku, 1))
    return l2_normalize_rows(agg) if is_last else relu(agg)


# ---------------------------------------------------------------------------
# full forward passes
# ---------------------------------------------------------------------------

def forward(
    model: HcGnnModel,
    graph: AttributedGraph,
    levels_used: int | None = None,
    capture: dict | None = None,
) -> tuple[Tensor, list[Tensor]]:
    """Run all layers; returns base-node embeddings and per-level cluster embeddings."""
    ku = model.active_levels(levels_used)
    states = init_states(model, graph)[:ku]
    z = None
    for li, layer in enumerate(model.layers):
        is_last = li == model.num_layers - 1
        projected = [
            matmul(states[k], layer.within_weight(k)) for k in range(ku)
        ]
        lifted = [projected[0]]
        for k in range(2, ku + 1):
            idx = model._children[k - 2]
            delta = model._child_counts[k - 2]
            if (delta == 0).any():
                raise DataError(f"level {k} has a cluster without children")
            child_mean = segment_mean(projected[k - 2], idx)
            lifted.append(
                add(
                    mul(child_mean, constant((delta / (delta + 1.0))[:, None])),
                    mul(projected[k - 1], constant((1.0 / (delta + 1.0))[:, None])),
                )
            )
        b_levels = [segment_mean(lifted[k], model._nbr[k]) for k in range(ku)]
        z = top_down(model, layer, b_levels, is_last, ku, capture)
        states = [z] + b_levels[1:]
    z_clusters = [l2_normalize_rows(b) for b in states[1:]]
    return z, z_clusters


def flat_baseline_forward(graph: AttributedGraph, layers: list[HcGnnLayer]) -> np.ndarray:
    """Numpy-only reference: within-level stack on the observed graph alone.

    Matches forward() on a one-level hierarchy with shared weights; kept free
    of the autodiff path so the equivalence check is meaningful.
    """
    if graph.features is None:
        raise ShapeError("graph has no features")
    nbr_indices, nbr_indptr = graph.adjacency_csr(include_self=True)
    counts = np.diff(nbr_indptr).astype(np.float64)
    x = graph.features
    for li, layer in enumerate(layers):
        sums = np.zeros((graph.num_nodes, x.shape[1]))
        np.add.at(sums, np.repeat(np.arange(graph.num_nodes), np.diff(nbr_indptr)), x[nbr_indices])
        mean = sums / counts[:, None]
        b = mean @ layer.within_weight(0).data
        t = b @ layer.w_topdown.data
        if li == len(layers) - 1:
            norms = np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
            x = t / norms
        else:
            x = np.maximum(t, 0.0)
    return x


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(model: HcGnnModel, prefix) -> None:
    """Write `<prefix>.ckpt` (parameters) and `<prefix>.json` (manifest)."""
    prefix = Path(prefix)
    save_arrays(prefix.with_suffix(".ckpt"), [p.data for p in model.parameters()])
    manifest = {
        "num_layers": model.num_layers,
        "dim": model.embed_dim,
        "input_dim": model.input_dim,
        "hierarchy_method": model.hierarchy.method,
        "lambda": model.hierarchy.lam,
        "lambda_strict": model.hierarchy.lam_strict,
        "seed": model.hierarchy.seed,
        "levels": model.hierarchy.num_levels,
    }
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_model_params(model: HcGnnModel, prefix) -> None:
    arrays = load_arrays(Path(prefix).with_suffix(".ckpt"))
    params = model.parameters()
    if len(arrays) != len(params):
        raise DataError("checkpoint parameter count mismatch")
    for p, a in zip(params, arrays):
        if p.data.shape != a.shape:
            raise DataError(f"checkpoint shape {a.shape} vs model {p.data.shape}")
        p.data = a
