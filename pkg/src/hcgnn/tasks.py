"""Training loops, decoders and metrics for node classification, link
prediction, community detection and multi-graph inductive classification.

Every run is a pure function of (inputs, seed): full-batch Adam, a fixed
epoch budget, and best-validation model selection. Epoch e metrics are
measured on the weights entering epoch e, so the reported test figure comes
from exactly the weights that achieved the best validation score.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError
from .graphs import AttributedGraph, GraphManifestEntry, LinkSplit, NodeSplit, one_hot_features
from .hierarchy import build_hierarchy
from .model import HcGnnModel, forward, glorot
from .optim import Adam


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _f1(tp: float, fp: float, fn: float) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def micro_macro_f1(pred, truth, mask=None) -> tuple[float, float]:
    """Micro- and macro-averaged F1. Accepts class-id vectors or binary matrices."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if mask is not None:
        pred, truth = pred[mask], truth[mask]
    if pred.shape != truth.shape:
        raise ValueError("prediction/truth shape mismatch")
    if pred.ndim == 2:  # multi-label binary matrices
        tp = float(((pred == 1) & (truth == 1)).sum())
        fp = float(((pred == 1) & (truth == 0)).sum())
        fn = float(((pred == 0) & (truth == 1)).sum())
        per_class = [
            _f1(
                float(((pred[:, c] == 1) & (truth[:, c] == 1)).sum()),
                float(((pred[:, c] == 1) & (truth[:, c] == 0)).sum()),
                float(((pred[:, c] == 0) & (truth[:, c] == 1)).sum()),
            )
            for c in range(truth.shape[1])
        ]
        return _f1(tp, fp, fn), float(np.mean(per_class))
    classes = np.union1d(np.unique(truth), np.unique(pred))
    tp_tot = fp_tot = fn_tot = 0.0
    per_class = []
    for c in classes:
        tp = float(((pred == c) & (truth == c)).sum())
        fp = float(((pred == c) & (truth != c)).sum())
        fn = float(((pred != c) & (truth == c)).sum())
        tp_tot, fp_tot, fn_tot = tp_tot + tp, fp_tot + fp, fn_tot + fn
        per_class.append(_f1(tp, fp, fn))
    return _f1(tp_tot, fp_tot, fn_tot), float(np.mean(per_class))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic with tie midranks."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: needs both positive and negative labels")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def nmi(pred, truth, mask=None) -> float:
    """Normalized mutual information with arithmetic-mean normalization."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if mask is not None:
        pred, truth = pred[mask], truth[mask]
    n = len(truth)
    if n == 0:
        raise ValueError("NMI of empty sets")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    cont = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(cont, (pi, ti), 1.0)
    pxy = cont / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz])).sum())
    hx = float(-(px[px > 0] * np.log(px[px > 0])).sum())
    hy = float(-(py[py > 0] * np.log(py[py > 0])).sum())
    if hx == 0.0 and hy == 0.0:
        return 1.0
    if mi <= 1e-15:
        return 0.0
    return 2.0 * mi / (hx + hy)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    """Per-epoch history plus the test metrics at the best-validation epoch."""

    task: str
    seed: int
    epochs: int
    train_loss: list
    val_metric: list
    test_metric_history: list
    selected_epoch: int
    test_metrics: dict
    wall_clock_sec: float
    metadata: dict = field(default_factory=dict)

    def primary_metric(self) -> str:
        return {"node-class": "micro_f1", "inductive": "micro_f1",
                "link-pred": "auc", "community": "nmi"}[self.task]

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "task": self.task,
            "seed": self.seed,
            "epochs": self.epochs,
            "train_loss": self.train_loss,
            "val_metric": self.val_metric,
            "test_metric_history": self.test_metric_history,
            "selected_epoch": self.selected_epoch,
            "test_metrics": self.test_metrics,
            "metadata": self.metadata,
        }
        if include_timing:
            out["wall_clock_sec"] = self.wall_clock_sec
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def replay_selection(self) -> None:
        """Re-derive the selected epoch from the stored history and re-check it."""
        best = int(np.argmax(self.val_metric))
        assert best == self.selected_epoch, "selected epoch is not the validation argmax"
        assert self.test_metrics[self.primary_metric()] == self.test_metric_history[best]


def _finish(task, seed, epochs, losses, vals, tests, metas, t0, metadata) -> TrainReport:
    best = int(np.argmax(vals))
    report = TrainReport(
        task=task,
        seed=seed,
        epochs=epochs,
        train_loss=[float(x) for x in losses],
        val_metric=[float(x) for x in vals],
        test_metric_history=[float(x) for x in tests],
        selected_epoch=best,
        test_metrics=metas[best],
        wall_clock_sec=time.perf_counter() - t0,
        metadata=metadata,
    )
    report.replay_selection()
    return report


class _Head:
    """Linear classification head (d -> num_classes) appended after z."""

    def __init__(self, dim: int, num_classes: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7001]))
        self.w = glorot(rng, dim, num_classes)
        self.b = ad.Tensor(np.zeros((1, num_classes)), requires_grad=True)

    def __call__(self, z: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(z, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


def _ensure_features(graph: AttributedGraph) -> AttributedGraph:
    return graph if graph.features is not None else one_hot_features(graph)


# ---------------------------------------------------------------------------
# node-level training
# ---------------------------------------------------------------------------

def _classification_run(
    task: str,
    model: HcGnnModel,
    graph: AttributedGraph,
    split: NodeSplit,
    epochs: int,
    lr: float,
    seed: int,
    levels_used: int | None = None,
) -> TrainReport:
    if graph.labels is None:
        raise DataError(f"{task} needs labels")
    if len(split.train) == 0:
        raise ValueError("empty train mask")
    graph = _ensure_features(graph)
    t0 = time.perf_counter()
    head = _Head(model.embed_dim, graph.num_classes, seed)
    opt = Adam(model.parameters() + head.parameters(), lr=lr)
    labels = graph.labels
    losses, vals, tests, metas = [], [], [], []
    for _ in range(epochs):
        z, _ = forward(model, graph, levels_used)
        logits = head(z)
        loss = ad.cross_entropy(logits, labels, split.train)
        pred = logits.data.argmax(axis=1)
        val_micro, _ = micro_macro_f1(pred, labels, split.val)
        test_micro, test_macro = micro_macro_f1(pred, labels, split.test)
        accuracy = float((pred[split.test] == labels[split.test]).mean())
        assert abs(test_micro - accuracy) < 1e-12, "micro-F1 must equal accuracy"
        entry = {"micro_f1": test_micro, "macro_f1": test_macro}
        if task == "community":
            entry["nmi"] = nmi(pred, labels, split.test)
            val_stat = nmi(pred, labels, split.val)
            test_stat = entry["nmi"]
        else:
            val_stat, test_stat = val_micro, test_micro
        losses.append(loss.item())
        vals.append(val_stat)
        tests.append(test_stat)
        metas.append(entry)
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    metadata = {"split": {k: int(len(getattr(split, k))) for k in ("train", "val", "test")}}
    metadata.update(split.metadata)
    return _finish(task, seed, epochs, losses, vals, tests, metas, t0, metadata)


def train_node_classification(
    model: HcGnnModel,
    graph: AttributedGraph,
    split: NodeSplit,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    levels_used: int | None = None,
) -> TrainReport:
    return _classification_run("node-class", model, graph, split, epochs, lr, seed, levels_used)


def train_community_detection(
    model: HcGnnModel,
    graph: AttributedGraph,
    split: NodeSplit,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    levels_used: int | None = None,
) -> TrainReport:
    return _classification_run("community", model, graph, split, epochs, lr, seed, levels_used)


# ---------------------------------------------------------------------------
# link prediction
# ---------------------------------------------------------------------------

def _pair_scores(z: ad.Tensor, pairs: np.ndarray) -> ad.Tensor:
    ones = ad.constant(np.ones((z.shape[1], 1)))
    zu = ad.gather_rows(z, pairs[:, 0])
    zv = ad.gather_rows(z, pairs[:, 1])
    return ad.matmul(ad.mul(zu, zv), ones)


def train_link_prediction(
    model: HcGnnModel,
    graph: AttributedGraph,
    split: LinkSplit,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    levels_used: int | None = None,
) -> TrainReport:
    """Inner-product decoder with logistic loss on the residual graph.

    Message passing and the hierarchy see training edges only; the held-out
    positives are asserted absent from both before training starts.
    """
    for name in ("train_pos", "val_pos", "test_pos", "train_neg", "val_neg", "test_neg"):
        if len(getattr(split, name)) == 0:
            raise ValueError(f"empty split set {name}")
    if split.residual_graph.num_nodes != graph.num_nodes:
        raise ValueError("split was built over a different graph")
    residual = _ensure_features(split.residual_graph)
    held_out = {(int(u), int(v)) for u, v in np.vstack([split.val_pos, split.test_pos])}
    assert not held_out & residual.edge_set(), "held-out edges leak into the residual graph"
    assert not held_out & model.hierarchy.graphs[0].edge_set(), "held-out edges leak into the hierarchy"
    t0 = time.perf_counter()
    opt = Adam(model.parameters(), lr=lr)
    train_pairs = np.vstack([split.train_pos, split.train_neg])
    train_labels = np.concatenate(
        [np.ones(len(split.train_pos)), np.zeros(len(split.train_neg))]
    )
    val_pairs = np.vstack([split.val_pos, split.val_neg])
    val_labels = np.concatenate([np.ones(len(split.val_pos)), np.zeros(len(split.val_neg))])
    test_pairs = np.vstack([split.test_pos, split.test_neg])
    test_labels = np.concatenate([np.ones(len(split.test_pos)), np.zeros(len(split.test_neg))])
    losses, vals, tests, metas = [], [], [], []
    for _ in range(epochs):
        z, _ = forward(model, residual, levels_used)
        scores = _pair_scores(z, train_pairs)
        loss = ad.bce_with_logits(scores, train_labels)

        def pairwise(pairs):
            return np.einsum("ij,ij->i", z.data[pairs[:, 0]], z.data[pairs[:, 1]])

        val_auc = auc(pairwise(val_pairs), val_labels)
        test_auc = auc(pairwise(test_pairs), test_labels)
        losses.append(loss.item())
        vals.append(val_auc)
        tests.append(test_auc)
        metas.append({"auc": test_auc})
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    metadata = {
        "split": {
            "train_pos": int(len(split.train_pos)),
            "val_pos": int(len(split.val_pos)),
            "test_pos": int(len(split.test_pos)),
        }
    }
    return _finish("link-pred", seed, epochs, losses, vals, tests, metas, t0, metadata)


# ---------------------------------------------------------------------------
# inductive multi-graph training
# ---------------------------------------------------------------------------

def train_inductive(
    model_cfg: dict,
    entries: list[GraphManifestEntry],
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
) -> TrainReport:
    """Train shared layer weights across graphs; hierarchies are per graph.

    Each epoch sweeps the training graphs round-robin with one full-batch
    update per graph; held-out graphs are scored on all their nodes.
    """
    if len(entries) < 2:
        raise ValueError("inductive training needs at least 2 graphs")
    train_e = [e for e in entries if e.split == "train"]
    val_e = [e for e in entries if e.split == "val"]
    test_e = [e for e in entries if e.split == "test"]
    if not train_e or not (val_e or test_e):
        raise ValueError("manifest needs train graphs and at least one held-out graph")
    val_e = val_e or test_e
    test_e = test_e or val_e
    graphs = [e.graph for e in entries]
    if any(g.features is None for g in graphs):
        raise DataError("inductive training needs shared node features on every graph")
    if any(g.labels is None for g in graphs):
        raise DataError("inductive training needs labels on every graph")
    dims = {g.features.shape[1] for g in graphs}
    if len(dims) != 1:
        raise DataError("feature dimension differs across manifest graphs")
    multilabel = graphs[0].multilabel
    n_classes = max(g.num_classes for g in graphs)
    t0 = time.perf_counter()
    hiers = {
        id(e): build_hierarchy(
            e.graph,
            model_cfg.get("hierarchy_method", "louvain"),
            lam=model_cfg.get("lam", 1),
            seed=seed,
            lam_strict=model_cfg.get("lam_strict", False),
            target_levels=model_cfg.get("target_levels", 3),
        )
        for e in entries
    }
    dim = model_cfg.get("dim", 32)
    num_layers = model_cfg.get("num_layers", 2)
    shared = HcGnnModel(hiers[id(train_e[0])], dims.pop(), num_layers, dim, seed)
    models = {}
    for e in entries:
        m = HcGnnModel(hiers[id(e)], shared.input_dim, num_layers, dim, seed)
        m.layers = shared.layers  # weights shared, structure per graph
        models[id(e)] = m
    head = _Head(dim, n_classes, seed)
    opt = Adam(shared.parameters() + head.parameters(), lr=lr)

    def predict(entry):
        z, _ = forward(models[id(entry)], entry.graph)
        logits = head(z)
        if multilabel:
            return (logits.data > 0).astype(np.int64)
        return logits.data.argmax(axis=1)

    def score(entry_list):
        micros, macros = [], []
        for e in entry_list:
            pred = predict(e)
            mi, ma = micro_macro_f1(pred, e.graph.labels)
            micros.append(mi)
            macros.append(ma)
        return float(np.mean(micros)), float(np.mean(macros))

    losses, vals, tests, metas = [], [], [], []
    for _ in range(epochs):
        epoch_loss = 0.0
        for e in train_e:
            z, _ = forward(models[id(e)], e.graph)
            logits = head(z)
            if multilabel:
                flat = ad.reshape(logits, logits.shape[0] * logits.shape[1], 1)
                loss = ad.bce_with_logits(flat, e.graph.labels.ravel())
            else:
                loss = ad.cross_entropy(logits, e.graph.labels)
            epoch_loss += loss.item()
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
        val_micro, _ = score(val_e)
        test_micro, test_macro = score(test_e)
        losses.append(epoch_loss / len(train_e))
        vals.append(val_micro)
        tests.append(test_micro)
        metas.append({"micro_f1": test_micro, "macro_f1": test_macro})
    metadata = {
        "graphs": {"train": len(train_e), "val": len(val_e), "test": len(test_e)},
        "degenerate_single_label": bool(n_classes <= 1),
    }
    return _finish("inductive", seed, epochs, losses, vals, tests, metas, t0, metadata)
