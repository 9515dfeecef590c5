"""Hierarchical community-aware graph neural network.

Builds multi-level community hierarchies over a graph, propagates messages
bottom-up, within each level, and top-down with attention, and trains the
resulting embeddings for node classification, link prediction and community
detection.
"""

from .autodiff import (
    SegmentIndex,
    Tensor,
    backward,
    bce_with_logits,
    cross_entropy,
    grad_check,
    l2_normalize_rows,
    leaky_relu,
    log_softmax_rows,
    matmul,
    relu,
    segment_mean,
    segment_weighted_sum,
    softmax_rows,
)
from .graphs import (
    AttributedGraph,
    LinkSplit,
    NodeSplit,
    generate_grid,
    load_edge_list,
    load_features_labels,
    load_manifest,
    one_hot_features,
    remove_edges,
    sample_semi_supervised,
    sample_supervised_fraction,
    split_links,
)
from .hierarchy import (
    Hierarchy,
    Partition,
    build_hierarchy,
    build_super_graph,
    dump_hierarchy,
    girvan_newman,
    louvain,
    modularity,
    parse_hierarchy,
    randomize_hierarchy,
)
from .model import HcGnnModel, flat_baseline_forward, forward
from .optim import Adam, adam_step
from .tasks import (
    TrainReport,
    auc,
    micro_macro_f1,
    nmi,
    train_community_detection,
    train_inductive,
    train_link_prediction,
    train_node_classification,
)

__version__ = "0.1.0"
