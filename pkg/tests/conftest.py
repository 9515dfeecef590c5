import numpy as np
import pytest

from hcgnn.graphs import generate_grid, one_hot_features, split_links
from hcgnn.hierarchy import build_hierarchy
from hcgnn.model import HcGnnModel
from hcgnn.tasks import train_link_prediction

ACCEPTANCE_SEEDS = tuple(range(10))


def run_grid_link_prediction(method: str, num_layers: int, seeds=ACCEPTANCE_SEEDS):
    aucs = []
    for seed in seeds:
        g = one_hot_features(generate_grid(20, 20))
        split = split_links(g, seed)
        hier = build_hierarchy(split.residual_graph, method, seed=seed)
        model = HcGnnModel(hier, g.num_nodes, num_layers, dim=32, seed=seed)
        report = train_link_prediction(model, g, split, epochs=200, seed=seed)
        aucs.append(report.test_metrics["auc"])
    return np.asarray(aucs)


@pytest.fixture(scope="session")
def grid_lp_model_aucs():
    return run_grid_link_prediction("louvain", 3)


@pytest.fixture(scope="session")
def grid_lp_flat_aucs():
    return run_grid_link_prediction("flat", 3)
