import numpy as np
import pytest

from tagrec.graph import (
    TAG,
    TAG_TAG,
    TARGET_ITEM,
    USER,
    EdgeType,
    GraphBuilder,
    MetapathSchema,
    NodeId,
    source_item,
)
from tagrec.model import ModelConfig, ModelParams
from tagrec.training import InteractionSplits

SRC = source_item(1)
U_R = EdgeType(USER, TARGET_ITEM)
R_T = EdgeType(TARGET_ITEM, TAG)
U_Q = EdgeType(USER, SRC)
Q_T = EdgeType(SRC, TAG)


def build_mini_dataset(n_users=12, n_items=16, n_tags=12, n_src=10, seed=0):
    """Two planted tag clusters; users prefer one or both; user 11 is cold."""
    rng = np.random.default_rng(seed)
    cluster_tags = {0: list(range(6)), 1: list(range(6, 12))}
    item_cluster = {i: i % 2 for i in range(n_items)}
    src_cluster = {q: q % 2 for q in range(n_src)}
    user_clusters = {}
    for u in range(n_users):
        user_clusters[u] = [0] if u < 5 else [1] if u < 10 else [0, 1]

    schemas = [
        MetapathSchema.from_edges(0, [U_R, R_T]),
        MetapathSchema.from_edges(1, [U_Q, Q_T]),
    ]
    counts = {USER: n_users, TARGET_ITEM: n_items, TAG: n_tags, SRC: n_src}
    b = GraphBuilder(counts, [U_R, R_T, U_Q, Q_T, TAG_TAG], schemas)

    for c, tags in cluster_tags.items():
        for i in range(len(tags)):
            b.add_edge(TAG_TAG, NodeId(TAG, tags[i]), NodeId(TAG, tags[(i + 1) % len(tags)]))
    for i in range(n_items):
        pool = cluster_tags[item_cluster[i]]
        for t in rng.choice(pool, size=2, replace=False):
            b.add_edge(R_T, NodeId(TARGET_ITEM, i), NodeId(TAG, int(t)))
    for q in range(n_src):
        pool = cluster_tags[src_cluster[q]]
        for t in rng.choice(pool, size=2, replace=False):
            b.add_edge(Q_T, NodeId(SRC, q), NodeId(TAG, int(t)))

    train, validation, test = [], [], []
    for u in range(n_users):
        pool = [i for i in range(n_items) if item_cluster[i] in user_clusters[u]]
        picks = rng.choice(pool, size=5, replace=False)
        if u == 11:  # cold-start: target history entirely held out
            test.extend((u, int(i)) for i in picks[:2])
        else:
            train.extend((u, int(i)) for i in picks[:3])
            validation.append((u, int(picks[3])))
            test.append((u, int(picks[4])))
        src_pool_own = [q for q in range(n_src) if src_cluster[q] in user_clusters[u]]
        src_pool_noise = [q for q in range(n_src) if src_cluster[q] not in user_clusters[u]]
        chosen = list(rng.choice(src_pool_own, size=2, replace=False))
        if src_pool_noise:
            chosen += list(rng.choice(src_pool_noise, size=2, replace=False))
        for q in chosen:
            b.add_edge(U_Q, NodeId(USER, u), NodeId(SRC, int(q)))

    for u, i in train:
        b.add_edge(U_R, NodeId(USER, u), NodeId(TARGET_ITEM, i))
    graph = b.freeze()
    return graph, InteractionSplits(train=train, validation=validation, test=test)


@pytest.fixture(scope="session")
def mini_dataset():
    return build_mini_dataset()


@pytest.fixture(scope="session")
def mini_config():
    return ModelConfig(dim=6, layers=2, k_max=3, gamma=6.0, neighbor_cap=16, l2_weight=1e-4)


@pytest.fixture()
def mini_params(mini_dataset, mini_config):
    graph, _ = mini_dataset
    return ModelParams.init(
        graph.node_count(USER), graph.node_count(TARGET_ITEM), graph.node_count(TAG),
        mini_config.dim, seed=1,
    )
