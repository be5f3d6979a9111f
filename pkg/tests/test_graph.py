import numpy as np
import pytest

from tagrec.graph import (
    TAG,
    TAG_TAG,
    TARGET_ITEM,
    USER,
    EdgeType,
    GraphBuilder,
    GraphSchemaError,
    GraphStateError,
    GraphValidationError,
    MetapathSchema,
    NodeId,
    NodeType,
    bridge,
    metapath_neighbors,
    metapath_tag_indices,
    source_item,
)

U_R = EdgeType(USER, TARGET_ITEM)
R_T = EdgeType(TARGET_ITEM, TAG)


def two_hop_schema(schema_id=0):
    return MetapathSchema.from_edges(schema_id, [U_R, R_T])


def small_builder(users=4, items=4, tags=8):
    counts = {USER: users, TARGET_ITEM: items, TAG: tags}
    return GraphBuilder(counts, [U_R, R_T, TAG_TAG], [two_hop_schema()])


def node(node_type, index):
    return NodeId(node_type, index)


class TestNodeAndEdgeTypes:
    def test_parse_round_trip(self):
        for nt in (USER, TARGET_ITEM, TAG, source_item(1), bridge(2)):
            assert NodeType.parse(nt.name) == nt

    def test_bad_kinds_rejected(self):
        with pytest.raises(GraphSchemaError):
            NodeType("poi")
        with pytest.raises(GraphSchemaError):
            NodeType("user", 1)
        with pytest.raises(GraphSchemaError):
            NodeType("source_item")
        with pytest.raises(GraphSchemaError):
            NodeType.parse("source_item_x")

    def test_tag_tag_must_be_symmetric(self):
        with pytest.raises(GraphSchemaError):
            EdgeType(TAG, TAG, symmetric=False)
        with pytest.raises(GraphSchemaError):
            EdgeType(USER, TAG, symmetric=True)

    def test_metapath_chain_validation(self):
        with pytest.raises(GraphSchemaError):
            MetapathSchema.from_edges(0, [R_T])  # does not start at user
        with pytest.raises(GraphSchemaError):
            MetapathSchema.from_edges(0, [U_R])  # does not end at tag
        schema = two_hop_schema()
        assert schema.node_types == (USER, TARGET_ITEM, TAG)


class TestBuilder:
    def test_symmetric_edge_queryable_both_ways(self):
        b = small_builder()
        b.add_edge(TAG_TAG, node(TAG, 1), node(TAG, 2))
        g = b.freeze()
        assert node(TAG, 1) in g.neighbors(node(TAG, 2), TAG_TAG)
        assert node(TAG, 2) in g.neighbors(node(TAG, 1), TAG_TAG)

    def test_duplicate_edges_collapse(self):
        b = small_builder()
        b.add_edge(U_R, node(USER, 1), node(TARGET_ITEM, 1))
        b.add_edge(U_R, node(USER, 1), node(TARGET_ITEM, 1))
        g = b.freeze()
        assert g.edge_count(U_R) == 1

    def test_type_mismatch_is_schema_error(self):
        b = small_builder()
        with pytest.raises(GraphSchemaError):
            b.add_edge(U_R, node(TAG, 0), node(TARGET_ITEM, 1))

    def test_add_after_freeze_is_state_error(self):
        b = small_builder()
        b.freeze()
        with pytest.raises(GraphStateError):
            b.add_edge(U_R, node(USER, 0), node(TARGET_ITEM, 0))

    def test_self_loop_is_validation_error(self):
        b = small_builder()
        with pytest.raises(GraphValidationError):
            b.add_edge(TAG_TAG, node(TAG, 3), node(TAG, 3))

    def test_out_of_range_index_rejected(self):
        b = small_builder(users=2)
        with pytest.raises(GraphValidationError):
            b.add_edge(U_R, node(USER, 2), node(TARGET_ITEM, 0))

    def test_exactly_one_symmetric_type_required(self):
        with pytest.raises(GraphSchemaError):
            GraphBuilder({USER: 1, TARGET_ITEM: 1, TAG: 1}, [U_R, R_T])

    def test_metapath_ids_must_be_dense(self):
        counts = {USER: 1, TARGET_ITEM: 1, TAG: 1}
        with pytest.raises(GraphSchemaError):
            GraphBuilder(counts, [U_R, R_T, TAG_TAG], [two_hop_schema(schema_id=1)])


class TestNeighbors:
    def test_isolated_node_has_empty_list(self):
        g = small_builder().freeze()
        assert g.neighbors(node(USER, 0), U_R) == []

    def test_sorted_by_index(self):
        b = small_builder()
        b.add_edge(R_T, node(TARGET_ITEM, 1), node(TAG, 3))
        b.add_edge(R_T, node(TARGET_ITEM, 1), node(TAG, 1))
        g = b.freeze()
        assert g.neighbors(node(TARGET_ITEM, 1), R_T) == [node(TAG, 1), node(TAG, 3)]

    def test_repeated_calls_identical(self):
        b = small_builder()
        b.add_edge(U_R, node(USER, 0), node(TARGET_ITEM, 2))
        g = b.freeze()
        first = g.neighbors(node(USER, 0), U_R)
        assert g.neighbors(node(USER, 0), U_R) == first

    def test_out_degree_sums_to_edge_count(self):
        rng = np.random.default_rng(0)
        b = small_builder(users=6, items=6, tags=6)
        for _ in range(30):
            b.add_edge(U_R, node(USER, int(rng.integers(6))), node(TARGET_ITEM, int(rng.integers(6))))
        g = b.freeze()
        total = sum(len(g.neighbor_array(U_R, u)) for u in range(6))
        assert total == g.edge_count(U_R)


class TestMetapathNeighbors:
    def test_two_hop_enumeration(self):
        b = small_builder()
        b.add_edge(U_R, node(USER, 1), node(TARGET_ITEM, 1))
        b.add_edge(R_T, node(TARGET_ITEM, 1), node(TAG, 1))
        b.add_edge(R_T, node(TARGET_ITEM, 1), node(TAG, 2))
        g = b.freeze()
        out = metapath_neighbors(g, node(USER, 1), g.metapaths[0], cap=10, seed=0)
        assert out == [node(TAG, 1), node(TAG, 2)]

    def test_three_hop_single_path(self):
        src = source_item(1)
        brg = bridge(1)
        u_p = EdgeType(USER, src)
        p_rp = EdgeType(src, brg)
        rp_t = EdgeType(brg, TAG)
        schema = MetapathSchema.from_edges(0, [u_p, p_rp, rp_t])
        counts = {USER: 2, src: 2, brg: 2, TAG: 8}
        b = GraphBuilder(counts, [u_p, p_rp, rp_t, TAG_TAG], [schema])
        b.add_edge(u_p, node(USER, 1), node(src, 0))
        b.add_edge(p_rp, node(src, 0), node(brg, 1))
        b.add_edge(rp_t, node(brg, 1), node(TAG, 5))
        g = b.freeze()
        assert metapath_neighbors(g, node(USER, 1), schema, cap=10, seed=0) == [node(TAG, 5)]

    def test_no_interactions_gives_empty(self):
        g = small_builder().freeze()
        assert metapath_neighbors(g, node(USER, 0), g.metapaths[0], cap=10, seed=0) == []

    def test_dedup_through_multiple_items(self):
        b = small_builder()
        for item in (0, 1):
            b.add_edge(U_R, node(USER, 0), node(TARGET_ITEM, item))
            b.add_edge(R_T, node(TARGET_ITEM, item), node(TAG, 4))
        g = b.freeze()
        out = metapath_neighbors(g, node(USER, 0), g.metapaths[0], cap=10, seed=0)
        assert out == [node(TAG, 4)]

    def test_capped_sampling_snapshot(self):
        # 100 reachable tags, cap 32: the seeded sampler is its own oracle;
        # the draw is pinned and must never change across runs.
        b = small_builder(users=2, items=2, tags=100)
        b.add_edge(U_R, node(USER, 1), node(TARGET_ITEM, 0))
        for t in range(100):
            b.add_edge(R_T, node(TARGET_ITEM, 0), node(TAG, t))
        g = b.freeze()
        first = metapath_tag_indices(g, 1, g.metapaths[0], cap=32, seed=99)
        assert first.shape == (32,)
        assert (np.diff(first) > 0).all()
        again = metapath_tag_indices(g, 1, g.metapaths[0], cap=32, seed=99)
        np.testing.assert_array_equal(first, again)
        other_seed = metapath_tag_indices(g, 1, g.metapaths[0], cap=32, seed=100)
        assert not np.array_equal(first, other_seed)

    def test_uncapped_equals_brute_force_bfs(self):
        rng = np.random.default_rng(42)
        n_users, n_items, n_tags = 10, 15, 30
        b = small_builder(users=n_users, items=n_items, tags=n_tags)
        ur_edges = {(int(rng.integers(n_users)), int(rng.integers(n_items))) for _ in range(40)}
        rt_edges = {(int(rng.integers(n_items)), int(rng.integers(n_tags))) for _ in range(60)}
        for u, r in ur_edges:
            b.add_edge(U_R, node(USER, u), node(TARGET_ITEM, r))
        for r, t in rt_edges:
            b.add_edge(R_T, node(TARGET_ITEM, r), node(TAG, t))
        g = b.freeze()
        for u in range(n_users):
            expected = sorted(
                {t for (uu, r) in ur_edges if uu == u for (rr, t) in rt_edges if rr == r}
            )
            got = metapath_tag_indices(g, u, g.metapaths[0], cap=10 ** 9, seed=0)
            assert list(got) == expected

    def test_non_user_start_rejected(self):
        g = small_builder().freeze()
        with pytest.raises(GraphSchemaError):
            metapath_neighbors(g, node(TAG, 0), g.metapaths[0], cap=4, seed=0)

    def test_tag_tag_symmetry_property(self):
        rng = np.random.default_rng(3)
        b = small_builder(tags=12)
        for _ in range(20):
            a, c = rng.choice(12, size=2, replace=False)
            b.add_edge(TAG_TAG, node(TAG, int(a)), node(TAG, int(c)))
        g = b.freeze()
        for t in range(12):
            for other in g.neighbor_array(TAG_TAG, t):
                assert t in g.neighbor_array(TAG_TAG, int(other))
