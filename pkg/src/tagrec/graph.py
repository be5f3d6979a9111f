"""Typed heterogeneous graph with metapath walks and capped neighbor sampling.

Node and edge types are declared up front. Edges accumulate through a
single-writer builder and freeze into an immutable CSR store that is safe to
share across concurrent readers. Metapath walks enumerate the set of tags
reachable from a user along a declared node-type chain, with a seeded uniform
subsample once the set exceeds a cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .rng import STREAM_METAPATH, substream


class GraphSchemaError(ValueError):
    """Node or edge types do not match the declared schema."""


class GraphStateError(RuntimeError):
    """Operation not valid in the graph's current lifecycle state."""


class GraphValidationError(ValueError):
    """Structurally invalid edge: self-loop or index out of range."""


_PLAIN_KINDS = frozenset({"user", "target_item", "tag"})
_DOMAIN_KINDS = frozenset({"source_item", "bridge"})


@dataclass(frozen=True)
class NodeType:
    """One of user, target_item, tag, source_item(k) or bridge(k).

    ``domain`` is the 1-based source-domain index and must be 0 for the
    unparameterized kinds.
    """

    kind: str
    domain: int = 0

    def __post_init__(self) -> None:
        if self.kind in _PLAIN_KINDS:
            if self.domain != 0:
                raise GraphSchemaError(f"node kind {self.kind!r} takes no domain index")
        elif self.kind in _DOMAIN_KINDS:
            if self.domain < 1:
                raise GraphSchemaError(f"node kind {self.kind!r} needs a domain index >= 1")
        else:
            raise GraphSchemaError(f"unknown node kind {self.kind!r}")

    @property
    def name(self) -> str:
        return self.kind if self.domain == 0 else f"{self.kind}_{self.domain}"

    @staticmethod
    def parse(name: str) -> "NodeType":
        if name in _PLAIN_KINDS:
            return NodeType(name)
        for kind in _DOMAIN_KINDS:
            prefix = kind + "_"
            if name.startswith(prefix):
                suffix = name[len(prefix):]
                if not suffix.isdigit():
                    raise GraphSchemaError(f"bad domain index in node type {name!r}")
                return NodeType(kind, int(suffix))
        raise GraphSchemaError(f"unknown node type {name!r}")


USER = NodeType("user")
TARGET_ITEM = NodeType("target_item")
TAG = NodeType("tag")


def source_item(domain: int) -> NodeType:
    return NodeType("source_item", domain)


def bridge(domain: int) -> NodeType:
    return NodeType("bridge", domain)


class NodeId(NamedTuple):
    type: NodeType
    index: int


@dataclass(frozen=True)
class EdgeType:
    """Directed relation between two node types; only tag-tag is symmetric."""

    src: NodeType
    dst: NodeType
    symmetric: bool = False

    def __post_init__(self) -> None:
        tag_tag = self.src == TAG and self.dst == TAG
        if tag_tag and not self.symmetric:
            raise GraphSchemaError("the tag-tag relation must be symmetric")
        if self.symmetric and not tag_tag:
            raise GraphSchemaError("only the tag-tag relation may be symmetric")

    @property
    def name(self) -> str:
        return f"{self.src.name}->{self.dst.name}"


TAG_TAG = EdgeType(TAG, TAG, symmetric=True)


@dataclass(frozen=True)
class MetapathSchema:
    """Node-type chain from user to tag with its matching edge types."""

    id: int
    node_types: tuple[NodeType, ...]
    edge_types: tuple[EdgeType, ...]

    def __post_init__(self) -> None:
        if self.id < 0:
            raise GraphSchemaError("metapath id must be non-negative")
        if len(self.node_types) < 2:
            raise GraphSchemaError("metapath needs at least two node types")
        if len(self.edge_types) != len(self.node_types) - 1:
            raise GraphSchemaError("metapath edge count must be node count - 1")
        if self.node_types[0] != USER:
            raise GraphSchemaError("metapath must start at the user type")
        if self.node_types[-1] != TAG:
            raise GraphSchemaError("metapath must end at the tag type")
        for i, et in enumerate(self.edge_types):
            if et.src != self.node_types[i] or et.dst != self.node_types[i + 1]:
                raise GraphSchemaError(
                    f"metapath {self.id}: edge {et.name} does not link "
                    f"{self.node_types[i].name} to {self.node_types[i + 1].name}"
                )

    @staticmethod
    def from_edges(schema_id: int, edge_types: Sequence[EdgeType]) -> "MetapathSchema":
        if not edge_types:
            raise GraphSchemaError("metapath needs at least one edge type")
        nodes = [edge_types[0].src] + [et.dst for et in edge_types]
        return MetapathSchema(schema_id, tuple(nodes), tuple(edge_types))

    def __len__(self) -> int:
        return len(self.node_types)


class HeteroGraph:
    """Immutable typed adjacency store produced by :class:`GraphBuilder`.

    Neighbor lists are index-sorted, deduplicated, and free of self-loops.
    The symmetric tag-tag relation stores both directions.
    """

    __slots__ = ("_counts", "_edge_types", "_offsets", "_neighbors", "_metapaths")

    def __init__(
        self,
        counts: Mapping[NodeType, int],
        metapaths: tuple[MetapathSchema, ...],
        offsets: dict[EdgeType, np.ndarray],
        neighbors: dict[EdgeType, np.ndarray],
    ) -> None:
        self._counts = dict(counts)
        self._metapaths = metapaths
        self._offsets = offsets
        self._neighbors = neighbors
        self._edge_types = tuple(offsets.keys())

    @property
    def frozen(self) -> bool:
        return True

    @property
    def metapaths(self) -> tuple[MetapathSchema, ...]:
        return self._metapaths

    @property
    def edge_types(self) -> tuple[EdgeType, ...]:
        return self._edge_types

    def node_count(self, node_type: NodeType) -> int:
        return self._counts.get(node_type, 0)

    @property
    def node_types(self) -> tuple[NodeType, ...]:
        return tuple(self._counts.keys())

    def edge_count(self, edge_type: EdgeType) -> int:
        """Number of stored directed entries (symmetric edges count twice)."""
        return int(self._neighbors[edge_type].shape[0])

    def csr(self, edge_type: EdgeType) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self._offsets[edge_type], self._neighbors[edge_type]
        except KeyError:
            raise GraphSchemaError(f"edge type {edge_type.name} not declared") from None

    def edge_type_between(self, src: NodeType, dst: NodeType) -> EdgeType | None:
        for et in self._edge_types:
            if et.src == src and et.dst == dst:
                return et
        return None

    def neighbor_array(self, edge_type: EdgeType, src_index: int) -> np.ndarray:
        """Sorted destination indices of one node; a view, do not mutate."""
        offsets, neigh = self.csr(edge_type)
        return neigh[offsets[src_index]:offsets[src_index + 1]]

    def neighbors(self, node: NodeId, edge_type: EdgeType) -> list[NodeId]:
        if node.type != edge_type.src:
            raise GraphSchemaError(
                f"node of type {node.type.name} cannot source edge {edge_type.name}"
            )
        self._check_index(node)
        out = self.neighbor_array(edge_type, node.index)
        return [NodeId(edge_type.dst, int(i)) for i in out]

    def _check_index(self, node: NodeId) -> None:
        count = self.node_count(node.type)
        if not 0 <= node.index < count:
            raise GraphValidationError(
                f"{node.type.name} index {node.index} out of range [0, {count})"
            )


class GraphBuilder:
    """Single-writer accumulator; ``freeze()`` yields the immutable graph."""

    def __init__(
        self,
        node_counts: Mapping[NodeType, int],
        edge_types: Iterable[EdgeType],
        metapaths: Sequence[MetapathSchema] = (),
    ) -> None:
        self._counts = dict(node_counts)
        for node_type, count in self._counts.items():
            if count < 0:
                raise GraphSchemaError(f"negative node count for {node_type.name}")
        ets = tuple(edge_types)
        pairs = {(et.src, et.dst) for et in ets}
        if len(pairs) != len(ets):
            raise GraphSchemaError("duplicate edge type declaration")
        if sum(1 for et in ets if et.symmetric) != 1:
            raise GraphSchemaError("exactly one symmetric (tag-tag) edge type is required")
        for et in ets:
            for nt in (et.src, et.dst):
                if nt not in self._counts:
                    raise GraphSchemaError(f"edge type {et.name} references undeclared {nt.name}")
        schemas = tuple(metapaths)
        declared = set(ets)
        for want, schema in enumerate(schemas):
            if schema.id != want:
                raise GraphSchemaError("metapath ids must be dense 0..n-1 in order")
            for et in schema.edge_types:
                if et not in declared:
                    raise GraphSchemaError(f"metapath {schema.id} uses undeclared edge {et.name}")
        self._edge_types = ets
        self._metapaths = schemas
        self._adj: dict[EdgeType, dict[int, set[int]]] = {et: {} for et in ets}
        self._frozen = False

    def add_edge(self, edge_type: EdgeType, src: NodeId, dst: NodeId) -> None:
        """Record one edge; duplicates collapse, symmetric types store both ways."""
        if self._frozen:
            raise GraphStateError("graph is frozen; no further edges accepted")
        if edge_type not in self._adj:
            raise GraphSchemaError(f"edge type {edge_type.name} not declared")
        if src.type != edge_type.src or dst.type != edge_type.dst:
            raise GraphSchemaError(
                f"edge {edge_type.name} cannot connect {src.type.name} to {dst.type.name}"
            )
        self._check_index(src)
        self._check_index(dst)
        if src == dst:
            raise GraphValidationError(f"self-loop on {src.type.name} {src.index}")
        adj = self._adj[edge_type]
        adj.setdefault(src.index, set()).add(dst.index)
        if edge_type.symmetric:
            adj.setdefault(dst.index, set()).add(src.index)

    def _check_index(self, node: NodeId) -> None:
        count = self._counts.get(node.type, 0)
        if not 0 <= node.index < count:
            raise GraphValidationError(
                f"{node.type.name} index {node.index} out of range [0, {count})"
            )

    def freeze(self) -> HeteroGraph:
        if self._frozen:
            raise GraphStateError("graph already frozen")
        self._frozen = True
        offsets: dict[EdgeType, np.ndarray] = {}
        neighbors: dict[EdgeType, np.ndarray] = {}
        for et in self._edge_types:
            n_src = self._counts[et.src]
            adj = self._adj[et]
            offs = np.zeros(n_src + 1, dtype=np.int64)
            chunks = []
            total = 0
            for i in range(n_src):
                dests = adj.get(i)
                if dests:
                    chunk = np.fromiter(dests, dtype=np.int64, count=len(dests))
                    chunk.sort()
                    chunks.append(chunk)
                    total += len(chunk)
                offs[i + 1] = total
            if chunks:
                neighbors[et] = np.concatenate(chunks)
            else:
                neighbors[et] = np.empty(0, dtype=np.int64)
            offsets[et] = offs
        self._adj = {}
        return HeteroGraph(self._counts, self._metapaths, offsets, neighbors)


def metapath_tag_indices(
    graph: HeteroGraph,
    user_index: int,
    schema: MetapathSchema,
    cap: int,
    seed: int,
) -> np.ndarray:
    """Sorted tag indices reachable from the user along the schema.

    Deduplicated at every hop; when more than ``cap`` tags are reachable, a
    uniform subset of size ``cap`` is drawn from a generator keyed by
    (seed, user, schema id) and returned sorted.
    """
    if cap < 1:
        raise ValueError("cap must be positive")
    frontier = np.array([user_index], dtype=np.int64)
    for et in schema.edge_types:
        if frontier.size == 0:
            return np.empty(0, dtype=np.int64)
        offs, neigh = graph.csr(et)
        parts = [neigh[offs[i]:offs[i + 1]] for i in frontier]
        merged = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        frontier = np.unique(merged)
    if frontier.size > cap:
        gen = substream(seed, STREAM_METAPATH, user_index, schema.id)
        pick = gen.choice(frontier.size, size=cap, replace=False)
        frontier = np.sort(frontier[pick])
    return frontier


def metapath_neighbors(
    graph: HeteroGraph,
    user: NodeId,
    schema: MetapathSchema,
    cap: int,
    seed: int,
) -> list[NodeId]:
    """Tag nodes reachable from ``user`` along ``schema``; see metapath_tag_indices."""
    if user.type != USER:
        raise GraphSchemaError("metapath walks start at a user node")
    if not 0 <= user.index < graph.node_count(USER):
        raise GraphValidationError(f"user index {user.index} out of range")
    tags = metapath_tag_indices(graph, user.index, schema, cap, seed)
    return [NodeId(TAG, int(i)) for i in tags]
