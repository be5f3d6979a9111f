"""Multi-interest user and item representations over the tag graph.

Layer semantics: tag layer l+1 is the tag-tag neighbor mean of layer l
(isolated tags keep their row); item layer l+1 is the mean of the item's tag
rows at layer l (tagless items keep their base row); user layer l+1 distills
the user's metapath tag sets at layer l through a two-step aggregation
(per-domain capsule routing, then cross-domain attention pooling with
exponent-sharpened softmax). The served representation is the sum of layers
0..L, and scoring is the plain inner product.

Every forward runs on an autodiff tape so the same code path serves training
gradients and inference values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tape, Var, _squash_rows_value
from .graph import TAG, TARGET_ITEM, USER, HeteroGraph, NodeId, GraphSchemaError
from .rng import STREAM_PARAM_INIT, STREAM_ROUTING, substream


class AggregatorVariant(enum.Enum):
    """Aggregation strategies compared in the ablation study."""

    FULL = "full"        # capsule routing + exponent-sharpened attention
    MEAN = "mean"        # average pooling in both steps
    SOFTMAX = "softmax"  # standard scaled dot-product attention in both steps
    HARD = "hard"        # capsule routing + top-1 capsule selection

    @staticmethod
    def parse(name: str) -> "AggregatorVariant":
        try:
            return AggregatorVariant(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown aggregator variant {name!r}") from None


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 2
    k_max: int = 8
    gamma: float = 6.0
    routing_iters: int = 3
    neighbor_cap: int = 128
    pad_mask: bool = True
    l2_weight: float = 1e-5

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be >= 1")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")


PARAM_FAMILIES = (
    "user_emb",
    "item_emb",
    "tag_emb",
    "routing_transform",
    "attn_transform",
    "attn_score",
    "tag_context",
)


@dataclass
class ModelParams:
    """All trainable arrays, float64, fixed embedding width."""

    user_emb: np.ndarray          # (n_users, d)
    item_emb: np.ndarray          # (n_target_items, d)
    tag_emb: np.ndarray           # (n_tags, d)
    routing_transform: np.ndarray  # (d, d), shared across capsules and domains
    attn_transform: np.ndarray     # (d, d)
    attn_score: np.ndarray         # (d, 1)
    tag_context: np.ndarray        # (n_tags, d), skip-gram context table

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @classmethod
    def init(cls, n_users: int, n_items: int, n_tags: int, dim: int, seed: int) -> "ModelParams":
        gen = substream(seed, STREAM_PARAM_INIT)
        return cls(
            user_emb=gen.normal(0.0, 0.1, (n_users, dim)),
            item_emb=gen.normal(0.0, 0.1, (n_items, dim)),
            tag_emb=gen.normal(0.0, 0.1, (n_tags, dim)),
            routing_transform=np.eye(dim) + gen.normal(0.0, 0.05, (dim, dim)),
            attn_transform=np.eye(dim) + gen.normal(0.0, 0.05, (dim, dim)),
            # The scoring vector starts large enough that attention logits
            # straddle 1; below that, x^gamma flattens and the sharpened
            # softmax would stay uniform with vanishing gradients.
            attn_score=gen.normal(0.0, 3.0, (dim, 1)),
            tag_context=gen.normal(0.0, 0.1, (n_tags, dim)),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FAMILIES}

    @classmethod
    def from_dict(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(**{name: np.asarray(arrays[name], dtype=np.float64) for name in PARAM_FAMILIES})

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: getattr(self, name).copy() for name in PARAM_FAMILIES})

    def check_finite(self) -> None:
        for name in PARAM_FAMILIES:
            if not np.isfinite(getattr(self, name)).all():
                raise ContractError(f"non-finite values in parameter family {name}")


@dataclass
class ParamVars:
    """Tape leaves mirroring :class:`ModelParams`."""

    user_emb: Var
    item_emb: Var
    tag_emb: Var
    routing_transform: Var
    attn_transform: Var
    attn_score: Var
    tag_context: Var


def lift_params(tape: Tape, params: ModelParams, trainable: bool = True) -> ParamVars:
    return ParamVars(**{
        name: tape.leaf(getattr(params, name), requires_grad=trainable)
        for name in PARAM_FAMILIES
    })


def leaf_map(pvars: ParamVars) -> dict[str, Var]:
    return {name: getattr(pvars, name) for name in PARAM_FAMILIES}


@dataclass
class InterestCapsules:
    """Routing output for one (user, metapath, layer), zero-padded to k_max."""

    user: int
    metapath: int
    layer: int
    capsules: np.ndarray     # (d, k_max); columns beyond `active` are zero
    active: int
    logits: np.ndarray       # (n_tags, active) routing logits after last update
    weights: np.ndarray      # (n_tags, active) assignment weights of the output
    tag_indices: np.ndarray  # (n_tags,)


@dataclass
class AttentionWeights:
    """Cross-domain pooling weights for one (user, layer)."""

    user: int
    layer: int
    logits: np.ndarray       # (d_rho * k_max,)
    weights: np.ndarray      # (d_rho * k_max,); masked slots are exactly 0
    active: np.ndarray       # (d_rho * k_max,) bool


@dataclass
class UserDiagnostics:
    capsules: list[InterestCapsules] = field(default_factory=list)
    attention: list[AttentionWeights] = field(default_factory=list)


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def squash(c: np.ndarray) -> np.ndarray:
    """Norm-bounding nonlinearity; zero vectors stay zero."""
    out, _, _ = _squash_rows_value(np.asarray(c, dtype=np.float64)[None, :])
    return out[0]


def adaptive_capsule_count(n_tags: int, k_max: int) -> int:
    """Capsule budget: max(1, min(k_max, ceil(log2 n_tags)))."""
    if n_tags < 0:
        raise ValueError("n_tags must be >= 0")
    if n_tags <= 1:
        return 1
    return max(1, min(k_max, math.ceil(math.log2(n_tags))))


def score(user_rep: np.ndarray, item_rep: np.ndarray) -> float:
    if user_rep.shape != item_rep.shape:
        raise ContractError("representation dimensions differ")
    return float(np.dot(user_rep, item_rep))


def tag_layer_update(graph: HeteroGraph, tag_embs: np.ndarray) -> np.ndarray:
    """One tag propagation step: mean over tag-tag neighbors, isolated keep."""
    from .graph import TAG_TAG

    offsets, indices = graph.csr(TAG_TAG)
    tape = Tape()
    t = tape.constant(np.asarray(tag_embs, dtype=np.float64))
    return ad.segment_mean(t, offsets, indices, t).value


def item_embed(
    graph: HeteroGraph,
    params: ModelParams,
    item: NodeId,
    tag_embs: np.ndarray,
) -> np.ndarray:
    """Next-layer item vector: mean of its tag rows, or its base row if tagless."""
    if item.type != TARGET_ITEM:
        raise GraphSchemaError("item_embed expects a target item node")
    et = graph.edge_type_between(TARGET_ITEM, TAG)
    tags = graph.neighbor_array(et, item.index) if et is not None else np.empty(0, np.int64)
    if tags.size == 0:
        return params.item_emb[item.index].copy()
    return np.asarray(tag_embs, dtype=np.float64)[tags].mean(axis=0)


# ---------------------------------------------------------------------------
# tape-level building blocks
# ---------------------------------------------------------------------------

def route_on_tape(
    tape: Tape,
    tag_rows: Var,
    transform: Var,
    k: int,
    iters: int,
    b_init: np.ndarray,
) -> tuple[Var, Var, Var]:
    """Unrolled dynamic routing; returns (capsule rows (k,d), weights, logits).

    Per iteration: per-tag softmax of the logits, weighted sum of transformed
    tag vectors into capsules, squash, then logit update by capsule/tag
    agreement. The logit initialization is a constant w.r.t. differentiation.
    """
    n = tag_rows.value.shape[0]
    if k < 1:
        raise ContractError("routing needs at least one capsule")
    if n == 0:
        raise ContractError("routing needs at least one tag vector")
    if iters < 1:
        raise ContractError("routing needs at least one iteration")
    if b_init.shape != (n, k):
        raise ContractError(f"logit init shape {b_init.shape} != ({n}, {k})")
    transformed = ad.matmul(tag_rows, transform, transpose_b=True)  # rows = S e_t
    logits = tape.constant(b_init)
    weights = capsules = None
    for _ in range(iters):
        weights = ad.softmax_rows(logits)
        summed = ad.matmul(weights, transformed, transpose_a=True)
        capsules = ad.squash_rows(summed)
        logits = ad.add(logits, ad.matmul(transformed, capsules, transpose_b=True))
    return capsules, weights, logits


def attend_on_tape(
    tape: Tape,
    capsule_rows: Var,
    attn_transform: Var,
    attn_score: Var,
    gamma: float,
    active: np.ndarray,
) -> tuple[Var, Var, Var]:
    """Exponent-sharpened attention pooling; returns (logits, weights, pooled)."""
    h2 = ad.matmul(ad.tanh(ad.matmul(capsule_rows, attn_transform, transpose_b=True)), attn_score)
    h = ad.reshape(h2, (capsule_rows.value.shape[0],))
    alpha = ad.masked_softmax(ad.power(h, gamma), active)
    pooled = ad.matvec(capsule_rows, alpha, transpose_a=True)
    return h, alpha, pooled


def dynamic_routing(
    tag_vectors: np.ndarray,
    k: int,
    transform: np.ndarray,
    iters: int,
    seed: int,
    *,
    user: int = 0,
    metapath: int = 0,
    layer: int = 0,
    k_max: int | None = None,
) -> InterestCapsules:
    """Run routing on plain arrays for one metapath at one layer."""
    tag_vectors = np.asarray(tag_vectors, dtype=np.float64)
    if tag_vectors.ndim != 2 or tag_vectors.shape[0] == 0:
        raise ContractError("dynamic_routing expects a non-empty (n, d) tag matrix")
    tape = Tape()
    rows = tape.constant(tag_vectors)
    s = tape.constant(np.asarray(transform, dtype=np.float64))
    b_init = routing_logit_init(seed, user, metapath, layer, tag_vectors.shape[0], k)
    capsules, weights, logits = route_on_tape(tape, rows, s, k, iters, b_init)
    width = k if k_max is None else k_max
    if width < k:
        raise ContractError("k_max must be >= k")
    padded = np.zeros((tag_vectors.shape[1], width))
    padded[:, :k] = capsules.value.T
    return InterestCapsules(
        user=user,
        metapath=metapath,
        layer=layer,
        capsules=padded,
        active=k,
        logits=logits.value.copy(),
        weights=weights.value.copy(),
        tag_indices=np.arange(tag_vectors.shape[0], dtype=np.int64),
    )


def inter_domain_attention(
    capsule_matrix: np.ndarray,
    attn_transform: np.ndarray,
    attn_score: np.ndarray,
    gamma: float,
    pad_mask: bool,
    active: np.ndarray | None = None,
) -> tuple[AttentionWeights, np.ndarray]:
    """Pool a (d, M) capsule matrix into one d-vector with sharpened weights.

    ``active`` marks real capsule columns; by default columns that are not
    identically zero. With ``pad_mask`` off, padded columns join the softmax.
    """
    z = np.asarray(capsule_matrix, dtype=np.float64)
    if active is None:
        active = np.abs(z).max(axis=0) > 0.0
    active = np.asarray(active, dtype=bool)
    m = z.shape[1]
    if not active.any():
        weights = AttentionWeights(0, 0, np.zeros(m), np.zeros(m), active)
        return weights, np.zeros(z.shape[0])
    softmax_mask = active if pad_mask else np.ones(m, dtype=bool)
    tape = Tape()
    rows = tape.constant(z.T)
    s1 = tape.constant(np.asarray(attn_transform, dtype=np.float64))
    s2 = tape.constant(np.asarray(attn_score, dtype=np.float64))
    h, alpha, pooled = attend_on_tape(tape, rows, s1, s2, gamma, softmax_mask)
    weights = AttentionWeights(0, 0, h.value.copy(), alpha.value.copy(), active)
    return weights, pooled.value.copy()


ROUTING_INIT_SCALE = 1.0


def routing_logit_init(seed: int, user: int, metapath: int, layer: int, n: int, k: int) -> np.ndarray:
    """Unit-scale uniform logits; enough asymmetry for three routing rounds
    to commit tags to distinct capsules at trained embedding norms."""
    gen = substream(seed, STREAM_ROUTING, user, metapath, layer)
    return gen.uniform(-ROUTING_INIT_SCALE, ROUTING_INIT_SCALE, (n, k))


# ---------------------------------------------------------------------------
# forward context and full passes
# ---------------------------------------------------------------------------

class ForwardContext:
    """Per-(graph, config, seed) caches shared by every forward pass.

    Metapath tag sets and routing logit initializations are pure functions of
    the seed, so they are computed once and shared by training, evaluation,
    and explanation passes.
    """

    def __init__(self, graph: HeteroGraph, config: ModelConfig, seed: int) -> None:
        from .graph import TAG_TAG, metapath_tag_indices

        if not graph.metapaths:
            raise GraphSchemaError("graph declares no metapaths")
        self.graph = graph
        self.config = config
        self.seed = seed
        self.tt_offsets, self.tt_indices = graph.csr(TAG_TAG)
        et = graph.edge_type_between(TARGET_ITEM, TAG)
        if et is not None:
            self.item_offsets, self.item_indices = graph.csr(et)
        else:
            self.item_offsets = np.zeros(graph.node_count(TARGET_ITEM) + 1, dtype=np.int64)
            self.item_indices = np.empty(0, dtype=np.int64)
        self._walk = metapath_tag_indices
        self._user_tags: dict[tuple[int, int], np.ndarray] = {}
        self._b_init: dict[tuple[int, int, int], np.ndarray] = {}

    def user_tags(self, user: int, metapath_id: int) -> np.ndarray:
        key = (user, metapath_id)
        tags = self._user_tags.get(key)
        if tags is None:
            schema = self.graph.metapaths[metapath_id]
            tags = self._walk(self.graph, user, schema, self.config.neighbor_cap, self.seed)
            self._user_tags[key] = tags
        return tags

    def b_init(self, user: int, metapath_id: int, layer: int) -> np.ndarray:
        key = (user, metapath_id, layer)
        b = self._b_init.get(key)
        if b is None:
            n = self.user_tags(user, metapath_id).shape[0]
            k = adaptive_capsule_count(n, self.config.k_max)
            b = routing_logit_init(self.seed, user, metapath_id, layer, n, k)
            self._b_init[key] = b
        return b

    def item_segments(self, items: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """CSR restricted to the given item rows, in their given order."""
        degrees = self.item_offsets[items + 1] - self.item_offsets[items]
        offsets = np.zeros(items.shape[0] + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        parts = [
            self.item_indices[self.item_offsets[i]:self.item_offsets[i + 1]] for i in items
        ]
        indices = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        return offsets, indices


def tag_layers_on_tape(tape: Tape, ctx: ForwardContext, tag_leaf: Var, n_layers: int) -> list[Var]:
    """Tag matrices for layers 0..n_layers-1 (the layers the model consumes)."""
    layers = [tag_leaf]
    for _ in range(max(0, n_layers - 1)):
        prev = layers[-1]
        layers.append(ad.segment_mean(prev, ctx.tt_offsets, ctx.tt_indices, prev))
    return layers


def item_rows_on_tape(
    tape: Tape,
    ctx: ForwardContext,
    pvars: ParamVars,
    items: np.ndarray,
    tag_layers: list[Var],
) -> Var:
    """Summed-layer representations for the given item indices, (m, d)."""
    base = ad.gather_rows(pvars.item_emb, items)
    total = base
    offsets, indices = ctx.item_segments(items)
    for layer in range(ctx.config.layers):
        total = ad.add(total, ad.segment_mean(tag_layers[layer], offsets, indices, base))
    return total


def user_rep_on_tape(
    tape: Tape,
    ctx: ForwardContext,
    pvars: ParamVars,
    user: int,
    tag_layers: list[Var],
    variant: AggregatorVariant = AggregatorVariant.FULL,
    diagnostics: UserDiagnostics | None = None,
) -> Var:
    """Summed-layer user representation (d,), recording diagnostics if asked."""
    config = ctx.config
    dim = config.dim
    base = ad.reshape(ad.gather_rows(pvars.user_emb, np.array([user])), (dim,))
    layer_reps = [base]
    for layer in range(config.layers):
        if variant is AggregatorVariant.SOFTMAX:
            rep = _softmax_layer(tape, ctx, pvars, user, tag_layers[layer], layer_reps[layer])
        else:
            # MEAN keeps the capsule machinery and only flattens the two
            # weighting schemes: one uniformly-assigned capsule per domain,
            # uniform pooling across domains (the K=1, gamma=0 limit).
            rep = _routed_layer(tape, ctx, pvars, user, layer, tag_layers[layer], variant, diagnostics)
        layer_reps.append(rep)
    total = layer_reps[0]
    for rep in layer_reps[1:]:
        total = ad.add(total, rep)
    return total


def _routed_layer(tape, ctx, pvars, user, layer, tag_matrix, variant, diagnostics):
    config = ctx.config
    schemas = ctx.graph.metapaths
    k_max = config.k_max
    mean_mode = variant is AggregatorVariant.MEAN
    blocks: list[Var] = []
    active = np.zeros(len(schemas) * k_max, dtype=bool)
    for rho, schema in enumerate(schemas):
        tags = ctx.user_tags(user, schema.id)
        if tags.size == 0:
            blocks.append(tape.constant(np.zeros((k_max, config.dim))))
            continue
        k = 1 if mean_mode else adaptive_capsule_count(tags.size, k_max)
        rows = ad.gather_rows(tag_matrix, tags)
        capsules, weights, logits = route_on_tape(
            tape, rows, pvars.routing_transform, k, config.routing_iters,
            ctx.b_init(user, schema.id, layer)[:, :k],
        )
        if k < k_max:
            pad = tape.constant(np.zeros((k_max - k, config.dim)))
            blocks.append(ad.concat_rows([capsules, pad]))
        else:
            blocks.append(capsules)
        active[rho * k_max: rho * k_max + k] = True
        if diagnostics is not None:
            padded = np.zeros((config.dim, k_max))
            padded[:, :k] = capsules.value.T
            diagnostics.capsules.append(InterestCapsules(
                user=user, metapath=schema.id, layer=layer, capsules=padded,
                active=k, logits=logits.value.copy(), weights=weights.value.copy(),
                tag_indices=tags.copy(),
            ))
    m = active.shape[0]
    if not active.any():
        if diagnostics is not None:
            diagnostics.attention.append(AttentionWeights(user, layer, np.zeros(m), np.zeros(m), active))
        return tape.constant(np.zeros(config.dim))
    z_rows = ad.concat_rows(blocks)
    if variant is AggregatorVariant.HARD:
        return _hard_select(tape, ctx, pvars, user, layer, z_rows, active, diagnostics)
    gamma = 0.0 if mean_mode else config.gamma
    softmax_mask = active if (config.pad_mask or mean_mode) else np.ones(m, dtype=bool)
    h, alpha, pooled = attend_on_tape(
        tape, z_rows, pvars.attn_transform, pvars.attn_score, gamma, softmax_mask
    )
    if diagnostics is not None:
        diagnostics.attention.append(AttentionWeights(
            user, layer, h.value.copy(), alpha.value.copy(), active
        ))
    return pooled


def _hard_select(tape, ctx, pvars, user, layer, z_rows, active, diagnostics):
    """Top-1 capsule selection: weight 1 on the sharpened-logit argmax."""
    config = ctx.config
    h2 = ad.matmul(ad.tanh(ad.matmul(z_rows, pvars.attn_transform, transpose_b=True)), pvars.attn_score)
    h = ad.reshape(h2, (z_rows.value.shape[0],))
    powed = np.power(h.value, config.gamma)
    scores = np.where(active, powed, -np.inf)
    choice = int(np.argmax(scores))
    pooled = ad.reshape(ad.gather_rows(z_rows, np.array([choice])), (config.dim,))
    if diagnostics is not None:
        weights = np.zeros(active.shape[0])
        weights[choice] = 1.0
        diagnostics.attention.append(AttentionWeights(user, layer, h.value.copy(), weights, active))
    return pooled


def _softmax_layer(tape, ctx, pvars, user, tag_matrix, query):
    """Standard scaled dot-product attention in both steps, query = e_u^l.

    Architecture-preserving ablation: tag vectors still pass through the
    shared transform and the per-domain summary is squash-normalized, so only
    the weighting scheme differs from routing.
    """
    config = ctx.config
    inv_sqrt_d = 1.0 / math.sqrt(config.dim)
    summaries = []
    domain_logits = []
    for schema in ctx.graph.metapaths:
        tags = ctx.user_tags(user, schema.id)
        if tags.size == 0:
            continue
        rows = ad.gather_rows(tag_matrix, tags)
        transformed = ad.matmul(rows, pvars.routing_transform, transpose_b=True)
        logits = ad.scale(ad.matvec(transformed, query), inv_sqrt_d)
        weights = ad.masked_softmax(logits, np.ones(tags.size, dtype=bool))
        pooled = ad.matvec(transformed, weights, transpose_a=True)
        summary = ad.reshape(ad.squash_rows(ad.reshape(pooled, (1, config.dim))), (config.dim,))
        summaries.append(summary)
        domain_logits.append(ad.scale(ad.dot(query, summary), inv_sqrt_d))
    if not summaries:
        return tape.constant(np.zeros(config.dim))
    stacked = ad.concat_rows([ad.reshape(s, (1, config.dim)) for s in summaries])
    domain_weights = ad.masked_softmax(
        ad.stack_scalars(domain_logits), np.ones(len(summaries), dtype=bool)
    )
    return ad.matvec(stacked, domain_weights, transpose_a=True)


# ---------------------------------------------------------------------------
# public forward passes
# ---------------------------------------------------------------------------

def _user_index(user: NodeId | int) -> int:
    if isinstance(user, NodeId):
        if user.type != USER:
            raise GraphSchemaError("forward_user expects a user node")
        return user.index
    return int(user)


def forward_user(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    user: NodeId | int,
    seed: int,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    ctx: ForwardContext | None = None,
) -> tuple[np.ndarray, UserDiagnostics]:
    """Final user representation plus routing/attention diagnostics."""
    if ctx is None:
        ctx = ForwardContext(graph, config, seed)
    index = _user_index(user)
    tape = Tape()
    pvars = lift_params(tape, params, trainable=False)
    tag_layers = tag_layers_on_tape(tape, ctx, pvars.tag_emb, config.layers)
    diagnostics = UserDiagnostics()
    rep = user_rep_on_tape(tape, ctx, pvars, index, tag_layers, variant, diagnostics)
    return rep.value.copy(), diagnostics


def forward_item(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    item: NodeId | int,
    ctx: ForwardContext | None = None,
) -> np.ndarray:
    """Final item representation: base row plus per-layer tag means."""
    if isinstance(item, NodeId):
        if item.type != TARGET_ITEM:
            raise GraphSchemaError("forward_item expects a target item node")
        index = item.index
    else:
        index = int(item)
    if ctx is None:
        ctx = ForwardContext(graph, config, seed=0)
    tape = Tape()
    pvars = lift_params(tape, params, trainable=False)
    tag_layers = tag_layers_on_tape(tape, ctx, pvars.tag_emb, config.layers)
    rows = item_rows_on_tape(tape, ctx, pvars, np.array([index]), tag_layers)
    return rows.value[0].copy()


def all_item_reps(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    ctx: ForwardContext | None = None,
) -> np.ndarray:
    """Representations for the whole target catalog, (n_items, d)."""
    if ctx is None:
        ctx = ForwardContext(graph, config, seed=0)
    tape = Tape()
    pvars = lift_params(tape, params, trainable=False)
    tag_layers = tag_layers_on_tape(tape, ctx, pvars.tag_emb, config.layers)
    items = np.arange(graph.node_count(TARGET_ITEM), dtype=np.int64)
    return item_rows_on_tape(tape, ctx, pvars, items, tag_layers).value.copy()
