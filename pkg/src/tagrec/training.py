"""Joint pairwise-ranking and tag skip-gram training.

The ranking objective scores observed user-item pairs above sampled
unobserved ones; the skip-gram regularizer pulls related tags together in
the base embedding space through a separate context table. Both terms are
assembled on one tape per batch so a single backward pass yields every
gradient, and the optimizer consumes batches in a fixed order for
reproducibility.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, GradCheckReport, Tape, Var, adam_step, backward
from .graph import TAG_TAG, TARGET_ITEM, HeteroGraph
from .model import (
    AggregatorVariant,
    ForwardContext,
    ModelConfig,
    ModelParams,
    PARAM_FAMILIES,
    ParamVars,
    item_rows_on_tape,
    leaf_map,
    lift_params,
    tag_layers_on_tape,
    user_rep_on_tape,
)
from .rng import STREAM_BPR, STREAM_EPOCH, STREAM_SKIPGRAM, substream

logger = logging.getLogger(__name__)

NEGATIVE_RETRY_BOUND = 50

SKIPGRAM_FORMS = ("literal", "stabilized")


class BprTriple(NamedTuple):
    """User with one observed target item and one sampled unobserved one."""

    user: int
    positive: int
    negative: int


class SkipGramPair(NamedTuple):
    """Tag center with one related neighbor and one unrelated negative."""

    center: int
    positive: int
    negative: int


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 10
    learning_rate: float = 0.01
    seed: int = 0
    skipgram_form: str = "stabilized"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.skipgram_form not in SKIPGRAM_FORMS:
            raise ValueError(f"skipgram_form must be one of {SKIPGRAM_FORMS}")


@dataclass
class InteractionSplits:
    train: list[tuple[int, int]]
    validation: list[tuple[int, int]]
    test: list[tuple[int, int]]


class NonFiniteLossError(RuntimeError):
    """The joint loss left the finite range; training cannot continue."""


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _draw_negative_item(user, n_items, observed, rng):
    for _ in range(NEGATIVE_RETRY_BOUND):
        candidate = int(rng.integers(n_items))
        if (user, candidate) not in observed:
            return candidate
    return None


def sample_bpr_batch(
    interactions: Sequence[tuple[int, int]],
    n_items: int,
    n: int,
    seed: int,
    rng: np.random.Generator | None = None,
) -> list[BprTriple]:
    """Draw n triples: uniform observed positives, rejection-sampled negatives.

    Users whose observed set exhausts the catalog are skipped with a warning
    once the retry bound is hit.
    """
    if not interactions:
        raise ValueError("need at least one observed interaction")
    if rng is None:
        rng = substream(seed, STREAM_BPR)
    observed = set(interactions)
    out: list[BprTriple] = []
    budget = 10 * n
    while len(out) < n and budget > 0:
        budget -= 1
        user, positive = interactions[int(rng.integers(len(interactions)))]
        negative = _draw_negative_item(user, n_items, observed, rng)
        if negative is None:
            logger.warning("negative sampling exhausted for user %d; skipping", user)
            continue
        out.append(BprTriple(user, positive, negative))
    return out


def sample_skipgram_pairs(
    graph: HeteroGraph,
    n: int,
    seed: int,
    rng: np.random.Generator | None = None,
) -> list[SkipGramPair]:
    """Positive pairs uniform over directed tag-tag entries, negatives rejected
    against the center's neighborhood."""
    if rng is None:
        rng = substream(seed, STREAM_SKIPGRAM)
    offsets, indices = graph.csr(TAG_TAG)
    n_entries = indices.shape[0]
    n_tags = offsets.shape[0] - 1
    if n_entries == 0 or n_tags < 2:
        return []
    out: list[SkipGramPair] = []
    budget = 10 * n
    while len(out) < n and budget > 0:
        budget -= 1
        entry = int(rng.integers(n_entries))
        center = int(np.searchsorted(offsets, entry, side="right") - 1)
        positive = int(indices[entry])
        neighborhood = indices[offsets[center]:offsets[center + 1]]
        negative = None
        for _ in range(NEGATIVE_RETRY_BOUND):
            candidate = int(rng.integers(n_tags))
            if candidate == center:
                continue
            pos = np.searchsorted(neighborhood, candidate)
            if pos < neighborhood.shape[0] and neighborhood[pos] == candidate:
                continue
            negative = candidate
            break
        if negative is None:
            logger.warning("skip-gram negative sampling exhausted for tag %d", center)
            continue
        out.append(SkipGramPair(center, positive, negative))
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def skipgram_loss(
    params: ModelParams,
    pairs: Sequence[SkipGramPair],
    form: str = "stabilized",
) -> float:
    """Mean skip-gram objective over the sampled pairs (0.0 when empty)."""
    if form not in SKIPGRAM_FORMS:
        raise ValueError(f"unknown skipgram form {form!r}")
    if not pairs:
        return 0.0
    centers = params.tag_emb[[p.center for p in pairs]]
    pos = params.tag_context[[p.positive for p in pairs]]
    neg = params.tag_context[[p.negative for p in pairs]]
    s_pos = np.einsum("ij,ij->i", pos, centers)
    s_neg = np.einsum("ij,ij->i", neg, centers)

    def log_sig(x):
        return -np.logaddexp(0.0, -x)

    if form == "literal":
        per_pair = -(log_sig(s_pos) - log_sig(s_neg))
    else:
        per_pair = -log_sig(s_pos) - log_sig(-s_neg)
    return float(per_pair.mean())


def l2_penalty_value(
    params: ModelParams,
    user_rows: np.ndarray,
    item_rows: np.ndarray,
) -> float:
    """Squared norms of the batch-touched parameter scope (unweighted).

    The scope is the batch's user and item rows plus the globally touched
    families: the full tag tables (every row participates in tag
    propagation), the transforms, and the skip-gram context table.
    """
    total = float(np.vdot(params.user_emb[user_rows], params.user_emb[user_rows]))
    total += float(np.vdot(params.item_emb[item_rows], params.item_emb[item_rows]))
    for name in ("tag_emb", "routing_transform", "attn_transform", "attn_score", "tag_context"):
        arr = getattr(params, name)
        total += float(np.vdot(arr, arr))
    return total


def bpr_loss(
    params: ModelParams,
    config: ModelConfig,
    triples: Sequence[BprTriple],
    user_reps: Mapping[int, np.ndarray],
    item_reps: Mapping[int, np.ndarray],
) -> float:
    """Mean -ln sigmoid(score margin) plus the weighted L2 penalty."""
    if not triples:
        raise ValueError("need at least one triple")
    margins = np.array([
        float(user_reps[t.user] @ item_reps[t.positive])
        - float(user_reps[t.user] @ item_reps[t.negative])
        for t in triples
    ])
    rank_term = float(np.logaddexp(0.0, -margins).mean())
    users = np.unique([t.user for t in triples])
    items = np.unique([i for t in triples for i in (t.positive, t.negative)])
    return rank_term + config.l2_weight * l2_penalty_value(params, users, items)


def joint_loss(skipgram_term: float, ranking_term: float) -> float:
    total = float(skipgram_term) + float(ranking_term)
    if not np.isfinite(total):
        raise NonFiniteLossError(
            f"joint loss is not finite (skipgram={skipgram_term}, ranking={ranking_term})"
        )
    return total


# ---------------------------------------------------------------------------
# tape assembly
# ---------------------------------------------------------------------------

def build_batch_loss(
    tape: Tape,
    ctx: ForwardContext,
    pvars: ParamVars,
    triples: Sequence[BprTriple],
    sg_pairs: Sequence[SkipGramPair],
    *,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    skipgram_form: str = "stabilized",
    include_skipgram: bool = True,
) -> Var:
    """Joint loss for one batch on the given tape."""
    config = ctx.config
    tag_layers = tag_layers_on_tape(tape, ctx, pvars.tag_emb, config.layers)

    users = sorted({t.user for t in triples})
    items = sorted({i for t in triples for i in (t.positive, t.negative)})
    user_pos = {u: i for i, u in enumerate(users)}
    item_pos = {r: i for i, r in enumerate(items)}

    user_rows = ad.concat_rows([
        ad.reshape(user_rep_on_tape(tape, ctx, pvars, u, tag_layers, variant), (1, config.dim))
        for u in users
    ])
    item_rows = item_rows_on_tape(tape, ctx, pvars, np.array(items, dtype=np.int64), tag_layers)

    u_stack = ad.gather_rows(user_rows, np.array([user_pos[t.user] for t in triples]))
    p_stack = ad.gather_rows(item_rows, np.array([item_pos[t.positive] for t in triples]))
    n_stack = ad.gather_rows(item_rows, np.array([item_pos[t.negative] for t in triples]))
    margins = ad.sub(ad.row_dot(u_stack, p_stack), ad.row_dot(u_stack, n_stack))
    rank_term = ad.scale(ad.total_sum(ad.log_sigmoid(margins)), -1.0 / len(triples))

    loss = rank_term
    if config.l2_weight > 0.0:
        touched = [
            ad.sum_squares(ad.gather_rows(pvars.user_emb, np.array(users, dtype=np.int64))),
            ad.sum_squares(ad.gather_rows(pvars.item_emb, np.array(items, dtype=np.int64))),
            ad.sum_squares(pvars.tag_emb),
            ad.sum_squares(pvars.routing_transform),
            ad.sum_squares(pvars.attn_transform),
            ad.sum_squares(pvars.attn_score),
            ad.sum_squares(pvars.tag_context),
        ]
        penalty = touched[0]
        for term in touched[1:]:
            penalty = ad.add(penalty, term)
        loss = ad.add(loss, ad.scale(penalty, config.l2_weight))

    if include_skipgram and sg_pairs:
        centers = ad.gather_rows(pvars.tag_emb, np.array([p.center for p in sg_pairs]))
        pos = ad.gather_rows(pvars.tag_context, np.array([p.positive for p in sg_pairs]))
        neg = ad.gather_rows(pvars.tag_context, np.array([p.negative for p in sg_pairs]))
        s_pos = ad.row_dot(pos, centers)
        s_neg = ad.row_dot(neg, centers)
        if skipgram_form == "literal":
            per_pair = ad.sub(ad.log_sigmoid(s_neg), ad.log_sigmoid(s_pos))
        else:
            per_pair = ad.negate(ad.add(ad.log_sigmoid(s_pos), ad.log_sigmoid(ad.negate(s_neg))))
        loss = ad.add(loss, ad.mean_all(per_pair))
    return loss


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_recall: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_recall: float = 0.0
    aborted: bool = False


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; carries the last-good checkpoint."""

    def __init__(self, message: str, result: TrainResult) -> None:
        super().__init__(message)
        self.result = result


def train(
    graph: HeteroGraph,
    params: ModelParams,
    model_config: ModelConfig,
    train_config: TrainConfig,
    splits: InteractionSplits,
    *,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    include_skipgram: bool = True,
    validation_k: int = 50,
) -> TrainResult:
    """Optimize in place; returns the best-by-validation parameter snapshot.

    Epochs shuffle the observed pairs, resample negatives and skip-gram pairs,
    and step Adam once per batch. A non-finite loss aborts with the best
    checkpoint so far attached to the exception.
    """
    from .evaluation import evaluate  # deferred: evaluation imports this module

    seed = train_config.seed
    ctx = ForwardContext(graph, model_config, seed)
    pairs = sorted(set(splits.train))
    if not pairs:
        raise ValueError("training split is empty")
    observed = set(pairs)
    n_items = graph.node_count(TARGET_ITEM)
    epoch_rng = substream(seed, STREAM_EPOCH)
    neg_rng = substream(seed, STREAM_BPR)
    sg_rng = substream(seed, STREAM_SKIPGRAM)
    adam = AdamState(learning_rate=train_config.learning_rate)
    result = TrainResult(params=params.copy())

    def validation_recall() -> float:
        if not splits.validation:
            return 0.0
        report = evaluate(
            graph, params, model_config, splits.validation, splits.train,
            exclude_train=True, seed=seed, variant=variant, ks=(validation_k,),
        )
        return report.value("recall", validation_k, "overall")

    for epoch in range(train_config.epochs):
        order = epoch_rng.permutation(len(pairs))
        batch_losses: list[float] = []
        for start in range(0, len(pairs), train_config.batch_size):
            chunk = [pairs[i] for i in order[start:start + train_config.batch_size]]
            triples = []
            for user, positive in chunk:
                negative = _draw_negative_item(user, n_items, observed, neg_rng)
                if negative is None:
                    logger.warning("negative sampling exhausted for user %d; skipping", user)
                    continue
                triples.append(BprTriple(user, positive, negative))
            if not triples:
                continue
            sg_pairs = (
                sample_skipgram_pairs(graph, len(triples), seed, rng=sg_rng)
                if include_skipgram else []
            )
            tape = Tape()
            pvars = lift_params(tape, params)
            loss = build_batch_loss(
                tape, ctx, pvars, triples, sg_pairs,
                variant=variant, skipgram_form=train_config.skipgram_form,
                include_skipgram=include_skipgram,
            )
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                result.aborted = True
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}; keeping best checkpoint", result
                )
            batch_losses.append(loss_value)
            grads = backward(tape, loss)
            named = {name: grads[leaf] for name, leaf in leaf_map(pvars).items()}
            adam_step(adam, params.as_dict(), named)
        recall = validation_recall()
        result.log.append(EpochStats(epoch, float(np.mean(batch_losses)) if batch_losses else 0.0, recall))
        if recall > result.best_recall or result.best_epoch < 0:
            result.best_epoch = epoch
            result.best_recall = recall
            result.params = params.copy()
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


CHECKPOINT_MAGIC = b"M2GN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHBIIII")
_DTYPE_CODES = {8: np.dtype("<f8"), 4: np.dtype("<f4")}


def save_checkpoint(params: ModelParams, path, dtype: str = "float64") -> None:
    """Write magic, version, width code, shape header, then family tensors."""
    width = 8 if dtype == "float64" else 4
    if dtype not in ("float64", "float32"):
        raise ValueError("dtype must be float64 or float32")
    params.check_finite()
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, width,
        params.dim, params.user_emb.shape[0],
        params.item_emb.shape[0], params.tag_emb.shape[0],
    )
    out = [header]
    for name in PARAM_FAMILIES:
        out.append(np.ascontiguousarray(getattr(params, name), dtype=_DTYPE_CODES[width]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint shorter than its header")
    magic, version, width, dim, n_users, n_items, n_tags = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if width not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported element width {width}")
    shapes = {
        "user_emb": (n_users, dim),
        "item_emb": (n_items, dim),
        "tag_emb": (n_tags, dim),
        "routing_transform": (dim, dim),
        "attn_transform": (dim, dim),
        "attn_score": (dim, 1),
        "tag_context": (n_tags, dim),
    }
    expected = _HEADER.size + sum(
        int(np.prod(shape)) * width for shape in shapes.values()
    )
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint is {len(blob)} bytes, expected {expected} (truncated or corrupt)"
        )
    dtype = _DTYPE_CODES[width]
    offset = _HEADER.size
    arrays: dict[str, np.ndarray] = {}
    for name in PARAM_FAMILIES:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += count * width
        arrays[name] = arr.astype(np.float64).reshape(shape)
    params = ModelParams.from_dict(arrays)
    params.check_finite()
    return params


# ---------------------------------------------------------------------------
# model-level gradient check
# ---------------------------------------------------------------------------

def model_loss_builder(
    graph: HeteroGraph,
    model_config: ModelConfig,
    triples: Sequence[BprTriple],
    sg_pairs: Sequence[SkipGramPair],
    seed: int,
    *,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    skipgram_form: str = "stabilized",
    include_skipgram: bool = True,
):
    """Closure mapping parameter arrays to (tape, joint loss, leaf map)."""
    ctx = ForwardContext(graph, model_config, seed)

    def build(param_arrays: Mapping[str, np.ndarray]):
        tape = Tape()
        pvars = ParamVars(**{
            name: tape.leaf(np.asarray(param_arrays[name], dtype=np.float64))
            for name in PARAM_FAMILIES
        })
        loss = build_batch_loss(
            tape, ctx, pvars, triples, sg_pairs,
            variant=variant, skipgram_form=skipgram_form,
            include_skipgram=include_skipgram,
        )
        return tape, loss, leaf_map(pvars)

    return build


def check_model_gradients(
    graph: HeteroGraph,
    params: ModelParams,
    model_config: ModelConfig,
    triples: Sequence[BprTriple],
    sg_pairs: Sequence[SkipGramPair],
    seed: int,
    *,
    tolerance: float = 1e-4,
    samples_per_family: int = 20,
    skipgram_form: str = "stabilized",
) -> GradCheckReport:
    """Full-model analytic gradients vs central differences, per family."""
    builder = model_loss_builder(
        graph, model_config, triples, sg_pairs, seed, skipgram_form=skipgram_form
    )
    return ad.grad_check(
        builder, params.as_dict(),
        samples_per_family=samples_per_family, tolerance=tolerance, seed=seed,
    )
