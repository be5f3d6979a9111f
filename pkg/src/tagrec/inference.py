"""Checkpoint-backed recommendation and interpretability dumps.

``recommend`` ranks the target catalog for one user with training positives
removed; ``explain`` additionally exposes the two-step aggregation: which
capsule each interacted tag routes to (argmax assignment weight, with the
final routing logits) and how much attention each capsule receives per layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import load_dataset
from .evaluation import rank_items
from .graph import USER, HeteroGraph
from .model import (
    AggregatorVariant,
    ForwardContext,
    ModelConfig,
    ModelParams,
    UserDiagnostics,
    all_item_reps,
    forward_user,
)
from .training import InteractionSplits, load_checkpoint


@dataclass
class TagAssignment:
    metapath: int
    layer: int
    tag: int
    capsule: int
    logit: float


@dataclass
class ExplainDump:
    user: int
    assignments: list[TagAssignment]
    attention: list  # AttentionWeights per layer
    top_items: list[tuple[int, float]]

    def to_text(self) -> str:
        lines = [f"user={self.user}"]
        for a in self.assignments:
            lines.append(f"assign/{a.metapath}/{a.layer}/{a.tag}={a.capsule}")
            lines.append(f"assign_logit/{a.metapath}/{a.layer}/{a.tag}={a.logit!r}")
        for attn in self.attention:
            for slot, weight in enumerate(attn.weights):
                if attn.active[slot]:
                    lines.append(f"attention/{attn.layer}/{slot}={float(weight)!r}")
        for rank, (item, item_score) in enumerate(self.top_items, start=1):
            lines.append(f"rec/{rank}/item={item}")
            lines.append(f"rec/{rank}/score={item_score!r}")
        return "\n".join(lines) + "\n"


def rank_for_user(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    splits: InteractionSplits,
    user: int,
    k: int,
    *,
    exclude_train: bool = True,
    seed: int = 0,
    variant: AggregatorVariant = AggregatorVariant.FULL,
) -> tuple[list[tuple[int, float]], UserDiagnostics]:
    """Top-k (item, score) by descending score, index-ascending on ties."""
    if not 0 <= user < graph.node_count(USER):
        raise ValueError(f"unknown user {user}")
    if k < 1:
        raise ValueError("k must be positive")
    ctx = ForwardContext(graph, config, seed)
    user_rep, diagnostics = forward_user(graph, params, config, user, seed, variant, ctx)
    scores = all_item_reps(graph, params, config, ctx) @ user_rep
    if exclude_train:
        held = [item for u, item in splits.train if u == user]
        if held:
            scores[held] = -np.inf
    order = rank_items(scores)
    ranked = [(int(i), float(scores[i])) for i in order if np.isfinite(scores[i])]
    return ranked[:k], diagnostics


def recommend(
    checkpoint_path: Path | str,
    manifest_path: Path | str,
    user: int,
    k: int,
    *,
    config: ModelConfig,
    seed: int = 0,
    variant: AggregatorVariant = AggregatorVariant.FULL,
) -> list[tuple[int, float]]:
    graph, splits = load_dataset(manifest_path)
    params = load_checkpoint(checkpoint_path)
    ranked, _ = rank_for_user(
        graph, params, config, splits, user, k,
        seed=seed, variant=variant,
    )
    return ranked


def build_explain_dump(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    splits: InteractionSplits,
    user: int,
    *,
    k: int = 10,
    seed: int = 0,
    variant: AggregatorVariant = AggregatorVariant.FULL,
) -> ExplainDump:
    if variant not in (AggregatorVariant.FULL, AggregatorVariant.HARD):
        raise ValueError("explain requires a capsule-routing variant (full or hard)")
    ranked, diagnostics = rank_for_user(
        graph, params, config, splits, user, k, seed=seed, variant=variant,
    )
    assignments = []
    for caps in diagnostics.capsules:
        chosen = caps.weights.argmax(axis=1)
        for row, tag in enumerate(caps.tag_indices):
            capsule = int(chosen[row])
            assignments.append(TagAssignment(
                metapath=caps.metapath, layer=caps.layer, tag=int(tag),
                capsule=capsule, logit=float(caps.logits[row, capsule]),
            ))
    return ExplainDump(
        user=user,
        assignments=assignments,
        attention=diagnostics.attention,
        top_items=ranked,
    )


def explain(
    checkpoint_path: Path | str,
    manifest_path: Path | str,
    user: int,
    *,
    config: ModelConfig,
    k: int = 10,
    seed: int = 0,
    variant: AggregatorVariant = AggregatorVariant.FULL,
) -> ExplainDump:
    graph, splits = load_dataset(manifest_path)
    params = load_checkpoint(checkpoint_path)
    return build_explain_dump(
        graph, params, config, splits, user, k=k, seed=seed, variant=variant,
    )
