"""Top-K retrieval metrics, user segmentation, and aggregation ablations.

Evaluation ranks every test user against the full target catalog (training
positives optionally removed), breaks ties by ascending item index, and
reports Recall@K / Hit@K overall and per activity group. The ablation runner
retrains each aggregation variant from scratch per seed on identical data.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .graph import TAG, TARGET_ITEM, USER, HeteroGraph
from .model import (
    AggregatorVariant,
    ForwardContext,
    ModelConfig,
    ModelParams,
    all_item_reps,
    lift_params,
    tag_layers_on_tape,
    user_rep_on_tape,
)
from .autodiff import Tape


class UserGroup(enum.Enum):
    COLD_START = "cold_start"
    INACTIVE = "inactive"
    ACTIVE = "active"


GROUP_ORDER = (UserGroup.COLD_START, UserGroup.INACTIVE, UserGroup.ACTIVE)
OVERALL = "overall"
DEFAULT_ACTIVE_THRESHOLD = 10


def segment_users(
    train_interactions: Iterable[tuple[int, int]],
    n_users: int,
    active_threshold: int = DEFAULT_ACTIVE_THRESHOLD,
) -> dict[int, UserGroup]:
    """Cold start: no training interactions; active: at least the threshold."""
    counts = np.zeros(n_users, dtype=np.int64)
    for user, _ in train_interactions:
        counts[user] += 1
    out: dict[int, UserGroup] = {}
    for user in range(n_users):
        if counts[user] == 0:
            out[user] = UserGroup.COLD_START
        elif counts[user] < active_threshold:
            out[user] = UserGroup.INACTIVE
        else:
            out[user] = UserGroup.ACTIVE
    return out


def recall_at_k(ranked: Sequence[int], ground_truth: set[int], k: int) -> float:
    """|top-k hits| / |ground truth|; caller guarantees non-empty truth."""
    if not ground_truth:
        raise ValueError("ground truth must be non-empty")
    if k < 1:
        raise ValueError("k must be positive")
    hits = sum(1 for item in ranked[:k] if item in ground_truth)
    return hits / len(ground_truth)


def hit_at_k(ranked: Sequence[int], ground_truth: set[int], k: int) -> int:
    if not ground_truth:
        raise ValueError("ground truth must be non-empty")
    if k < 1:
        raise ValueError("k must be positive")
    return int(any(item in ground_truth for item in ranked[:k]))


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties broken by ascending index."""
    return np.lexsort((np.arange(scores.shape[0]), -scores))


@dataclass
class EvalReport:
    """Metric values keyed by (metric, k, scope) plus per-scope user counts."""

    values: dict[tuple[str, int, str], float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    ks: tuple[int, ...] = (50, 100)

    def value(self, metric: str, k: int, scope: str = OVERALL) -> float:
        return self.values[(metric, k, scope)]

    def to_text(self) -> str:
        lines = []
        for scope in (OVERALL, *(g.value for g in GROUP_ORDER)):
            lines.append(f"users/{scope}={self.counts.get(scope, 0)}")
        for metric in ("recall", "hit"):
            for k in self.ks:
                for scope in (OVERALL, *(g.value for g in GROUP_ORDER)):
                    key = (metric, k, scope)
                    if key in self.values:
                        lines.append(f"{metric}@{k}/{scope}={self.values[key]!r}")
        return "\n".join(lines) + "\n"


def _user_representations(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    users: Sequence[int],
    seed: int,
    variant: AggregatorVariant,
    threads: int,
    ctx: ForwardContext | None = None,
) -> np.ndarray:
    if ctx is None:
        ctx = ForwardContext(graph, config, seed)

    def one(user: int) -> np.ndarray:
        tape = Tape()
        pvars = lift_params(tape, params, trainable=False)
        tag_layers = tag_layers_on_tape(tape, ctx, pvars.tag_emb, config.layers)
        return user_rep_on_tape(tape, ctx, pvars, user, tag_layers, variant).value

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(one, users))
    else:
        reps = [one(u) for u in users]
    return np.vstack(reps) if reps else np.zeros((0, config.dim))


def evaluate(
    graph: HeteroGraph,
    params: ModelParams,
    config: ModelConfig,
    test_interactions: Sequence[tuple[int, int]],
    train_interactions: Sequence[tuple[int, int]],
    *,
    exclude_train: bool = True,
    seed: int = 0,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    ks: tuple[int, ...] = (50, 100),
    threads: int = 1,
    active_threshold: int = DEFAULT_ACTIVE_THRESHOLD,
) -> EvalReport:
    """Full-catalog ranking metrics, overall and per user group.

    Users with no held-out items are excluded from every average. Group
    averages recombine exactly to the overall value under user weighting.
    """
    truth: dict[int, set[int]] = {}
    for user, item in test_interactions:
        truth.setdefault(user, set()).add(item)
    users = sorted(u for u, items in truth.items() if items)
    groups = segment_users(train_interactions, graph.node_count(USER), active_threshold)
    train_by_user: dict[int, list[int]] = {}
    for user, item in train_interactions:
        train_by_user.setdefault(user, []).append(item)

    ctx = ForwardContext(graph, config, seed)
    item_matrix = all_item_reps(graph, params, config, ctx)
    user_matrix = _user_representations(graph, params, config, users, seed, variant, threads, ctx)

    max_k = max(ks) if ks else 0
    per_user: dict[int, dict[tuple[str, int], float]] = {}
    for row, user in enumerate(users):
        scores = item_matrix @ user_matrix[row]
        if exclude_train and user in train_by_user:
            scores = scores.copy()
            scores[train_by_user[user]] = -np.inf
        top = rank_items(scores)[:max_k]
        gt = truth[user]
        metrics = {}
        for k in ks:
            metrics[("recall", k)] = recall_at_k(top, gt, k)
            metrics[("hit", k)] = float(hit_at_k(top, gt, k))
        per_user[user] = metrics

    report = EvalReport(ks=tuple(ks))
    scopes: dict[str, list[int]] = {OVERALL: users}
    for group in GROUP_ORDER:
        scopes[group.value] = [u for u in users if groups[u] is group]
    for scope, members in scopes.items():
        report.counts[scope] = len(members)
        if not members:
            continue
        for metric in ("recall", "hit"):
            for k in ks:
                mean = float(np.mean([per_user[u][(metric, k)] for u in members]))
                report.values[(metric, k, scope)] = mean
    return report


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

@dataclass
class VariantOutcome:
    per_seed: list[EvalReport]
    mean: dict[tuple[str, int, str], float]
    std: dict[tuple[str, int, str], float]

    def seed_values(self, metric: str, k: int, scope: str = OVERALL) -> np.ndarray:
        key = (metric, k, scope)
        missing = [i for i, r in enumerate(self.per_seed) if key not in r.values]
        if missing:
            raise KeyError(
                f"{metric}@{k}/{scope} absent from seed runs {missing} "
                f"(no users in that group?)"
            )
        return np.array([r.values[key] for r in self.per_seed])


@dataclass
class AblationReport:
    variants: dict[str, VariantOutcome]
    seeds: tuple[int, ...]
    ks: tuple[int, ...]

    def to_text(self) -> str:
        lines = [f"seeds={','.join(str(s) for s in self.seeds)}"]
        for name in self.variants:
            outcome = self.variants[name]
            for metric in ("recall", "hit"):
                for k in self.ks:
                    for scope in (OVERALL, *(g.value for g in GROUP_ORDER)):
                        key = (metric, k, scope)
                        if key in outcome.mean:
                            lines.append(
                                f"{name}/{metric}@{k}/{scope}/mean={outcome.mean[key]!r}"
                            )
                            lines.append(
                                f"{name}/{metric}@{k}/{scope}/std={outcome.std[key]!r}"
                            )
        return "\n".join(lines) + "\n"


def run_ablation(
    graph: HeteroGraph,
    splits,
    model_config: ModelConfig,
    train_config,
    variants: Sequence[AggregatorVariant],
    seeds: Sequence[int],
    *,
    include_skipgram: bool = True,
    ks: tuple[int, ...] = (50, 100),
    threads: int = 1,
) -> AblationReport:
    """Train every variant from scratch per seed on identical data and report
    per-variant mean and standard deviation of the test metrics."""
    from .training import train  # deferred: training imports this module

    outcomes: dict[str, VariantOutcome] = {}
    for variant in variants:
        reports: list[EvalReport] = []
        for seed in seeds:
            params = ModelParams.init(
                graph.node_count(USER), graph.node_count(TARGET_ITEM),
                graph.node_count(TAG), model_config.dim, seed,
            )
            seed_config = replace(train_config, seed=seed)
            result = train(
                graph, params, model_config, seed_config, splits,
                variant=variant, include_skipgram=include_skipgram,
            )
            reports.append(evaluate(
                graph, result.params, model_config, splits.test, splits.train,
                exclude_train=True, seed=seed, variant=variant, ks=ks, threads=threads,
            ))
        keys = set(reports[0].values)
        for r in reports[1:]:
            keys &= set(r.values)
        mean = {}
        std = {}
        for key in keys:
            samples = np.array([r.values[key] for r in reports])
            mean[key] = float(samples.mean())
            std[key] = float(samples.std(ddof=1)) if len(samples) > 1 else 0.0
        outcomes[variant.value] = VariantOutcome(reports, mean, std)
    return AblationReport(outcomes, tuple(seeds), tuple(ks))
