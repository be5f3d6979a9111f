"""Synthetic dataset generator with planted cross-domain interest clusters.

The first ``clusters`` tag blocks are interest clusters: tight tag-tag
communities whose tags appear on target items, and every user holds 1-3 of
them. The remaining ``background_clusters`` blocks form a scattered pool of
behavioral noise tags: sparsely inter-linked (so the skip-gram regularizer
keeps them alive without making them cohere), mostly confined to source
domains, and occasionally mentioned on target items as decoys. Target-domain
interactions only touch items tagged with the user's clusters, while
source-domain logs mix user-cluster items with noise-tagged items at a
configurable noise ratio. A slice of users keeps no target-domain history in
the training split (cold start). The first source domain is a two-hop
user-item-tag chain; the second, when present, routes through bridge nodes
for a three-hop metapath. Ground-truth cluster assignments are emitted
alongside the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest, EdgeFileSpec, write_pairs
from .graph import TAG, TARGET_ITEM, USER, NodeType, bridge, source_item
from .rng import STREAM_SYNTHETIC, substream


@dataclass(frozen=True)
class SyntheticSpec:
    users: int = 260
    target_items: int = 320
    tags: int = 160
    clusters: int = 8
    background_clusters: int = 16
    source_domains: int = 2
    source_items: tuple[int, ...] | None = None
    noise_ratio: float = 0.9
    target_interactions: tuple[int, int] = (3, 20)   # per-user range
    source_interactions: tuple[int, int] = (8, 16)   # per-user-per-domain range
    tags_per_item: int = 2
    tt_degree: int = 4
    cross_cluster_tt: int = 2  # semantic bridges from each background cluster
    decoy_rate: float = 0.5    # chance an item carries one background tag
    emerging_share: float = 0.8  # held-out bias toward a cluster absent from training
    distractor_share: float = 0.65  # noise fraction spent on domain-systematic interests
    distractors_per_domain: int = 2  # interest clusters every user of a domain over-samples
    cold_user_fraction: float = 0.2
    validation_fraction: float = 0.15
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ValueError("noise_ratio must be in [0, 1]")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.background_clusters < 0:
            raise ValueError("background_clusters must be >= 0")
        if self.tags < self.total_clusters:
            raise ValueError("need at least one tag per cluster")
        if self.source_domains < 1:
            raise ValueError("source_domains must be >= 1")
        if self.target_interactions[0] < 1:
            raise ValueError("target interactions must be >= 1 per user")
        smallest_pool = self.target_items // self.clusters
        if self.target_interactions[1] > smallest_pool:
            raise ValueError(
                f"infeasible spec: up to {self.target_interactions[1]} interactions per user "
                f"but only {smallest_pool} target items per cluster"
            )
        if not 0.0 <= self.cold_user_fraction < 1.0:
            raise ValueError("cold_user_fraction must be in [0, 1)")

    @property
    def total_clusters(self) -> int:
        return self.clusters + self.background_clusters

    def domain_sizes(self) -> tuple[int, ...]:
        if self.source_items is not None:
            if len(self.source_items) != self.source_domains:
                raise ValueError("source_items must list one size per source domain")
            return self.source_items
        return tuple(
            max(2 * self.total_clusters, self.target_items // 2)
            for _ in range(self.source_domains)
        )


def _partition(n: int, k: int) -> np.ndarray:
    """Assignment of n indices to k near-equal contiguous blocks."""
    base = n // k
    sizes = np.full(k, base, dtype=np.int64)
    sizes[: n - base * k] += 1
    return np.repeat(np.arange(k, dtype=np.int64), sizes)


def generate_synthetic(spec: SyntheticSpec, out_dir: Path | str) -> Path:
    """Write the dataset under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "edges").mkdir(parents=True, exist_ok=True)
    (out / "splits").mkdir(parents=True, exist_ok=True)
    rng = substream(spec.seed, STREAM_SYNTHETIC)

    total = spec.total_clusters
    tag_cluster = _partition(spec.tags, total)
    cluster_tags = [np.flatnonzero(tag_cluster == c) for c in range(total)]

    # Tag relatedness: interest clusters get a ring plus random intra-cluster
    # extras (tight communities); background tags get a sparse random graph
    # over the whole background pool, which keeps them alive under skip-gram
    # without letting them cohere into directions of their own.
    tt_edges: set[tuple[int, int]] = set()
    for c in range(spec.clusters):
        members = cluster_tags[c]
        m = len(members)
        if m < 2:
            continue
        for i in range(m):
            a, b = int(members[i]), int(members[(i + 1) % m])
            tt_edges.add((min(a, b), max(a, b)))
        extras = max(0, spec.tt_degree - 2)
        for t in members:
            for other in rng.choice(members, size=min(extras, m - 1), replace=False):
                if int(other) != int(t):
                    tt_edges.add((min(int(t), int(other)), max(int(t), int(other))))
    background_tags = (
        np.concatenate([cluster_tags[c] for c in range(spec.clusters, total)])
        if total > spec.clusters else np.empty(0, np.int64)
    )
    if background_tags.size >= 2:
        for t in background_tags:
            partner = int(background_tags[int(rng.integers(background_tags.size))])
            if partner != int(t):
                tt_edges.add((min(int(t), partner), max(int(t), partner)))
        # a few semantic bridges into interest clusters so relatedness alone
        # cannot isolate the background pool
        for c in range(spec.clusters, total):
            for _ in range(spec.cross_cluster_tt):
                target_cluster = int(rng.integers(spec.clusters))
                a = int(rng.choice(cluster_tags[c]))
                b = int(rng.choice(cluster_tags[target_cluster]))
                if a != b:
                    tt_edges.add((min(a, b), max(a, b)))

    def item_tags_for(cluster: int) -> list[int]:
        if cluster >= spec.clusters and background_tags.size:
            # background items carry scattered tags from the whole pool
            count = int(rng.integers(1, spec.tags_per_item + 1))
            return sorted({
                int(background_tags[int(rng.integers(background_tags.size))])
                for _ in range(count)
            })
        pool = cluster_tags[cluster]
        count = int(rng.integers(1, spec.tags_per_item + 1))
        tags = {int(t) for t in rng.choice(pool, size=min(count, len(pool)), replace=False)}
        # items mention target-irrelevant aspects too
        if background_tags.size and rng.random() < spec.decoy_rate:
            tags.add(int(background_tags[int(rng.integers(background_tags.size))]))
        return sorted(tags)

    item_cluster = _partition(spec.target_items, spec.clusters)
    target_tag_edges = []
    for item in range(spec.target_items):
        for t in item_tags_for(int(item_cluster[item])):
            target_tag_edges.append((item, t))

    domain_sizes = spec.domain_sizes()
    source_cluster: list[np.ndarray] = []
    source_tag_edges: list[list[tuple[int, int]]] = []
    bridge_edges: list[tuple[int, int]] = []   # domain 2 only: item -> bridge
    bridge_tag_edges: list[tuple[int, int]] = []
    for domain, size in enumerate(domain_sizes, start=1):
        clusters = _partition(size, total)
        source_cluster.append(clusters)
        edges: list[tuple[int, int]] = []
        if domain == 2:
            # three-hop domain: each item owns two bridge nodes carrying the tags
            for item in range(size):
                for b in (2 * item, 2 * item + 1):
                    bridge_edges.append((item, b))
                    for t in item_tags_for(int(clusters[item])):
                        bridge_tag_edges.append((b, t))
        else:
            for item in range(size):
                for t in item_tags_for(int(clusters[item])):
                    edges.append((item, t))
        source_tag_edges.append(edges)

    # Users: 1-3 interest clusters each; a slice is target-domain cold.
    user_clusters = []
    for _ in range(spec.users):
        k = int(rng.integers(1, min(3, spec.clusters) + 1))
        user_clusters.append(np.sort(rng.choice(spec.clusters, size=k, replace=False)))
    n_cold = int(round(spec.cold_user_fraction * spec.users))
    cold_users = set(int(u) for u in rng.choice(spec.users, size=n_cold, replace=False))

    item_pool_by_cluster = [np.flatnonzero(item_cluster == c) for c in range(spec.clusters)]
    train, validation, test = [], [], []
    lo, hi = spec.target_interactions
    for user in range(spec.users):
        own = user_clusters[user]
        pool = np.concatenate([item_pool_by_cluster[c] for c in own])
        n = int(rng.integers(lo, hi + 1))
        picks = rng.choice(pool, size=min(n, pool.shape[0]), replace=False)
        if user in cold_users:
            test.extend((user, int(i)) for i in picks)
            continue
        n_test = max(1, round(spec.test_fraction * len(picks)))
        n_val = round(spec.validation_fraction * len(picks))
        n_val = min(n_val, len(picks) - n_test - 1)
        if len(own) >= 2:
            # one interest is emerging: the training history misses it, the
            # source domains still carry its tags, and both held-out splits
            # lean toward it
            emerging = int(own[int(rng.integers(len(own)))])
            emerging_items = [int(i) for i in picks if item_cluster[i] == emerging]
            settled_items = [int(i) for i in picks if item_cluster[i] != emerging]
            n_held = n_test + max(0, n_val)
            want = min(len(emerging_items), max(1, round(spec.emerging_share * n_held)))
            held = emerging_items[:want]
            leftovers = emerging_items[want:] + settled_items
            extra = n_held - len(held)
            if extra > 0:
                held += leftovers[:extra]
                leftovers = leftovers[extra:]
            # interleave so test and validation see the same mixture
            test.extend((user, i) for i in held[0::2][: n_test])
            rest_held = held[0::2][n_test:] + held[1::2]
            test_needed = n_test - len(held[0::2][: n_test])
            if test_needed > 0:
                test.extend((user, i) for i in rest_held[:test_needed])
                rest_held = rest_held[test_needed:]
            validation.extend((user, i) for i in rest_held)
            train.extend((user, i) for i in leftovers)
        else:
            test.extend((user, int(i)) for i in picks[:n_test])
            validation.extend((user, int(i)) for i in picks[n_test:n_test + max(0, n_val)])
            train.extend((user, int(i)) for i in picks[n_test + max(0, n_val):])

    # Source logs. True interests surface weakly but in every source domain.
    # Noise splits between domain-systematic interests (the same few clusters
    # over-sampled by every user of that domain: signals native to the source
    # domain but mostly wrong for the target) and the scattered background
    # pool. Domain-junk clusters are real interests of a minority of users,
    # so their tags stay load-bearing and cannot simply be shrunk away.
    source_user_edges: list[list[tuple[int, int]]] = []
    s_lo, s_hi = spec.source_interactions
    domain_junk: list[list[int]] = []
    junk_order = rng.permutation(spec.clusters)
    cursor = 0
    for domain in range(1, spec.source_domains + 1):
        take = min(spec.distractors_per_domain, spec.clusters)
        picked = sorted(int(junk_order[(cursor + i) % spec.clusters]) for i in range(take))
        cursor += take
        domain_junk.append(picked)
    for domain, size in enumerate(domain_sizes, start=1):
        clusters = source_cluster[domain - 1]
        pools = [np.flatnonzero(clusters == c) for c in range(total)]
        edges: list[tuple[int, int]] = []
        scatter_home = [c for c in range(spec.clusters, total)]
        scatter_pool = np.concatenate([pools[c] for c in scatter_home]) if scatter_home else None
        junk_pool = np.concatenate([pools[c] for c in domain_junk[domain - 1]])
        for user in range(spec.users):
            own = set(int(c) for c in user_clusters[user])
            own_pool = np.concatenate([pools[c] for c in sorted(own)])
            foreign_junk = [c for c in domain_junk[domain - 1] if c not in own]
            user_junk_pool = (
                np.concatenate([pools[c] for c in foreign_junk]) if foreign_junk
                else scatter_pool if scatter_pool is not None else own_pool
            )
            m = int(rng.integers(s_lo, s_hi + 1))
            chosen: set[int] = set()
            for _ in range(4 * m):
                if len(chosen) >= m:
                    break
                if rng.random() < spec.noise_ratio:
                    if rng.random() < spec.distractor_share or scatter_pool is None:
                        pool = user_junk_pool
                    else:
                        pool = scatter_pool
                else:
                    pool = own_pool
                chosen.add(int(pool[int(rng.integers(pool.shape[0]))]))
            edges.extend((user, item) for item in sorted(chosen))
        source_user_edges.append(edges)

    # ---- files ------------------------------------------------------------
    write_pairs(out / "edges" / "user_target.tsv", sorted(train))
    write_pairs(out / "edges" / "target_tag.tsv", sorted(target_tag_edges))
    write_pairs(out / "edges" / "tag_tag.tsv", sorted(tt_edges))
    counts: dict[NodeType, int] = {
        USER: spec.users,
        TARGET_ITEM: spec.target_items,
        TAG: spec.tags,
    }
    edges: dict[str, EdgeFileSpec] = {
        "user_target": EdgeFileSpec("user_target", _et(USER, TARGET_ITEM), "edges/user_target.tsv"),
        "target_tag": EdgeFileSpec("target_tag", _et(TARGET_ITEM, TAG), "edges/target_tag.tsv"),
        "tag_tag": EdgeFileSpec("tag_tag", _et(TAG, TAG), "edges/tag_tag.tsv"),
    }
    metapaths: list[tuple[int, tuple[str, ...]]] = [(0, ("user_target", "target_tag"))]
    for domain, size in enumerate(domain_sizes, start=1):
        src = source_item(domain)
        counts[src] = size
        user_edge = f"user_source_{domain}"
        write_pairs(out / "edges" / f"{user_edge}.tsv", sorted(source_user_edges[domain - 1]))
        edges[user_edge] = EdgeFileSpec(user_edge, _et(USER, src), f"edges/{user_edge}.tsv")
        if domain == 2:
            brg = bridge(domain)
            counts[brg] = 2 * size
            write_pairs(out / "edges" / "source_bridge_2.tsv", sorted(bridge_edges))
            write_pairs(out / "edges" / "bridge_tag_2.tsv", sorted(set(bridge_tag_edges)))
            edges["source_bridge_2"] = EdgeFileSpec(
                "source_bridge_2", _et(src, brg), "edges/source_bridge_2.tsv"
            )
            edges["bridge_tag_2"] = EdgeFileSpec("bridge_tag_2", _et(brg, TAG), "edges/bridge_tag_2.tsv")
            metapaths.append((domain, (user_edge, "source_bridge_2", "bridge_tag_2")))
        else:
            tag_edge = f"source_tag_{domain}"
            write_pairs(out / "edges" / f"{tag_edge}.tsv", sorted(set(source_tag_edges[domain - 1])))
            edges[tag_edge] = EdgeFileSpec(tag_edge, _et(src, TAG), f"edges/{tag_edge}.tsv")
            metapaths.append((domain, (user_edge, tag_edge)))

    write_pairs(out / "splits" / "train.tsv", sorted(train))
    write_pairs(out / "splits" / "validation.tsv", sorted(validation))
    write_pairs(out / "splits" / "test.tsv", sorted(test))

    with open(out / "clusters.tsv", "w", encoding="utf-8") as fh:
        for t in range(spec.tags):
            fh.write(f"tag\t{t}\t{int(tag_cluster[t])}\n")
        for i in range(spec.target_items):
            fh.write(f"target_item\t{i}\t{int(item_cluster[i])}\n")
        for domain, clusters in enumerate(source_cluster, start=1):
            for i in range(clusters.shape[0]):
                fh.write(f"source_item_{domain}\t{i}\t{int(clusters[i])}\n")
        for user in range(spec.users):
            joined = ",".join(str(int(c)) for c in user_clusters[user])
            fh.write(f"user\t{user}\t{joined}\n")

    manifest = DatasetManifest(
        source_domains=spec.source_domains,
        counts=counts,
        edges=edges,
        metapaths=metapaths,
        splits={name: f"splits/{name}.tsv" for name in ("train", "validation", "test")},
        base_dir=out,
    )
    manifest_path = out / "manifest.ini"
    manifest.write(manifest_path)
    return manifest_path


def _et(src: NodeType, dst: NodeType):
    from .graph import EdgeType

    return EdgeType(src, dst, symmetric=(src == TAG and dst == TAG))


def load_ground_truth(path: Path | str) -> dict[str, dict[int, object]]:
    """Parse clusters.tsv into kind -> index -> cluster (users: cluster list)."""
    out: dict[str, dict[int, object]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        kind, index, value = raw.split("\t")
        bucket = out.setdefault(kind, {})
        if kind == "user":
            bucket[int(index)] = [int(c) for c in value.split(",")]
        else:
            bucket[int(index)] = int(value)
    return out
