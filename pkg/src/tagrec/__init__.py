"""Tag-based cross-domain recommendation engine.

A heterogeneous user/item/tag graph feeds a layered representation model:
per-domain metapath tag sets are distilled into interest capsules by dynamic
routing, pooled across domains by exponent-sharpened attention, and trained
jointly with a pairwise ranking loss and a tag skip-gram regularizer on a
hand-rolled reverse-mode tape. Includes evaluation with user-group breakdown,
aggregation ablations, a planted-cluster synthetic generator, and a CLI.
"""

from .graph import (
    TAG,
    TAG_TAG,
    TARGET_ITEM,
    USER,
    EdgeType,
    GraphBuilder,
    HeteroGraph,
    MetapathSchema,
    NodeId,
    NodeType,
    bridge,
    metapath_neighbors,
    source_item,
)
from .model import (
    AggregatorVariant,
    ModelConfig,
    ModelParams,
    adaptive_capsule_count,
    dynamic_routing,
    forward_item,
    forward_user,
    inter_domain_attention,
    score,
    squash,
)
from .training import (
    BprTriple,
    InteractionSplits,
    SkipGramPair,
    TrainConfig,
    TrainResult,
    bpr_loss,
    joint_loss,
    load_checkpoint,
    sample_bpr_batch,
    save_checkpoint,
    skipgram_loss,
    train,
)
from .evaluation import EvalReport, UserGroup, evaluate, hit_at_k, recall_at_k, run_ablation, segment_users
from .data import DatasetManifest, load_dataset
from .synthetic import SyntheticSpec, generate_synthetic
from .inference import ExplainDump, explain, recommend

__all__ = [name for name in dir() if not name.startswith("_")]
