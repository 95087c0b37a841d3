"""Propagation-graph rumour classification with per-event balancing augmentation.

Pipeline stages: ingest raw thread archives, normalize tweets, balance
events by multifold oversampling, train GCN/GAT classifiers over the
propagation trees, and evaluate with leave-one-event-out cross-validation
including early-detection cohorts.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    BINARY,
    TERNARY,
    AdjacencyStructure,
    DataError,
    Dataset,
    IngestError,
    Label,
    Provenance,
    Thread,
    ThreadStructureError,
    Tweet,
    UserProfile,
    build_propagation_graph,
    ingest_pheme,
    read_threads_jsonl,
    validate_dataset,
    write_threads_jsonl,
)
from .features import (  # noqa: F401
    FileEmbedding,
    HashEmbedding,
    assemble_feature_matrix,
    fnv1a64,
    text_key,
    user_features,
)
from .mos import (  # noqa: F401
    AugmentationStrategy,
    CandidateTable,
    augment_thread,
    influence_weights,
    oversample_dataset,
    oversample_label,
    substitute_tweet,
)
from .preprocess import normalize_tweet, is_keyword  # noqa: F401
from .models import TrainConfig, gcn_forward, gat_forward, normalize_adjacency, train, predict  # noqa: F401
from .evaluate import (  # noqa: F401
    DEFAULT_DELAYS,
    Metrics,
    compute_metrics,
    early_cohort,
    loocv_folds,
    run_early_eval,
    run_loocv,
)
