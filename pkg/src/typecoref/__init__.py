"""Mention-linking coreference resolution with entity-type features.

The package covers the full experiment loop: CoNLL-2012 corpus I/O with
entity-type sidecars, a binary store of precomputed token embeddings, a
trainable mention-ranking model with type-augmented variants, coreference
scorers with cluster-impurity counts, and a cross-validated entity-type
predictor.  ``typecoref --help`` lists the command-line surface.
"""

from .corpus import (
    ConllParseError,
    Document,
    MentionSpan,
    attach_sidecar,
    emit_conll,
    load_type_sidecar,
    map_document_types,
    parse_conll,
    propagate_cluster_types,
)
from .metrics import (
    ScoredDocument,
    ScoreReport,
    b_cubed,
    bootstrap_significance,
    ceaf_e,
    impure_clusters,
    muc,
    score_by_group,
    score_documents,
)
from .model import (
    VARIANTS,
    antecedent_distribution,
    encode_mention,
    pair_score,
    resolve,
    train,
    type_consistency,
)
from .neural import Config, Parameters
from .schemes import NA, SCHEME_NAMES, TypeScheme, get_scheme, map_to_common
from .store import EmbeddingStore, open_store, synth_embeddings, write_store
from .typepred import build_marked_sequence, classify, crossval_predict, evaluate_typepred

__version__ = "0.1.0"

__all__ = [
    "ConllParseError", "Document", "MentionSpan", "attach_sidecar", "emit_conll",
    "load_type_sidecar", "map_document_types", "parse_conll", "propagate_cluster_types",
    "ScoredDocument", "ScoreReport", "b_cubed", "bootstrap_significance", "ceaf_e",
    "impure_clusters", "muc", "score_by_group", "score_documents",
    "VARIANTS", "antecedent_distribution", "encode_mention", "pair_score", "resolve",
    "train", "type_consistency",
    "Config", "Parameters",
    "NA", "SCHEME_NAMES", "TypeScheme", "get_scheme", "map_to_common",
    "EmbeddingStore", "open_store", "synth_embeddings", "write_store",
    "build_marked_sequence", "classify", "crossval_predict", "evaluate_typepred",
    "__version__",
]
