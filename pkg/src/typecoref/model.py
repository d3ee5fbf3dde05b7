"""Mention-ranking coreference model with optional entity-type features.

A mention is represented by its boundary BiLSTM states, an attention pool
over its span, and width/quotation feature embeddings; the type-augmented
variants append the mention's entity-type embedding ("self" route) and a
pairwise type-consistency feature in the scorer ("cross" route).  Pairs are
scored independently and each anaphor links to its best-scoring antecedent,
with a dummy no-antecedent option fixed at score zero; clusters are the
connected components of the links.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Document, MentionSpan
from .neural import (
    AdamState,
    Config,
    Parameters,
    adam_step,
    add_bilstm,
    add_embedding,
    add_ffnn,
    add_span_attention,
    bilstm,
    bucket_index,
    embed,
    ffnn_score,
    span_attention,
    N_BUCKETS,
)
from .schemes import NA, TypeScheme, get_scheme

VARIANTS = ("baseline", "et_self", "et_cross", "et_full")

QUOTE_CHARS = ('"', "“", "”")


class VariantError(ValueError):
    """A feature was supplied to (or required by) the wrong model variant."""


def validate_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise VariantError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return variant


def uses_type_embedding(variant: str) -> bool:
    return validate_variant(variant) in ("et_self", "et_full")


def uses_consistency(variant: str) -> bool:
    return validate_variant(variant) in ("et_cross", "et_full")


# ---------------------------------------------------------------------------
# Document-level feature extraction
# ---------------------------------------------------------------------------


def quotation_flags(doc: Document) -> list[int]:
    """Per-token in-quotation flags over the whole document.

    A token is inside quotes when an odd number of quote characters precede
    it; the characters of the token itself do not count for its own flag.
    """
    flags = []
    count = 0
    for token in doc.tokens():
        flags.append(count % 2)
        count += sum(token.count(ch) for ch in QUOTE_CHARS)
    return flags


def mention_order(doc: Document) -> list[int]:
    """Mention indices sorted into document order."""
    return sorted(range(len(doc.mentions)), key=lambda i: doc.mentions[i].position())


def sentence_offsets(doc: Document) -> list[int]:
    offsets = [0]
    for sentence in doc.sentences:
        offsets.append(offsets[-1] + len(sentence))
    return offsets


def type_consistency(t_j: str | None, t_k: str | None) -> int:
    """0 when both mentions carry the same type (absent counts as NA)."""
    return 0 if (t_j or NA) == (t_k or NA) else 1


def is_nested(a: MentionSpan, b: MentionSpan) -> bool:
    return a.contains(b) or b.contains(a)


@dataclass(frozen=True)
class PairFeatures:
    """Scorer-side features of a candidate-anaphor pair."""

    distance_bucket: int
    nested: int
    consistent: int | None = None  # 0/1 for the cross variants, else None


def pair_features(doc: Document, order: Sequence[int], j: int, k: int,
                  variant: str) -> PairFeatures:
    """Features for anaphor ordinal ``k`` against candidate ordinal ``j``."""
    if not j < k:
        raise ValueError("candidate must precede the anaphor in document order")
    m_j = doc.mentions[order[j]]
    m_k = doc.mentions[order[k]]
    consistent = None
    if uses_consistency(variant):
        consistent = type_consistency(m_j.entity_type, m_k.entity_type)
    return PairFeatures(
        distance_bucket=bucket_index(k - j),
        nested=1 if is_nested(m_j, m_k) else 0,
        consistent=consistent,
    )


# ---------------------------------------------------------------------------
# Representation layout
# ---------------------------------------------------------------------------


def mention_rep_dim(config: Config, variant: str) -> int:
    base = 3 * (2 * config.bilstm_hidden) + 2 * config.feature_embedding_dim
    if uses_type_embedding(variant):
        base += config.type_embedding_dim
    return base


def mention_segments(config: Config, variant: str) -> dict[str, slice]:
    """Named offsets of the concatenated mention representation."""
    two_h = 2 * config.bilstm_hidden
    feat = config.feature_embedding_dim
    bounds = {
        "start_state": two_h,
        "end_state": two_h,
        "attention": two_h,
        "width": feat,
        "quotation": feat,
    }
    if uses_type_embedding(variant):
        bounds["type"] = config.type_embedding_dim
    segments = {}
    offset = 0
    for name, size in bounds.items():
        segments[name] = slice(offset, offset + size)
        offset += size
    return segments


def pair_input_dim(config: Config, variant: str) -> int:
    dim = 3 * mention_rep_dim(config, variant) + 2 * config.feature_embedding_dim
    if uses_consistency(variant):
        dim += config.feature_embedding_dim
    return dim


def init_coref_params(config: Config, input_dim: int, variant: str,
                      scheme: TypeScheme | str, dtype=np.float32) -> Parameters:
    """Fresh parameters for a variant, drawn deterministically from the seed."""
    validate_variant(variant)
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0DE]))
    params = Parameters()
    add_bilstm(params, rng, "bilstm", input_dim, config.bilstm_hidden, dtype)
    add_span_attention(params, rng, 2 * config.bilstm_hidden, dtype)
    feat = config.feature_embedding_dim
    add_embedding(params, rng, "embed.width", N_BUCKETS, feat, dtype)
    add_embedding(params, rng, "embed.quotation", 2, feat, dtype)
    add_embedding(params, rng, "embed.distance", N_BUCKETS, feat, dtype)
    add_embedding(params, rng, "embed.nesting", 2, feat, dtype)
    add_embedding(params, rng, "embed.consistency", 2, feat, dtype)
    add_embedding(params, rng, "embed.type", len(scheme.labels_with_na),
                  config.type_embedding_dim, dtype)
    add_ffnn(params, rng, "pair", pair_input_dim(config, variant), config.fc_sizes, dtype)
    return params


def type_row(scheme: TypeScheme, label: str | None) -> int:
    labels = scheme.labels_with_na
    return labels.index(NA if label is None else scheme.canonical(label))


# ---------------------------------------------------------------------------
# Mention encoding and pair scoring
# ---------------------------------------------------------------------------


def encode_mention(doc: Document, states: Tensor, span: MentionSpan, variant: str,
                   params: Parameters, config: Config,
                   scheme: TypeScheme | str = "common") -> Tensor:
    """One mention representation row: [x_s; x_e; att; width; quotation(; type)]."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    validate_variant(variant)
    if span.sentence_index >= len(doc.sentences) or span.end >= len(doc.sentences[span.sentence_index]):
        raise ValueError(f"span {span.position()} outside document {doc.doc_id!r}")
    offsets = sentence_offsets(doc)
    start = offsets[span.sentence_index] + span.start
    end = offsets[span.sentence_index] + span.end
    quote_flag = quotation_flags(doc)[start]
    segments = [
        ag.rows(states, start, start + 1),
        ag.rows(states, end, end + 1),
        span_attention(states, start, end, params),
        embed(params, "embed.width", [bucket_index(span.width)]),
        embed(params, "embed.quotation", [quote_flag]),
    ]
    if uses_type_embedding(variant):
        segments.append(embed(params, "embed.type", [type_row(scheme, span.entity_type)]))
    return ag.concat(segments, axis=1)


def pair_score(m_j: Tensor, m_k: Tensor, features: PairFeatures, variant: str,
               params: Parameters, config: Config,
               dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Coreference score for one candidate-anaphor pair, shape (1, 1)."""
    validate_variant(variant)
    if uses_consistency(variant) and features.consistent is None:
        raise VariantError(f"variant {variant!r} requires the consistency feature")
    if not uses_consistency(variant) and features.consistent is not None:
        raise VariantError(f"variant {variant!r} does not accept the consistency feature")
    parts = [
        m_j,
        m_k,
        ag.mul(m_j, m_k),
        embed(params, "embed.distance", [features.distance_bucket]),
        embed(params, "embed.nesting", [features.nested]),
    ]
    if features.consistent is not None:
        parts.append(embed(params, "embed.consistency", [features.consistent]))
    x = ag.concat(parts, axis=1)
    return ffnn_score(x, params, "pair", len(config.fc_sizes),
                      dropout=config.dropout if dropout_rng is not None else 0.0,
                      rng=dropout_rng)


def antecedent_distribution(scores: np.ndarray | Sequence[float]) -> np.ndarray:
    """Softmax over candidate scores plus the trailing zero-scored dummy."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    full = np.concatenate([scores, [0.0]])
    shifted = np.exp(full - full.max())
    return shifted / shifted.sum()


# ---------------------------------------------------------------------------
# Whole-document scoring graph
# ---------------------------------------------------------------------------


@dataclass
class DocumentScores:
    """Pair scores for one document plus the indexing to read them."""

    order: list[int]                      # mention ordinal -> index into doc.mentions
    scores: Tensor | None                 # (P, 1) stacked pair scores
    slices: list[tuple[int, int]]         # per anaphor ordinal: [lo, hi) into scores
    candidates: list[list[int]]           # per anaphor ordinal: candidate ordinals


def document_scores(doc: Document, embeddings: np.ndarray, params: Parameters,
                    config: Config, variant: str, scheme: TypeScheme | str = "common",
                    dropout_rng: np.random.Generator | None = None) -> DocumentScores:
    """Score every (candidate, anaphor) pair within the antecedent window."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    validate_variant(variant)
    dtype = params["pair.out.w"].dtype
    if embeddings.shape[0] != doc.token_count:
        raise ValueError(
            f"{doc.doc_id!r}: embedding rows {embeddings.shape[0]} != token count {doc.token_count}"
        )
    states = bilstm(np.asarray(embeddings, dtype=dtype), params, config.bilstm_hidden)
    if dropout_rng is not None and config.dropout > 0.0:
        states = ag.dropout(states, config.dropout, dropout_rng)

    order = mention_order(doc)
    if not order:
        return DocumentScores(order, None, [], [])
    reps = ag.concat(
        [
            encode_mention(doc, states, doc.mentions[idx], variant, params, config, scheme)
            for idx in order
        ],
        axis=0,
    )

    j_rows: list[int] = []
    k_rows: list[int] = []
    dist_idx: list[int] = []
    nest_idx: list[int] = []
    cons_idx: list[int] = []
    slices: list[tuple[int, int]] = []
    candidates: list[list[int]] = []
    for k in range(len(order)):
        lo = len(j_rows)
        window = range(max(0, k - config.max_antecedents), k)
        for j in window:
            features = pair_features(doc, order, j, k, variant)
            j_rows.append(j)
            k_rows.append(k)
            dist_idx.append(features.distance_bucket)
            nest_idx.append(features.nested)
            if features.consistent is not None:
                cons_idx.append(features.consistent)
        slices.append((lo, len(j_rows)))
        candidates.append(list(window))

    if not j_rows:
        return DocumentScores(order, None, slices, candidates)

    m_j = ag.take_rows(reps, j_rows)
    m_k = ag.take_rows(reps, k_rows)
    parts = [
        m_j,
        m_k,
        ag.mul(m_j, m_k),
        embed(params, "embed.distance", dist_idx),
        embed(params, "embed.nesting", nest_idx),
    ]
    if uses_consistency(variant):
        parts.append(embed(params, "embed.consistency", cons_idx))
    x = ag.concat(parts, axis=1)
    scores = ffnn_score(x, params, "pair", len(config.fc_sizes),
                        dropout=config.dropout if dropout_rng is not None else 0.0,
                        rng=dropout_rng)
    return DocumentScores(order, scores, slices, candidates)


def _gold_cluster_ids(doc: Document) -> dict[int, int]:
    assignment = {}
    for cid, members in doc.clusters.items():
        for idx in members:
            assignment[idx] = cid
    return assignment


def document_loss(doc: Document, embeddings: np.ndarray, params: Parameters,
                  config: Config, variant: str, scheme: TypeScheme | str = "common",
                  dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Marginal negative log-likelihood of the gold antecedents.

    For each anaphor the probability mass over all gold antecedents in the
    window is marginalized; mentions that start their cluster (or have no
    candidates) take the dummy antecedent as gold.
    """
    scored = document_scores(doc, embeddings, params, config, variant, scheme, dropout_rng)
    dtype = params["pair.out.w"].dtype
    gold = _gold_cluster_ids(doc)
    zero = Tensor(np.zeros((1, 1), dtype=dtype))
    losses: list[Tensor] = []
    for k, (lo, hi) in enumerate(scored.slices):
        if hi == lo:
            continue  # no candidates: P(dummy) = 1 contributes zero loss
        cluster_k = gold.get(scored.order[k])
        gold_positions = [
            pos
            for pos, j in enumerate(scored.candidates[k])
            if cluster_k is not None and gold.get(scored.order[j]) == cluster_k
        ]
        pair_slice = ag.rows(scored.scores, lo, hi)
        full = ag.concat([pair_slice, zero], axis=0)
        if not gold_positions:
            gold_positions = [hi - lo]  # the dummy row
        marginal = ag.logsumexp(ag.take_rows(full, gold_positions))
        losses.append(ag.add(ag.logsumexp(full), ag.mul(marginal, -1.0)))
    if not losses:
        return Tensor(np.zeros((), dtype=dtype))
    total = losses[0]
    for term in losses[1:]:
        total = ag.add(total, term)
    return ag.mul(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# Training and resolution
# ---------------------------------------------------------------------------


def _fetch(embeddings, doc_id: str) -> np.ndarray:
    if hasattr(embeddings, "fetch"):
        return embeddings.fetch(doc_id)
    return embeddings[doc_id]


def _check_embeddings(docs: Sequence[Document], embeddings) -> int:
    """Verify every document is embedded (with matching row counts); return dim."""
    dim = None
    missing = []
    for doc in docs:
        try:
            matrix = _fetch(embeddings, doc.doc_id)
        except KeyError:
            missing.append(doc.doc_id)
            continue
        if matrix.shape[0] != doc.token_count:
            raise ValueError(
                f"{doc.doc_id!r}: embedding rows {matrix.shape[0]} != token count {doc.token_count}"
            )
        dim = matrix.shape[1]
    if missing:
        raise KeyError(f"documents missing from embedding store: {missing}")
    if dim is None:
        raise ValueError("no documents to train on")
    return dim


@dataclass
class TrainResult:
    params: Parameters
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def train(docs: Sequence[Document], embeddings, variant: str, config: Config,
          scheme: TypeScheme | str = "common") -> TrainResult:
    """Train a variant on gold clusters; deterministic given the config seed."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    validate_variant(variant)
    docs = list(docs)
    input_dim = _check_embeddings(docs, embeddings)
    params = init_coref_params(config, input_dim, variant, scheme)
    seeds = np.random.SeedSequence([config.seed, 0xBEEF]).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    state = AdamState()
    result = TrainResult(params)
    order = np.arange(len(docs))
    for _ in range(config.epochs):
        shuffle_rng.shuffle(order)
        epoch_total = 0.0
        for doc_pos in order:
            doc = docs[doc_pos]
            params.zero_grad()
            loss = document_loss(doc, _fetch(embeddings, doc.doc_id), params,
                                 config, variant, scheme, dropout_rng)
            grads = ag.gradients(loss, params.items())
            adam_step(params, grads, state, config.learning_rate)
            value = loss.item()
            result.step_losses.append(value)
            epoch_total += value
        result.epoch_losses.append(epoch_total / max(len(docs), 1))
    return result


def link_antecedents(scored: DocumentScores) -> list[int | None]:
    """Per anaphor ordinal, the linked candidate ordinal or None for the dummy.

    The dummy wins ties: a link requires a strictly positive score.
    """
    links: list[int | None] = []
    raw = scored.scores.data.reshape(-1) if scored.scores is not None else np.zeros(0)
    for k, (lo, hi) in enumerate(scored.slices):
        if hi == lo:
            links.append(None)
            continue
        window = raw[lo:hi]
        best = int(np.argmax(window))
        links.append(scored.candidates[k][best] if window[best] > 0.0 else None)
    return links


def clusters_from_links(order: Sequence[int], links: Sequence[int | None],
                        keep_singletons: bool = True) -> list[list[int]]:
    """Transitive closure of antecedent links, as clusters of mention indices."""
    parent = list(range(len(order)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for k, j in enumerate(links):
        if j is not None:
            parent[find(k)] = find(j)

    groups: dict[int, list[int]] = {}
    for ordinal in range(len(order)):
        groups.setdefault(find(ordinal), []).append(order[ordinal])
    clusters = [sorted(members) for _, members in sorted(groups.items())]
    if not keep_singletons:
        clusters = [c for c in clusters if len(c) > 1]
    return clusters


def resolve(doc: Document, embeddings, params: Parameters, variant: str,
            config: Config, scheme: TypeScheme | str = "common") -> list[list[int]]:
    """Cluster the document's mentions; returns lists of mention indices.

    Links follow each anaphor's best-scoring antecedent; clusters are the
    transitive closure.  Singleton clusters are dropped unless the config
    keeps them.
    """
    matrix = _fetch(embeddings, doc.doc_id)
    scored = document_scores(doc, matrix, params, config, variant, scheme)
    links = link_antecedents(scored)
    return clusters_from_links(scored.order, links, config.keep_singletons)


def response_document(doc: Document, clusters: Iterable[Iterable[int]]) -> Document:
    """A copy of ``doc`` whose clusters are the resolver output."""
    new_clusters = {cid: sorted(members) for cid, members in enumerate(clusters)}
    return Document(doc.doc_id, doc.sentences, list(doc.mentions), new_clusters)
