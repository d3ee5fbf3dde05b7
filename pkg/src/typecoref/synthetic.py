"""Seeded synthetic corpora for hermetic experiments and demos.

Each document contains a few entities of distinct types.  An entity is
mentioned once or twice by a type-specific name token (a weak lexical anchor)
and several times by generic tokens shared across all types, so surface form
alone cannot attribute the generic mentions; the gold entity type can.
Documents pair with :func:`typecoref.store.synth_embeddings`, which keeps
repeated tokens close in embedding space.
"""

from __future__ import annotations

import numpy as np

from .corpus import Document, MentionSpan

NAME_LEXICON = {
    "PER": ("alice", "bob", "carol", "dave", "erin", "frank"),
    "ORG": ("acme", "globex", "initech", "umbrella", "hooli", "stark"),
    "LOC": ("paris", "tokyo", "cairo", "oslo", "lima", "quito"),
    "FAC": ("bridge", "museum", "airport", "stadium", "harbor", "tower"),
}

GENERIC_TOKENS = ("it", "that", "one")

FILLER_TOKENS = ("meanwhile", "reportedly", "yesterday", "quietly", "again", "soon")

VERB_TOKENS = ("moved", "grew", "changed", "appeared", "returned", "stalled")


def _mention_sentence(rng: np.random.Generator, head: str) -> tuple[list[str], int]:
    """A short sentence containing ``head``; returns (tokens, head position)."""
    lead = [str(rng.choice(FILLER_TOKENS))] if rng.random() < 0.4 else []
    tokens = lead + [head, str(rng.choice(VERB_TOKENS)), "."]
    return tokens, len(lead)


def synthetic_document(doc_id: str, rng: np.random.Generator) -> Document:
    """One document whose coreference is decided by type plus weak lexical cues."""
    types = list(NAME_LEXICON)
    rng.shuffle(types)
    n_entities = int(rng.integers(3, 5))
    entity_types = types[:n_entities]
    entity_names = [str(rng.choice(NAME_LEXICON[t])) for t in entity_types]

    # per-entity mention queue: name anchor(s) first, then generics
    queues: list[list[str]] = []
    for name in entity_names:
        n_names = int(rng.integers(1, 3))
        n_generics = int(rng.integers(2, 4))
        queues.append([name] * n_names + [str(rng.choice(GENERIC_TOKENS)) for _ in range(n_generics)])

    # random interleave preserving each entity's internal order
    schedule: list[int] = []
    for entity, queue in enumerate(queues):
        schedule.extend([entity] * len(queue))
    rng.shuffle(schedule)

    sentences: list[list[str]] = []
    mentions: list[MentionSpan] = []
    clusters: dict[int, list[int]] = {e: [] for e in range(n_entities)}
    for entity in schedule:
        head = queues[entity].pop(0)
        tokens, head_pos = _mention_sentence(rng, head)
        sentence_index = len(sentences)
        sentences.append(tokens)
        clusters[entity].append(len(mentions))
        mentions.append(
            MentionSpan(sentence_index, head_pos, head_pos, entity_types[entity])
        )
    return Document(doc_id, sentences, mentions, clusters)


def synthetic_corpus(n_docs: int, seed: int, prefix: str = "synth") -> list[Document]:
    """A fixed corpus of ``n_docs`` seeded documents."""
    docs = []
    for i in range(n_docs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        docs.append(synthetic_document(f"{prefix}_{i:03d}", rng))
    return docs
