"""CoNLL-2012 coreference I/O and document-level type transforms.

Documents are immutable-by-convention: every transform returns a new
:class:`Document`.  The parser reconstructs nested and multi-token spans from
the bracketed coreference column (last column) and preserves singleton
clusters; the emitter is its exact inverse on valid documents.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator

from .schemes import NA, TypeScheme, get_scheme, map_to_common

#: OntoNotes genre prefixes recognized by :func:`genre_of`.
KNOWN_GENRES = ("tc", "bc", "nw", "pt", "bn", "wb", "mz")


class ConllParseError(ValueError):
    """Malformed CoNLL input; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SidecarWarning(UserWarning):
    """A sidecar record that did not match any mention."""


@dataclass(frozen=True, order=True)
class MentionSpan:
    """A gold mention: sentence-local token span, end inclusive."""

    sentence_index: int
    start: int
    end: int
    entity_type: str | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span start {self.start} > end {self.end}")
        if self.sentence_index < 0 or self.start < 0:
            raise ValueError("span indices must be non-negative")

    @property
    def width(self) -> int:
        return self.end - self.start + 1

    def position(self) -> tuple[int, int, int]:
        return (self.sentence_index, self.start, self.end)

    def contains(self, other: "MentionSpan") -> bool:
        return (
            self.sentence_index == other.sentence_index
            and self.start <= other.start
            and other.end <= self.end
        )


@dataclass
class Document:
    """A tokenized document with gold mentions and coreference clusters.

    ``clusters`` maps a non-negative cluster id to indices into ``mentions``.
    """

    doc_id: str
    sentences: list[list[str]]
    mentions: list[MentionSpan]
    clusters: dict[int, list[int]]

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)

    def tokens(self) -> Iterator[str]:
        for sentence in self.sentences:
            yield from sentence

    def mention_tokens(self, mention: MentionSpan) -> list[str]:
        sent = self.sentences[mention.sentence_index]
        return sent[mention.start : mention.end + 1]

    def cluster_of(self, mention_index: int) -> int | None:
        for cid, members in self.clusters.items():
            if mention_index in members:
                return cid
        return None

    def validate(self) -> None:
        """Raise ``ValueError`` on any structural invariant violation."""
        seen_positions = set()
        for m in self.mentions:
            if m.sentence_index >= len(self.sentences):
                raise ValueError(f"{self.doc_id}: mention {m} outside document")
            if m.end >= len(self.sentences[m.sentence_index]):
                raise ValueError(f"{self.doc_id}: mention {m} outside sentence")
            if m.position() in seen_positions:
                raise ValueError(f"{self.doc_id}: duplicate mention span {m.position()}")
            seen_positions.add(m.position())
        assigned = set()
        for cid, members in self.clusters.items():
            if not isinstance(cid, int) or cid < 0:
                raise ValueError(f"{self.doc_id}: cluster id {cid!r} not a non-negative int")
            for idx in members:
                if not 0 <= idx < len(self.mentions):
                    raise ValueError(f"{self.doc_id}: cluster {cid} references missing mention {idx}")
                if idx in assigned:
                    raise ValueError(f"{self.doc_id}: mention {idx} in two clusters")
                assigned.add(idx)


def genre_of(doc_id: str) -> str:
    """Genre from a document key prefix; unknown prefixes map to ``other``."""
    key = doc_id.lstrip("(")
    prefix = key.split("/", 1)[0].strip().lower()
    return prefix if prefix in KNOWN_GENRES else "other"


# ---------------------------------------------------------------------------
# CoNLL-2012 parsing and emission
# ---------------------------------------------------------------------------

_BEGIN = "#begin document"
_END = "#end document"


def _bracket_compatible(a: MentionSpan, b: MentionSpan) -> bool:
    """Can two same-cluster spans coexist in LIFO bracket notation?

    Yes iff they are in different sentences, disjoint, or strictly nested
    (distinct start tokens; a shared end token still closes correctly).
    """
    if a.sentence_index != b.sentence_index:
        return True
    if a.start == b.start:
        return False
    first, second = (a, b) if a.start < b.start else (b, a)
    return first.end < second.start or second.end <= first.end


def _split_coref_items(column: str) -> list[str]:
    if column in ("-", "_"):
        return []
    return column.split("|")


def parse_conll(text: str) -> list[Document]:
    """Parse CoNLL-2012 text into documents.

    The coreference column must be last.  The token is taken from column 3
    when at least four columns are present, from column 0 otherwise; this
    accepts both full-width files and minimal ``token coref`` ones.
    """
    docs: list[Document] = []
    doc_id: str | None = None
    sentences: list[list[str]] = []
    current: list[str] = []
    # cluster id -> stack of (sentence_index, start_token, line_number)
    open_spans: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
    spans: list[tuple[int, MentionSpan]] = []  # (cluster_id, span)

    def check_sentence_closed(line_no: int) -> None:
        for cid, stack in open_spans.items():
            if stack:
                raise ConllParseError(
                    f"unbalanced span: cluster {cid} opened here is never closed",
                    stack[-1][2],
                )

    def flush_sentence(line_no: int) -> None:
        nonlocal current
        if current:
            check_sentence_closed(line_no)
            sentences.append(current)
            current = []

    def finish_document(line_no: int) -> None:
        nonlocal doc_id, sentences, spans, open_spans
        flush_sentence(line_no)
        check_sentence_closed(line_no)
        positions = Counter(span.position() for _, span in spans)
        for pos, n in positions.items():
            if n > 1:
                raise ConllParseError(f"duplicate mention span {pos}", line_no)
        ordered = sorted(spans, key=lambda cs: cs[1].position())
        mentions = [span for _, span in ordered]
        clusters: dict[int, list[int]] = defaultdict(list)
        for idx, (cid, _) in enumerate(ordered):
            clusters[cid].append(idx)
        docs.append(Document(doc_id, sentences, mentions, dict(clusters)))
        doc_id, sentences, spans = None, [], []
        open_spans = defaultdict(list)

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if doc_id is None:
            if not line:
                continue
            if line.startswith(_BEGIN):
                doc_id = line[len(_BEGIN) :].strip()
                if not doc_id:
                    raise ConllParseError("missing document key", line_no)
                continue
            raise ConllParseError("content outside a document block", line_no)
        if line.startswith(_END):
            finish_document(line_no)
            continue
        if line.startswith(_BEGIN):
            raise ConllParseError("document block opened inside another", line_no)
        if not line:
            flush_sentence(line_no)
            continue

        parts = line.split()
        if len(parts) < 2:
            raise ConllParseError("expected at least token and coreference columns", line_no)
        token = parts[3] if len(parts) >= 4 else parts[0]
        coref = parts[-1]
        tok_idx = len(current)
        sent_idx = len(sentences)
        current.append(token)

        opened_here: Counter[int] = Counter()
        for item in _split_coref_items(coref):
            singleton = item.startswith("(") and item.endswith(")")
            if singleton:
                body = item[1:-1]
            elif item.startswith("("):
                body = item[1:]
            elif item.endswith(")"):
                body = item[:-1]
            else:
                raise ConllParseError(f"malformed coreference item {item!r}", line_no)
            if not body.isdigit():
                raise ConllParseError(f"malformed coreference item {item!r}", line_no)
            cid = int(body)

            if item.startswith("("):
                opened_here[cid] += 1
                if opened_here[cid] > 1:
                    raise ConllParseError(
                        f"duplicate open bracket for cluster {cid} at one token", line_no
                    )
                open_spans[cid].append((sent_idx, tok_idx, line_no))
            if item.endswith(")"):
                if not open_spans[cid]:
                    raise ConllParseError(
                        f"unbalanced span: cluster {cid} closed without an open bracket",
                        line_no,
                    )
                span_sent, span_start, _ = open_spans[cid].pop()
                spans.append((cid, MentionSpan(span_sent, span_start, tok_idx)))

    if doc_id is not None:
        raise ConllParseError("document never closed with '#end document'", len(text.splitlines()))
    return docs


def emit_conll(docs: Iterable[Document]) -> str:
    """Serialize documents to CoNLL-2012 text; exact inverse of :func:`parse_conll`.

    Raises ``ValueError`` for documents the bracket notation cannot encode:
    two mentions of one cluster that open at the same token, or that cross
    without nesting (the per-cluster brackets close LIFO).
    """
    out: list[str] = []
    for doc in docs:
        doc.validate()
        mention_cluster: dict[int, int] = {}
        for cid, members in doc.clusters.items():
            for idx in members:
                mention_cluster[idx] = cid

        opens: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
        closes: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
        singles: dict[tuple[int, int], list[int]] = defaultdict(list)
        per_cluster: dict[int, list[MentionSpan]] = defaultdict(list)
        for idx, m in enumerate(doc.mentions):
            if idx not in mention_cluster:
                continue
            cid = mention_cluster[idx]
            for other in per_cluster[cid]:
                if not _bracket_compatible(m, other):
                    raise ValueError(
                        f"{doc.doc_id}: cluster {cid} spans {other.position()} and "
                        f"{m.position()} overlap without nesting; not encodable"
                    )
            per_cluster[cid].append(m)
            if m.start == m.end:
                singles[(m.sentence_index, m.start)].append(cid)
            else:
                opens[(m.sentence_index, m.start)].append((m.end, cid))
                closes[(m.sentence_index, m.end)].append((m.start, cid))

        key_col = doc.doc_id.lstrip("(").split()[0].rstrip(");") or "-"
        out.append(f"{_BEGIN} {doc.doc_id}")
        for sent_idx, sentence in enumerate(doc.sentences):
            for tok_idx, token in enumerate(sentence):
                items: list[str] = []
                # closes first so a same-cluster span opening here cannot be
                # popped by a close that belongs to an earlier open; then
                # outermost opens first so LIFO closing reconstructs nesting
                for start, cid in sorted(closes.get((sent_idx, tok_idx), []), key=lambda sc: (-sc[0], sc[1])):
                    items.append(f"{cid})")
                for cid in sorted(singles.get((sent_idx, tok_idx), [])):
                    items.append(f"({cid})")
                for end, cid in sorted(opens.get((sent_idx, tok_idx), []), key=lambda ec: (-ec[0], ec[1])):
                    items.append(f"({cid}")
                coref = "|".join(items) if items else "-"
                out.append(f"{key_col} 0 {tok_idx} {token} {coref}")
            out.append("")
        out.append(_END)
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# JSON document serialization (internal interchange for the CLI)
# ---------------------------------------------------------------------------


def docs_to_json(docs: Iterable[Document]) -> str:
    payload = [
        {
            "doc_id": d.doc_id,
            "sentences": d.sentences,
            "mentions": [
                {
                    "sentence_index": m.sentence_index,
                    "start": m.start,
                    "end": m.end,
                    "entity_type": m.entity_type,
                }
                for m in d.mentions
            ],
            "clusters": {str(cid): members for cid, members in sorted(d.clusters.items())},
        }
        for d in docs
    ]
    return json.dumps(payload, ensure_ascii=False, indent=2)


def docs_from_json(text: str) -> list[Document]:
    docs = []
    for entry in json.loads(text):
        mentions = [
            MentionSpan(m["sentence_index"], m["start"], m["end"], m.get("entity_type"))
            for m in entry["mentions"]
        ]
        clusters = {int(cid): list(members) for cid, members in entry["clusters"].items()}
        docs.append(Document(entry["doc_id"], entry["sentences"], mentions, clusters))
    return docs


# ---------------------------------------------------------------------------
# Type sidecars
# ---------------------------------------------------------------------------


def _iter_sidecar_records(stream: IO[str] | Iterable[str]) -> Iterator[dict]:
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"sidecar line {line_no}: invalid JSON ({exc})") from None
        missing = {"doc_id", "sentence_index", "start", "end", "type"} - set(record)
        if missing:
            raise ValueError(f"sidecar line {line_no}: missing fields {sorted(missing)}")
        yield record


def load_type_sidecar(
    doc: Document,
    sidecar: IO[str] | Iterable[str],
    scheme: TypeScheme | str,
) -> Document:
    """Attach entity types from a JSON-lines sidecar to matching mentions.

    Records whose type is outside ``scheme`` raise; records matching no
    mention raise a :class:`SidecarWarning` instead.  Mentions without a
    record keep ``entity_type=None`` (NA semantics).
    """
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    by_position = {m.position(): idx for idx, m in enumerate(doc.mentions)}
    mentions = list(doc.mentions)
    for record in _iter_sidecar_records(sidecar):
        label = scheme.canonical(str(record["type"]))
        if record["doc_id"] != doc.doc_id:
            warnings.warn(
                SidecarWarning(f"record for unknown document {record['doc_id']!r}"),
                stacklevel=2,
            )
            continue
        pos = (record["sentence_index"], record["start"], record["end"])
        idx = by_position.get(pos)
        if idx is None:
            warnings.warn(
                SidecarWarning(f"record {pos} in {doc.doc_id!r} matches no mention"),
                stacklevel=2,
            )
            continue
        entity_type = None if label == NA else label
        mentions[idx] = replace(mentions[idx], entity_type=entity_type)
    return replace(doc, mentions=mentions)


def attach_sidecar(
    docs: Iterable[Document],
    sidecar: IO[str] | Iterable[str],
    scheme: TypeScheme | str,
) -> list[Document]:
    """Corpus-level :func:`load_type_sidecar`: records routed by ``doc_id``."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    records = defaultdict(list)
    for record in _iter_sidecar_records(sidecar):
        records[record["doc_id"]].append(json.dumps(record))
    out = []
    for doc in docs:
        out.append(load_type_sidecar(doc, records.pop(doc.doc_id, []), scheme))
    for doc_id, orphans in records.items():
        warnings.warn(
            SidecarWarning(f"{len(orphans)} record(s) for unknown document {doc_id!r}"),
            stacklevel=2,
        )
    return out


def write_type_sidecar(docs: Iterable[Document], stream: IO[str]) -> int:
    """Emit one JSON-lines record per typed mention; returns the record count."""
    n = 0
    for doc in docs:
        for m in doc.mentions:
            if m.entity_type is None:
                continue
            record = {
                "doc_id": doc.doc_id,
                "sentence_index": m.sentence_index,
                "start": m.start,
                "end": m.end,
                "type": m.entity_type,
            }
            stream.write(json.dumps(record, ensure_ascii=False) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# Cluster type propagation and scheme reduction
# ---------------------------------------------------------------------------


def propagate_cluster_types(doc: Document) -> Document:
    """Give every member of a cluster the cluster's majority type.

    Only typed members vote; clusters with no typed member stay untyped.
    Ties go to the type whose earliest typed mention occurs first in the
    document.  Idempotent.
    """
    mentions = list(doc.mentions)
    for members in doc.clusters.values():
        votes: Counter[str] = Counter()
        first_seen: dict[str, tuple[int, int, int]] = {}
        for idx in members:
            t = mentions[idx].entity_type
            if t is None:
                continue
            votes[t] += 1
            pos = mentions[idx].position()
            if t not in first_seen or pos < first_seen[t]:
                first_seen[t] = pos
        if not votes:
            continue
        top = max(votes.values())
        majority = min((t for t, n in votes.items() if n == top), key=first_seen.__getitem__)
        for idx in members:
            mentions[idx] = replace(mentions[idx], entity_type=majority)
    return replace(doc, mentions=mentions)


def map_document_types(doc: Document, source_scheme: TypeScheme | str) -> Document:
    """Reduce every mention type to the common scheme.

    Untyped mentions follow the scheme's NA row when it has one (WikiCoref,
    OntoNotes map NA to OTHER); otherwise they stay untyped.
    """
    scheme = get_scheme(source_scheme) if isinstance(source_scheme, str) else source_scheme
    mentions = []
    for m in doc.mentions:
        label = NA if m.entity_type is None else m.entity_type
        mapped = map_to_common(label, scheme)
        mentions.append(replace(m, entity_type=None if mapped == NA else mapped))
    return replace(doc, mentions=mentions)
