"""Entity-type prediction from pooled contextual embeddings.

Each mention is presented to the encoder as its sentence with marker tokens
around the span; the encoder output is mean-pooled and classified by a single
dense layer.  Cross-validation splits the corpus by document so every mention
is predicted exactly once, by a model that never saw its document, and the
predictions land in a sidecar the corpus loader accepts verbatim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Document
from .neural import AdamState, Parameters, adam_step, uniform_init
from .schemes import NA, TypeScheme, get_scheme

ENT_START = "<ENT_START>"
ENT_END = "<ENT_END>"
MAX_MARKED_TOKENS = 128

DEMONSTRATIVE_PRONOUNS = frozenset({"this", "that", "it", "these", "those"})
PERSONAL_PRONOUNS = frozenset({"she", "he", "they", "me", "you", "we"})


def mention_key(doc_id: str, sentence_index: int, start: int, end: int) -> str:
    return f"{doc_id}#{sentence_index}:{start}-{end}"


@dataclass(frozen=True)
class MarkedSequence:
    """A sentence with the mention wrapped in marker tokens, length-capped."""

    tokens: tuple[str, ...]
    doc_id: str
    mention_index: int
    truncated: bool


@dataclass(frozen=True)
class TypePrediction:
    """Distribution over non-NA labels for one mention."""

    key: str
    labels: tuple[str, ...]
    distribution: np.ndarray
    label: str

    def __post_init__(self):
        total = float(self.distribution.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"distribution sums to {total}, not 1")


def build_marked_sequence(sentence: Sequence[str], start: int, end: int) -> tuple[list[str], bool]:
    """Insert markers around ``start..end`` (inclusive), capped at 128 tokens.

    Over-long context is trimmed symmetrically around the marked region; the
    mention and both markers always survive.  Returns (tokens, truncated).
    """
    if not 0 <= start <= end < len(sentence):
        raise ValueError(f"span ({start}, {end}) outside sentence of {len(sentence)} tokens")
    mention = list(sentence[start : end + 1])
    if len(mention) + 2 > MAX_MARKED_TOKENS:
        raise ValueError(
            f"mention of {len(mention)} tokens cannot fit a {MAX_MARKED_TOKENS}-token window"
        )
    left = list(sentence[:start])
    right = list(sentence[end + 1 :])
    budget = MAX_MARKED_TOKENS - len(mention) - 2
    left_take = min(len(left), (budget + 1) // 2)
    right_take = min(len(right), budget - left_take)
    left_take = min(len(left), budget - right_take)
    tokens = left[len(left) - left_take :] + [ENT_START] + mention + [ENT_END] + right[:right_take]
    truncated = left_take < len(left) or right_take < len(right)
    return tokens, truncated


def marked_sequence(doc: Document, mention_index: int) -> MarkedSequence:
    m = doc.mentions[mention_index]
    tokens, truncated = build_marked_sequence(doc.sentences[m.sentence_index], m.start, m.end)
    return MarkedSequence(tuple(tokens), doc.doc_id, mention_index, truncated)


def marked_requests(docs: Iterable[Document]) -> Iterable[tuple[str, list[str]]]:
    """(key, tokens) for every mention, marker-wrapped and length-capped."""
    for doc in docs:
        for idx, m in enumerate(doc.mentions):
            seq = marked_sequence(doc, idx)
            yield mention_key(doc.doc_id, m.sentence_index, m.start, m.end), list(seq.tokens)


def write_marked_requests(docs: Iterable[Document], stream: IO[str]) -> int:
    """JSON-lines ``{key, tokens}`` request file for the embedding exporter."""
    n = 0
    for key, tokens in marked_requests(docs):
        stream.write(json.dumps({"key": key, "tokens": tokens}, ensure_ascii=False) + "\n")
        n += 1
    return n


def mean_pool(matrix: np.ndarray) -> np.ndarray:
    """Arithmetic mean over token rows."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError(f"cannot pool matrix of shape {matrix.shape}")
    return matrix.mean(axis=0)


def pooled_vectors(store, keys: Iterable[str]) -> dict[str, np.ndarray]:
    """Mean-pooled vector per marked-sequence record in a CTE1 store."""
    return {key: mean_pool(store.fetch(key)) for key in keys}


# ---------------------------------------------------------------------------
# Classifier head
# ---------------------------------------------------------------------------


def init_type_params(input_dim: int, n_classes: int, seed: int, dtype=np.float32) -> Parameters:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E9]))
    params = Parameters()
    params.add("typehead.w", uniform_init(rng, (input_dim, n_classes), dtype))
    params.add("typehead.b", uniform_init(rng, (n_classes,), dtype))
    return params


def type_logits(x: Tensor | np.ndarray, params: Parameters) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=params["typehead.w"].dtype))
    return ag.add(ag.matmul(x, params["typehead.w"]), params["typehead.b"])


def classify(pooled: np.ndarray, params: Parameters, labels: Sequence[str],
             key: str = "") -> TypePrediction:
    """Softmax over the non-NA label inventory for one pooled vector."""
    if pooled.shape[-1] != params["typehead.w"].shape[0]:
        raise ValueError(
            f"pooled dim {pooled.shape[-1]} != classifier input {params['typehead.w'].shape[0]}"
        )
    logits = type_logits(pooled.reshape(1, -1), params).data[0]
    shifted = np.exp(logits - logits.max())
    dist = shifted / shifted.sum()
    return TypePrediction(key, tuple(labels), dist, labels[int(np.argmax(dist))])


def type_head_loss(x: np.ndarray, y: np.ndarray, params: Parameters) -> Tensor:
    """Mean softmax cross-entropy of the classifier head."""
    dtype = params["typehead.w"].dtype
    logits = type_logits(np.asarray(x, dtype=dtype), params)
    n, n_classes = logits.shape
    onehot = np.zeros((n, n_classes), dtype=dtype)
    onehot[np.arange(n), np.asarray(y)] = 1.0
    log_probs = ag.add(logits, ag.mul(ag.logsumexp_rows(logits), -1.0))
    picked = ag.mul(log_probs, Tensor(onehot))
    return ag.mul(ag.sum_all(picked), -1.0 / n)


def macro_f1(gold: Sequence[int], predicted: Sequence[int]) -> float:
    """Mean per-class F1 over classes present in gold or predictions."""
    gold = np.asarray(gold)
    predicted = np.asarray(predicted)
    classes = sorted(set(gold.tolist()) | set(predicted.tolist()))
    scores = []
    for c in classes:
        tp = int(np.sum((predicted == c) & (gold == c)))
        fp = int(np.sum((predicted == c) & (gold != c)))
        fn = int(np.sum((predicted != c) & (gold == c)))
        scores.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return float(np.mean(scores)) if scores else 0.0


@dataclass(frozen=True)
class TypePredTrainConfig:
    epochs: int = 20
    patience: int = 10
    learning_rate: float = 0.1
    seed: int = 0
    dev_fraction: float = 0.1


def train_type_head(train_x: np.ndarray, train_y: Sequence[int],
                    dev_x: np.ndarray, dev_y: Sequence[int],
                    n_classes: int, config: TypePredTrainConfig) -> Parameters:
    """Full-batch Adam with early stopping on dev macro F1, best epoch restored.

    With an empty dev set the head simply trains for the full epoch budget.
    """
    params = init_type_params(train_x.shape[1], n_classes, config.seed)
    state = AdamState()
    dev_y = np.asarray(dev_y)
    best_f1 = -1.0
    best = params.copy()
    stale = 0
    for _ in range(config.epochs):
        params.zero_grad()
        loss = type_head_loss(train_x, train_y, params)
        grads = ag.gradients(loss, params.items())
        adam_step(params, grads, state, config.learning_rate)
        if len(dev_y) == 0:
            best = params.copy()
            continue
        dev_pred = type_logits(dev_x, params).data.argmax(axis=1)
        f1 = macro_f1(dev_y, dev_pred)
        if f1 > best_f1:
            best_f1 = f1
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


# ---------------------------------------------------------------------------
# Cross-validated corpus prediction
# ---------------------------------------------------------------------------


@dataclass
class CrossvalResult:
    """Per-mention predictions plus the fold that produced each of them."""

    records: list[dict] = field(default_factory=list)
    predictions: dict[str, TypePrediction] = field(default_factory=dict)
    fold_of_doc: dict[str, int] = field(default_factory=dict)

    def write_sidecar(self, stream: IO[str]) -> int:
        for record in self.records:
            stream.write(json.dumps(record, ensure_ascii=False) + "\n")
        return len(self.records)


def assign_folds(docs: Sequence[Document], k: int, seed: int) -> dict[str, int]:
    """Deterministic by-document fold assignment."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(docs) < k:
        raise ValueError(f"cannot split {len(docs)} documents into {k} folds")
    ids = sorted(doc.doc_id for doc in docs)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate document ids")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    order = list(ids)
    rng.shuffle(order)
    return {doc_id: i % k for i, doc_id in enumerate(order)}


def crossval_predict(docs: Sequence[Document], pooled: Mapping[str, np.ndarray],
                     scheme: TypeScheme | str, k: int = 5,
                     config: TypePredTrainConfig | None = None) -> CrossvalResult:
    """Predict a type for every mention via k-fold cross-validation.

    Untyped (NA) mentions never contribute training signal but still receive
    an argmax label in the output sidecar.  Raises ``KeyError`` listing any
    mention whose pooled vector is missing.
    """
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    config = config or TypePredTrainConfig()
    labels = tuple(label for label in scheme.labels if label != NA)
    label_index = {label: i for i, label in enumerate(labels)}

    mentions: list[tuple[str, Document, int]] = []  # (key, doc, mention index)
    missing: list[str] = []
    for doc in docs:
        for idx, m in enumerate(doc.mentions):
            key = mention_key(doc.doc_id, m.sentence_index, m.start, m.end)
            if key not in pooled:
                missing.append(key)
            mentions.append((key, doc, idx))
    if missing:
        raise KeyError(f"pooled vectors missing for mentions: {missing}")

    folds = assign_folds(docs, k, config.seed)
    result = CrossvalResult(fold_of_doc=dict(folds))
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xDE7]))

    for fold in range(k):
        train_docs = sorted(
            (d for d in docs if folds[d.doc_id] != fold), key=lambda d: d.doc_id
        )
        test_docs = [d for d in docs if folds[d.doc_id] == fold]
        dev_count = max(1, int(round(config.dev_fraction * len(train_docs))))
        dev_pick = list(train_docs)
        rng.shuffle(dev_pick)
        dev_ids = {d.doc_id for d in dev_pick[:dev_count]}

        def samples(pool, from_dev):
            xs, ys = [], []
            for d in pool:
                if (d.doc_id in dev_ids) != from_dev:
                    continue
                for m in d.mentions:
                    if m.entity_type is None:
                        continue
                    key = mention_key(d.doc_id, m.sentence_index, m.start, m.end)
                    xs.append(pooled[key])
                    ys.append(label_index[scheme.canonical(m.entity_type)])
            if not xs:
                return np.zeros((0, 1)), np.zeros(0, dtype=int)
            return np.stack(xs), np.asarray(ys)

        train_x, train_y = samples(train_docs, from_dev=False)
        dev_x, dev_y = samples(train_docs, from_dev=True)
        if train_x.shape[0] == 0:
            raise ValueError(f"fold {fold}: no typed mentions to train on")
        head = train_type_head(train_x, train_y, dev_x, dev_y, len(labels), config)

        for doc in test_docs:
            for m in doc.mentions:
                key = mention_key(doc.doc_id, m.sentence_index, m.start, m.end)
                prediction = classify(np.asarray(pooled[key]), head, labels, key)
                result.predictions[key] = prediction
                result.records.append(
                    {
                        "doc_id": doc.doc_id,
                        "sentence_index": m.sentence_index,
                        "start": m.start,
                        "end": m.end,
                        "type": prediction.label,
                    }
                )
    result.records.sort(key=lambda r: (r["doc_id"], r["sentence_index"], r["start"], r["end"]))
    return result


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------

SLICES = ("PRP (dem.)", "PRP (pers.)", "NP (len = 1)", "NP (len = 2)", "NP (len > 2)")


def slice_of(mention_tokens: Sequence[str]) -> str:
    """Surface-form slice: pronoun classes for single tokens, else NP length."""
    if len(mention_tokens) == 1:
        word = mention_tokens[0].lower()
        if word in DEMONSTRATIVE_PRONOUNS:
            return "PRP (dem.)"
        if word in PERSONAL_PRONOUNS:
            return "PRP (pers.)"
        return "NP (len = 1)"
    if len(mention_tokens) == 2:
        return "NP (len = 2)"
    return "NP (len > 2)"


@dataclass
class TypePredReport:
    macro_f1: float
    accuracy: float
    total: int
    slices: dict[str, tuple[float, int]]  # slice -> (accuracy, sample count)

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "total": self.total,
            "slices": {name: {"accuracy": acc, "count": n} for name, (acc, n) in self.slices.items()},
        }

    def format_table(self) -> str:
        lines = [
            f"{'slice':<14} {'accuracy':>9} {'count':>7}",
            f"{'all':<14} {100 * self.accuracy:>8.2f} {self.total:>7}",
        ]
        for name in SLICES:
            acc, n = self.slices.get(name, (0.0, 0))
            shown = f"{100 * acc:>8.2f}" if n else f"{'-':>8}"
            lines.append(f"{name:<14} {shown} {n:>7}")
        lines.append(f"macro F1: {100 * self.macro_f1:.2f}")
        return "\n".join(lines)


def evaluate_typepred(docs: Sequence[Document], predictions: Mapping[str, str],
                      scheme: TypeScheme | str) -> TypePredReport:
    """Score predicted labels against gold types, ignoring untyped mentions."""
    scheme = get_scheme(scheme) if isinstance(scheme, str) else scheme
    labels = tuple(label for label in scheme.labels if label != NA)
    label_index = {label: i for i, label in enumerate(labels)}

    gold_ids: list[int] = []
    pred_ids: list[int] = []
    per_slice: dict[str, list[bool]] = {name: [] for name in SLICES}
    for doc in docs:
        for m in doc.mentions:
            if m.entity_type is None:
                continue
            key = mention_key(doc.doc_id, m.sentence_index, m.start, m.end)
            if key not in predictions:
                raise KeyError(f"no prediction for typed mention {key}")
            gold = scheme.canonical(m.entity_type)
            pred = scheme.canonical(predictions[key])
            gold_ids.append(label_index[gold])
            pred_ids.append(label_index.get(pred, -1))
            per_slice[slice_of(doc.mention_tokens(m))].append(gold == pred)

    total = len(gold_ids)
    correct = sum(g == p for g, p in zip(gold_ids, pred_ids))
    return TypePredReport(
        macro_f1=macro_f1(gold_ids, pred_ids) if total else 0.0,
        accuracy=correct / total if total else 0.0,
        total=total,
        slices={
            name: ((sum(hits) / len(hits)) if hits else 0.0, len(hits))
            for name, hits in per_slice.items()
        },
    )
