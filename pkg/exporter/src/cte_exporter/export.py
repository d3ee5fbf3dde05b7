"""Run a frozen pretrained encoder over token sequences and write CTE1 stores.

Inputs are JSON-lines: document mode takes ``{doc_id, sentences}`` (a list of
token lists) and encodes the flattened document; marked mode takes ``{key,
tokens}`` where the tokens wrap one mention in ``<ENT_START>``/``<ENT_END>``
markers and may not exceed 128 tokens.  Subword vectors are mean-pooled back
onto the source tokens, so each output record has exactly one row per input
token.  Documents longer than the encoder window are encoded in overlapping
subword windows and each position takes its vector from the window whose
center is nearest.

The store layout (magic ``CTE1``; records ``[u32 id_len][id][u32
token_count][u32 dim][float32 rows]``, little-endian) is the interchange
format consumed by downstream coreference tooling.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np
import torch

ENT_START = "<ENT_START>"
ENT_END = "<ENT_END>"
MAX_MARKED_TOKENS = 128

MAGIC = b"CTE1"
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class ExportRequest:
    """One export job; ``encoder`` is a model name or local path."""

    mode: str                      # "document" or "marked"
    input_path: str
    output_path: str
    encoder: str = "bert-base-cased"
    max_subwords: int = 512        # window size including [CLS]/[SEP]
    stride: int = 128
    batch_size: int = 8

    def __post_init__(self):
        if self.mode not in ("document", "marked"):
            raise ValueError(f"mode must be 'document' or 'marked', got {self.mode!r}")
        if self.max_subwords < 8:
            raise ValueError("max_subwords too small")
        if not 0 < self.stride < self.max_subwords:
            raise ValueError("stride must be positive and below the window size")


@dataclass
class EncoderBundle:
    """Tokenizer plus frozen model, with the marker tokens in the vocabulary."""

    tokenizer: object
    model: torch.nn.Module
    name: str
    markers_added: int = 0

    @property
    def hidden_size(self) -> int:
        return int(self.model.config.hidden_size)


def load_encoder(name_or_path: str) -> EncoderBundle:
    """Load a frozen encoder from a local cache or path and add the markers."""
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name_or_path)
    model = AutoModel.from_pretrained(name_or_path)
    added = tokenizer.add_tokens([ENT_START, ENT_END])
    if added:
        model.resize_token_embeddings(len(tokenizer))
    model.eval()
    for parameter in model.parameters():
        parameter.requires_grad_(False)
    return EncoderBundle(tokenizer, model, str(name_or_path), added)


# ---------------------------------------------------------------------------
# CTE1 writing
# ---------------------------------------------------------------------------


def write_cte1(path: str | os.PathLike, records: Iterable[tuple[str, np.ndarray]]) -> int:
    """Write records to a CTE1 file atomically (temp file, then rename)."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    count = 0
    dim = None
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for record_id, matrix in records:
            matrix = np.ascontiguousarray(matrix, dtype="<f4")
            if matrix.ndim != 2:
                raise ValueError(f"record {record_id!r}: expected a 2-D matrix")
            if dim is None:
                dim = matrix.shape[1]
            elif matrix.shape[1] != dim:
                raise ValueError(f"record {record_id!r}: dim {matrix.shape[1]} != {dim}")
            encoded = record_id.encode("utf-8")
            fh.write(_U32.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U32.pack(matrix.shape[0]))
            fh.write(_U32.pack(matrix.shape[1]))
            fh.write(matrix.tobytes())
            count += 1
    os.replace(tmp, path)
    return count


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _window_starts(n_subwords: int, body: int, stride: int) -> list[int]:
    if n_subwords <= body:
        return [0]
    starts = list(range(0, n_subwords - body, stride))
    starts.append(n_subwords - body)
    return starts


def _run_window(bundle: EncoderBundle, ids: list[int]) -> np.ndarray:
    tokenizer = bundle.tokenizer
    input_ids = [tokenizer.cls_token_id] + ids + [tokenizer.sep_token_id]
    batch = {
        "input_ids": torch.tensor([input_ids]),
        "attention_mask": torch.ones((1, len(input_ids)), dtype=torch.long),
    }
    with torch.no_grad():
        hidden = bundle.model(**batch).last_hidden_state[0]
    return hidden[1 : len(input_ids) - 1].numpy()


def encode_words(bundle: EncoderBundle, words: list[str],
                 max_subwords: int = 512, stride: int = 128) -> np.ndarray:
    """One vector per word: subword vectors mean-pooled; windows for long input.

    Words the tokenizer normalizes away entirely receive a zero vector so the
    row count always equals ``len(words)``.
    """
    hidden_size = bundle.hidden_size
    position_budget = getattr(bundle.model.config, "max_position_embeddings", None)
    if position_budget:
        max_subwords = min(max_subwords, int(position_budget))
        stride = min(stride, max_subwords - 2)
    if not words:
        return np.zeros((0, hidden_size), dtype=np.float32)
    encoding = bundle.tokenizer(words, is_split_into_words=True, add_special_tokens=False)
    ids = encoding["input_ids"]
    word_ids = encoding.word_ids()

    body = max_subwords - 2
    starts = _window_starts(len(ids), body, stride)
    vectors = np.zeros((len(ids), hidden_size), dtype=np.float32)
    if ids:
        owner = np.zeros(len(ids), dtype=int)
        best_distance = np.full(len(ids), np.inf)
        for w, start in enumerate(starts):
            stop = min(start + body, len(ids))
            center = (start + stop - 1) / 2.0
            for position in range(start, stop):
                distance = abs(position - center)
                if distance < best_distance[position]:
                    best_distance[position] = distance
                    owner[position] = w
        for w, start in enumerate(starts):
            stop = min(start + body, len(ids))
            window_vectors = _run_window(bundle, ids[start:stop])
            owned = [p for p in range(start, stop) if owner[p] == w]
            for position in owned:
                vectors[position] = window_vectors[position - start]

    out = np.zeros((len(words), hidden_size), dtype=np.float32)
    counts = np.zeros(len(words), dtype=np.int64)
    for position, word_id in enumerate(word_ids):
        if word_id is None:
            continue
        out[word_id] += vectors[position]
        counts[word_id] += 1
    nonzero = counts > 0
    out[nonzero] /= counts[nonzero, None]
    return out


def validate_marked(tokens: list[str], key: str) -> None:
    if len(tokens) > MAX_MARKED_TOKENS:
        raise ValueError(
            f"{key!r}: marked sequence has {len(tokens)} tokens, "
            f"limit is {MAX_MARKED_TOKENS} (truncate upstream)"
        )
    if tokens.count(ENT_START) != 1 or tokens.count(ENT_END) != 1:
        raise ValueError(f"{key!r}: expected exactly one {ENT_START} and one {ENT_END}")
    if tokens.index(ENT_START) >= tokens.index(ENT_END):
        raise ValueError(f"{key!r}: {ENT_START} must precede {ENT_END}")


def _read_jsonl(stream: IO[str]) -> Iterator[dict]:
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"input line {line_no}: invalid JSON ({exc})") from None


def iter_document_records(bundle: EncoderBundle, stream: IO[str],
                          request: ExportRequest) -> Iterator[tuple[str, np.ndarray]]:
    for record in _read_jsonl(stream):
        words = [token for sentence in record["sentences"] for token in sentence]
        matrix = encode_words(bundle, words, request.max_subwords, request.stride)
        yield str(record["doc_id"]), matrix


def iter_marked_records(bundle: EncoderBundle, stream: IO[str],
                        request: ExportRequest) -> Iterator[tuple[str, np.ndarray]]:
    for record in _read_jsonl(stream):
        key = str(record["key"])
        tokens = list(record["tokens"])
        validate_marked(tokens, key)
        matrix = encode_words(bundle, tokens, request.max_subwords, request.stride)
        yield key, matrix


def provenance(bundle: EncoderBundle, request: ExportRequest, record_count: int) -> dict:
    return {
        "encoder": bundle.name,
        "hidden_size": bundle.hidden_size,
        "mode": request.mode,
        "records": record_count,
        "pooling": "mean of subword vectors per source token",
        "layer": "last hidden layer",
        "windows": {"max_subwords": request.max_subwords, "stride": request.stride},
        "markers": {
            "tokens": [ENT_START, ENT_END],
            "handling": "added to the tokenizer vocabulary"
            + ("" if bundle.markers_added else " (already present)"),
        },
    }


def export(request: ExportRequest, bundle: EncoderBundle | None = None) -> int:
    """Run one export job; returns the number of records written.

    Writes the store plus a ``<output>.provenance.json`` sidecar describing
    the encoder and pooling configuration.
    """
    bundle = bundle or load_encoder(request.encoder)
    iterate = iter_document_records if request.mode == "document" else iter_marked_records
    with open(request.input_path, encoding="utf-8") as stream:
        count = write_cte1(request.output_path, iterate(bundle, stream, request))
    with open(request.output_path + ".provenance.json", "w", encoding="utf-8") as fh:
        json.dump(provenance(bundle, request, count), fh, indent=2)
        fh.write("\n")
    return count
