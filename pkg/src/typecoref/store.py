"""Read-only binary store of per-token contextual embeddings ("CTE1").

File layout, little-endian throughout: the 4 magic bytes ``CTE1`` followed by
records ``[u32 id_len][id utf-8][u32 token_count][u32 dim][token_count*dim
f32]`` with no footer.  Opening scans the file once to index record offsets;
rows are fetched lazily and bit-exactly via ``pread``, so one store can serve
concurrent readers.

Also provides a seeded synthetic embedder so models can train and tests can
run without a real encoder.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .corpus import Document

MAGIC = b"CTE1"
_U32 = struct.Struct("<I")


class StoreFormatError(ValueError):
    """The file is not a well-formed CTE1 store."""


@dataclass
class EmbeddingStore:
    """Index over one CTE1 file: doc_id -> (data offset, token_count, dim)."""

    path: str
    dim: int | None
    index: dict[str, tuple[int, int, int]]
    _fd: int = field(repr=False, default=-1)

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.index

    def doc_ids(self) -> list[str]:
        return list(self.index)

    def fetch(self, doc_id: str) -> np.ndarray:
        """The stored ``token_count x dim`` float32 matrix, bit-exact."""
        try:
            offset, token_count, dim = self.index[doc_id]
        except KeyError:
            raise KeyError(f"document {doc_id!r} not in store {self.path}") from None
        n_bytes = token_count * dim * 4
        data = os.pread(self._fd, n_bytes, offset)
        if len(data) != n_bytes:
            raise StoreFormatError(f"store truncated while reading {doc_id!r}")
        return np.frombuffer(data, dtype="<f4").reshape(token_count, dim)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> "EmbeddingStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _read_exact(fd: int, n: int, offset: int, what: str) -> bytes:
    data = os.pread(fd, n, offset)
    if len(data) != n:
        raise StoreFormatError(f"truncated record: {what} at offset {offset}")
    return data


def open_store(path: str | os.PathLike) -> EmbeddingStore:
    """Open and index a CTE1 file; all records must share one dim."""
    path = os.fspath(path)
    fd = os.open(path, os.O_RDONLY)
    try:
        size = os.fstat(fd).st_size
        if size < 4 or os.pread(fd, 4, 0) != MAGIC:
            raise StoreFormatError(f"{path}: bad magic, expected {MAGIC!r}")
        offset = 4
        index: dict[str, tuple[int, int, int]] = {}
        dim: int | None = None
        while offset < size:
            (id_len,) = _U32.unpack(_read_exact(fd, 4, offset, "id length"))
            offset += 4
            doc_id = _read_exact(fd, id_len, offset, "doc id").decode("utf-8")
            offset += id_len
            (token_count,) = _U32.unpack(_read_exact(fd, 4, offset, "token count"))
            (rec_dim,) = _U32.unpack(_read_exact(fd, 4, offset + 4, "dim"))
            offset += 8
            if dim is None:
                dim = rec_dim
            elif rec_dim != dim:
                raise StoreFormatError(
                    f"{path}: record {doc_id!r} has dim {rec_dim}, store dim {dim}"
                )
            n_bytes = token_count * rec_dim * 4
            if offset + n_bytes > size:
                raise StoreFormatError(f"truncated record: data at offset {offset}")
            if doc_id in index:
                raise StoreFormatError(f"{path}: duplicate record for {doc_id!r}")
            index[doc_id] = (offset, token_count, rec_dim)
            offset += n_bytes
        return EmbeddingStore(path, dim, index, fd)
    except Exception:
        os.close(fd)
        raise


def write_store(
    path: str | os.PathLike, records: Iterable[tuple[str, np.ndarray]]
) -> int:
    """Write records to a new CTE1 file (atomically); returns record count.

    Matrices are cast to little-endian float32; every record must have the
    same second dimension.
    """
    path = os.fspath(path)
    tmp = path + ".tmp"
    n = 0
    dim: int | None = None
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for doc_id, matrix in records:
            matrix = np.ascontiguousarray(matrix, dtype="<f4")
            if matrix.ndim != 2:
                raise ValueError(f"record {doc_id!r}: expected 2-D matrix")
            if dim is None:
                dim = matrix.shape[1]
            elif matrix.shape[1] != dim:
                raise ValueError(
                    f"record {doc_id!r}: dim {matrix.shape[1]} != store dim {dim}"
                )
            encoded = doc_id.encode("utf-8")
            fh.write(_U32.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U32.pack(matrix.shape[0]))
            fh.write(_U32.pack(matrix.shape[1]))
            fh.write(matrix.tobytes())
            n += 1
    os.replace(tmp, path)
    return n


# ---------------------------------------------------------------------------
# Synthetic embeddings
# ---------------------------------------------------------------------------


def _expand(key: bytes, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(key, digest_size=16).digest()
    rng = np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))
    return rng.uniform(-1.0, 1.0, dim)


def synth_embeddings(doc: Document, dim: int, seed: int) -> np.ndarray:
    """Deterministic stand-in embeddings, one row per document token.

    Each row is a fixed function of (token string, global position, seed),
    bounded in [-1, 1].  The token-identity component dominates so repeated
    surface forms stay close; position adds a small perturbation.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    rows = np.empty((doc.token_count, dim), dtype=np.float32)
    for i, token in enumerate(doc.tokens()):
        token_part = _expand(f"tok\x00{seed}\x00{token}".encode(), dim)
        pos_part = _expand(f"pos\x00{seed}\x00{i}\x00{token}".encode(), dim)
        rows[i] = 0.8 * token_part + 0.2 * pos_part
    return rows


def build_synth_store(
    path: str | os.PathLike, docs: Iterable[Document], dim: int, seed: int
) -> int:
    """Write a CTE1 store of synthetic embeddings for ``docs``."""
    return write_store(path, ((d.doc_id, synth_embeddings(d, dim, seed)) for d in docs))
