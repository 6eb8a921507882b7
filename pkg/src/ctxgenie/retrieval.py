"""Corpus chunking, exact cosine retrieval and rerank-filtered selection.

Chunking is recursive: text splits on the first separator (in preference
order) that occurs in it, oversized pieces recurse on the remaining
separators, and adjacent pieces are greedily re-merged up to the chunk size
with whole-piece overlap carried between consecutive chunks.  Chunks are
tracked as character spans of the source document, so every chunk text is a
verbatim substring and offsets are exact.

The vector index is exact and tiny on purpose: embeddings are unit-norm, so
cosine similarity is a dot product.  Scores are computed in float64 by the
shared kernels (numba-accelerated when available) and ties break toward the
lower chunk id.  Retrieval fetches ``k_retrieve`` candidates by cosine and
keeps the ``k_keep`` best after reranking; rerank ties preserve the cosine
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .evalsuite.metrics import SOURCE_RETRIEVED, TrialPassage

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_CHUNK_OVERLAP = 200
DEFAULT_SEPARATORS = ("\n\n", "\n", " ", "")

DEFAULT_K_RETRIEVE = 10
DEFAULT_K_KEEP = 5

#: Chunk provenance tags: knowledge-base documents vs. generated contexts.
CHUNK_SOURCE_KB = "kb"
CHUNK_SOURCE_GENERATED = "generated"

#: Corpus composition scopes for :func:`mixed_corpus`.
SCOPE_KB_ONLY = "kb-only"
SCOPE_KB_TEST = "kb+test-contexts"
SCOPE_KB_TRAIN_TEST = "kb+train-and-test-contexts"
CORPUS_SCOPES = (SCOPE_KB_ONLY, SCOPE_KB_TEST, SCOPE_KB_TRAIN_TEST)

_INDEX_VERSION = 1
_VECTORS_FILE = "vectors.bin"
_CHUNKS_FILE = "chunks.jsonl"
_VECTORS_MAGIC = "ctxgenie-index"


@dataclass(frozen=True)
class Chunk:
    """A verbatim slice of one source document.

    ``source`` records provenance: ``"kb"`` for knowledge-base documents and
    ``"generated"`` for chunks cut from generated contexts folded into the
    corpus by :func:`mixed_corpus`.
    """

    chunk_id: int
    doc_id: str
    text: str
    start: int
    end: int
    source: str = CHUNK_SOURCE_KB

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "start": self.start,
            "end": self.end,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Chunk":
        return cls(
            chunk_id=int(obj["chunk_id"]),
            doc_id=str(obj["doc_id"]),
            text=str(obj["text"]),
            start=int(obj["start"]),
            end=int(obj["end"]),
            source=str(obj.get("source", CHUNK_SOURCE_KB)),
        )


# ---------------------------------------------------------------------------
# Recursive character splitting
# ---------------------------------------------------------------------------


def _split_spans(
    text: str, start: int, end: int, chunk_size: int, separators: Sequence[str]
) -> list[tuple[int, int]]:
    """Ordered atomic piece spans, each at most ``chunk_size`` characters.

    Splits on the first separator present in the segment; oversized pieces
    recurse with the remaining separators.  The empty separator (implicit
    final fallback) splits into single characters, which the merge phase
    recombines into sliding windows.
    """
    if end - start <= chunk_size:
        return [(start, end)] if end > start else []
    seps = list(separators)
    while seps:
        sep = seps.pop(0)
        if sep == "":
            return [(i, i + 1) for i in range(start, end)]
        if sep in text[start:end]:
            pieces: list[tuple[int, int]] = []
            cursor = start
            while cursor < end:
                idx = text.find(sep, cursor, end)
                if idx == -1:
                    idx = end
                if idx > cursor:
                    if idx - cursor > chunk_size:
                        pieces.extend(_split_spans(text, cursor, idx, chunk_size, seps))
                    else:
                        pieces.append((cursor, idx))
                cursor = idx + len(sep)
            return pieces
    # No listed separator occurs: fall back to character pieces.
    return [(i, i + 1) for i in range(start, end)]


def _merge_spans(
    pieces: Sequence[tuple[int, int]], chunk_size: int, overlap: int
) -> list[tuple[int, int]]:
    """Greedily merge adjacent pieces into chunks with whole-piece overlap.

    A chunk's span runs from its first piece's start to its last piece's end,
    so separator bytes between merged pieces stay inside the chunk.  When a
    chunk closes, trailing whole pieces totalling at most ``overlap``
    characters seed the next chunk; pieces are never split to make overlap.
    """
    chunks: list[tuple[int, int]] = []
    current: list[tuple[int, int]] = []
    for piece in pieces:
        if not current:
            current = [piece]
            continue
        if piece[1] - current[0][0] <= chunk_size:
            current.append(piece)
            continue
        chunks.append((current[0][0], current[-1][1]))
        chunk_end = current[-1][1]
        tail: list[tuple[int, int]] = []
        for prev in reversed(current):
            if chunk_end - prev[0] <= overlap and piece[1] - prev[0] <= chunk_size:
                tail.insert(0, prev)
            else:
                break
        current = tail + [piece]
    if current:
        chunks.append((current[0][0], current[-1][1]))
    return chunks


def split_text(
    text: str,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
    doc_id: str = "",
    first_chunk_id: int = 0,
    source: str = CHUNK_SOURCE_KB,
) -> list[Chunk]:
    """Split one document into overlapping chunks of at most ``chunk_size``.

    Every chunk text is ``text[chunk.start:chunk.end]`` exactly; consecutive
    chunks overlap by whole pieces totalling at most ``chunk_overlap``
    characters.  Chunks that would be empty or all-whitespace are dropped.
    """
    if chunk_size < 1:
        raise DataError("chunk_size must be >= 1")
    if not 0 <= chunk_overlap < chunk_size:
        raise DataError("chunk_overlap must satisfy 0 <= overlap < chunk_size")
    pieces = _split_spans(text, 0, len(text), chunk_size, separators)
    pieces = [p for p in pieces if text[p[0] : p[1]].strip()]
    spans = _merge_spans(pieces, chunk_size, chunk_overlap)
    chunks = []
    for i, (start, end) in enumerate(spans):
        chunks.append(
            Chunk(
                chunk_id=first_chunk_id + i,
                doc_id=doc_id,
                text=text[start:end],
                start=start,
                end=end,
                source=source,
            )
        )
    return chunks


def split_documents(
    documents: Sequence[tuple[str, str]],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
    source: str = CHUNK_SOURCE_KB,
) -> list[Chunk]:
    """Split ``(doc_id, text)`` pairs; chunk ids are global and sequential."""
    chunks: list[Chunk] = []
    for doc_id, text in documents:
        chunks.extend(
            split_text(
                text,
                chunk_size=chunk_size,
                chunk_overlap=chunk_overlap,
                separators=separators,
                doc_id=doc_id,
                first_chunk_id=len(chunks),
                source=source,
            )
        )
    return chunks


@dataclass(frozen=True)
class MixedCorpus:
    """A chunk corpus assembled from knowledge-base documents and,
    depending on scope, generated contexts cut with the same splitter."""

    chunks: tuple[Chunk, ...]
    scope: str
    n_kb: int
    n_generated: int

    def counts(self) -> dict:
        return {
            "scope": self.scope,
            "kb": self.n_kb,
            "generated": self.n_generated,
            "total": len(self.chunks),
        }


def _bundle_documents(bundles: Sequence) -> list[tuple[str, str]]:
    """One pseudo-document per generated context, named by record/view/ordinal."""
    docs: list[tuple[str, str]] = []
    for bundle in bundles:
        for context in bundle.contexts:
            doc_id = f"{bundle.record_id}/{context.view}/{context.ordinal}"
            docs.append((doc_id, context.text))
    return docs


def mixed_corpus(
    kb_chunks: Sequence[Chunk],
    test_bundles: Sequence = (),
    scope: str = SCOPE_KB_ONLY,
    train_bundles: Sequence = (),
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
    separators: Sequence[str] = DEFAULT_SEPARATORS,
) -> MixedCorpus:
    """Combine knowledge-base chunks with generated-context chunks.

    Scopes: ``kb-only`` passes the knowledge base through unchanged;
    ``kb+test-contexts`` appends the test-set bundles' contexts, chunked with
    the same splitter and tagged ``source="generated"``;
    ``kb+train-and-test-contexts`` appends train-set contexts as well.  All
    chunks are renumbered densely so the result can back a
    :class:`VectorIndex` directly.
    """
    if scope not in CORPUS_SCOPES:
        raise ConfigError(
            f"unknown corpus scope {scope!r}; expected one of {', '.join(CORPUS_SCOPES)}"
        )
    documents: list[tuple[str, str]] = []
    if scope in (SCOPE_KB_TEST, SCOPE_KB_TRAIN_TEST):
        documents.extend(_bundle_documents(test_bundles))
    if scope == SCOPE_KB_TRAIN_TEST:
        documents.extend(_bundle_documents(train_bundles))
    generated = split_documents(
        documents,
        chunk_size=chunk_size,
        chunk_overlap=chunk_overlap,
        separators=separators,
        source=CHUNK_SOURCE_GENERATED,
    )
    combined: list[Chunk] = []
    for chunk in list(kb_chunks) + generated:
        combined.append(replace(chunk, chunk_id=len(combined)))
    return MixedCorpus(
        chunks=tuple(combined),
        scope=scope,
        n_kb=len(kb_chunks),
        n_generated=len(generated),
    )


# ---------------------------------------------------------------------------
# Exact cosine index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchHit:
    chunk_id: int
    score: float


class VectorIndex:
    """Exact dot-product index over unit-norm chunk embeddings.

    Vectors are stored float32 (rows in chunk-id order) and scored in
    float64; equal scores rank by ascending chunk id.
    """

    VECTORS_FILE = _VECTORS_FILE
    CHUNKS_FILE = _CHUNKS_FILE

    def __init__(self, vectors: np.ndarray, chunks: Sequence[Chunk]) -> None:
        vectors = np.asarray(vectors)
        if vectors.ndim != 2:
            raise DataError("index vectors must be a 2-D array")
        if len(chunks) != vectors.shape[0]:
            raise DataError(
                f"index has {vectors.shape[0]} vectors but {len(chunks)} chunks"
            )
        for i, chunk in enumerate(chunks):
            if chunk.chunk_id != i:
                raise DataError(
                    f"chunks must be in dense id order: position {i} holds id {chunk.chunk_id}"
                )
        self.vectors = vectors.astype(np.float32, copy=False)
        self.chunks = list(chunks)
        self._matrix64: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def chunk(self, chunk_id: int) -> Chunk:
        return self.chunks[chunk_id]

    def _scores(self, query: np.ndarray) -> np.ndarray:
        if self._matrix64 is None:
            self._matrix64 = np.ascontiguousarray(self.vectors, dtype=np.float64)
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.dim:
            raise DataError(f"query has dim {query.shape[0]}, index has dim {self.dim}")
        return kernels.dot_scores(self._matrix64, query)

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        """Top-``k`` chunks by cosine score, ties toward the lower chunk id."""
        if k < 1:
            raise DataError("k must be >= 1")
        if not self.chunks:
            return []
        scores = self._scores(query)
        order = np.argsort(-scores, kind="stable")[: min(k, len(scores))]
        return [SearchHit(chunk_id=int(i), score=float(scores[i])) for i in order]

    # -- persistence ----------------------------------------------------------

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {
            "magic": _VECTORS_MAGIC,
            "version": _INDEX_VERSION,
            "count": len(self.chunks),
            "dim": self.dim,
            "dtype": "float32",
            "byteorder": "little",
        }
        payload = np.ascontiguousarray(self.vectors, dtype="<f4").tobytes()
        with (directory / _VECTORS_FILE).open("wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
            fh.write(payload)
        with (directory / _CHUNKS_FILE).open("w", encoding="utf-8") as fh:
            for chunk in self.chunks:
                fh.write(json.dumps(chunk.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "VectorIndex":
        directory = Path(directory)
        vectors_path = directory / _VECTORS_FILE
        chunks_path = directory / _CHUNKS_FILE
        if not vectors_path.exists() or not chunks_path.exists():
            raise DataError(f"no index found in {directory}")
        with vectors_path.open("rb") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line.decode("ascii"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DataError(f"{vectors_path}: corrupt index header") from exc
            if header.get("magic") != _VECTORS_MAGIC:
                raise DataError(f"{vectors_path}: not an index file")
            if header.get("version") != _INDEX_VERSION:
                raise DataError(
                    f"{vectors_path}: unsupported index version {header.get('version')!r}"
                )
            count, dim = int(header["count"]), int(header["dim"])
            raw = fh.read()
        expected = count * dim * 4
        if len(raw) != expected:
            raise DataError(
                f"{vectors_path}: payload is {len(raw)} bytes, expected {expected}"
            )
        vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
        chunks = []
        with chunks_path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    chunks.append(Chunk.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataError(f"{chunks_path}:{lineno}: corrupt chunk line ({exc})")
        return cls(vectors=vectors, chunks=chunks)

    @classmethod
    def build(
        cls,
        chunks: Sequence[Chunk],
        embed_fn: Callable[[Sequence[str]], np.ndarray],
        batch_size: int = 64,
    ) -> "VectorIndex":
        """Embed chunk texts in deterministic batches and assemble the index."""
        if not chunks:
            raise DataError("cannot build an index from zero chunks")
        rows = []
        texts = [c.text for c in chunks]
        for start in range(0, len(texts), batch_size):
            rows.append(embed_fn(texts[start : start + batch_size]))
        return cls(vectors=np.vstack(rows), chunks=chunks)


# ---------------------------------------------------------------------------
# Retrieval with rerank filtering
# ---------------------------------------------------------------------------


def rerank_order(scores: Sequence[float]) -> list[int]:
    """Indices sorted by descending score; ties keep the input (cosine) order."""
    return sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))


@dataclass(frozen=True)
class RetrievalResult:
    """Candidates and the rerank-filtered selection for one query."""

    query: str
    hits: tuple[SearchHit, ...]
    rerank_scores: tuple[float, ...]
    kept: tuple[Chunk, ...]

    def passages(self) -> list[TrialPassage]:
        return [
            TrialPassage(text=c.text, source=SOURCE_RETRIEVED, view=None) for c in self.kept
        ]


def retrieve_with_rerank(
    index: VectorIndex,
    query_text: str,
    query_vector: np.ndarray,
    rerank_fn: Callable[[str, Sequence[str]], Sequence[float]],
    k_retrieve: int = DEFAULT_K_RETRIEVE,
    k_keep: int = DEFAULT_K_KEEP,
) -> RetrievalResult:
    """Cosine-retrieve ``k_retrieve`` chunks, rerank them, keep the best
    ``k_keep`` in reranked order."""
    if k_keep < 1 or k_retrieve < k_keep:
        raise DataError("need k_retrieve >= k_keep >= 1")
    hits = index.search(query_vector, k_retrieve)
    candidates = [index.chunk(h.chunk_id) for h in hits]
    scores = [float(s) for s in rerank_fn(query_text, [c.text for c in candidates])]
    if len(scores) != len(candidates):
        raise DataError(
            f"reranker returned {len(scores)} scores for {len(candidates)} passages"
        )
    order = rerank_order(scores)[:k_keep]
    kept = tuple(candidates[i] for i in order)
    return RetrievalResult(
        query=query_text,
        hits=tuple(hits),
        rerank_scores=tuple(scores),
        kept=kept,
    )
