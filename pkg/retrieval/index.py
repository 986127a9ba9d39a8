"""
HopLink Embedding Index
Exact (exhaustive) cosine retrieval over chunked documents.

Binary layout: b"HLEI" magic, little-endian uint32 dimension and count, then
`count` fixed-width records of (int64 chunk id, float64[dimension] vector).
A sidecar TSV next to it maps chunk id -> source id -> text.
"""

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from llm.gateway import estimate_tokens
from retrieval.embedder import Embedder, EmbeddingVector
from shared.errors import ConfigurationError, IngestionError

logger = logging.getLogger(__name__)

MAGIC = b"HLEI"
DEFAULT_CHUNK_SIZE = 256
DEFAULT_OVERLAP = 32


@dataclass
class DocumentChunk:
    chunk_id: int
    source_id: str
    text: str
    vector: Optional[EmbeddingVector] = None


def chunk_text(text: str, size: int, overlap: int,
               estimator: Callable[[str], int] = estimate_tokens) -> List[str]:
    """
    Word-aligned windows of at most `size` estimated tokens; each window
    repeats up to `overlap` estimated tokens from the end of the previous one.
    A single word longer than `size` still forms its own window.
    """
    if not size > overlap >= 0:
        raise ConfigurationError(f"chunking needs size > overlap >= 0 (got {size}, {overlap})")
    words = text.split()
    if not words:
        return []
    chunks = []
    start = 0
    while True:
        end = start + 1
        while end < len(words) and estimator(" ".join(words[start:end + 1])) <= size:
            end += 1
        chunks.append(" ".join(words[start:end]))
        if end >= len(words):
            break
        following = end
        while following - 1 > start and estimator(" ".join(words[following - 1:end])) <= overlap:
            following -= 1
        start = following
    return chunks


def _tsv_field(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _tsv_unfield(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


class EmbeddingIndex:
    """
    Append-only chunk store. Adding the same source twice stores its chunks
    twice under new ids; deduplication is the caller's concern.
    """

    def __init__(self, embedder: Embedder, chunk_size: int = DEFAULT_CHUNK_SIZE,
                 overlap: int = DEFAULT_OVERLAP):
        if not chunk_size > overlap >= 0:
            raise ConfigurationError(f"chunking needs size > overlap >= 0 (got {chunk_size}, {overlap})")
        self.embedder = embedder
        self.dimension = embedder.dimension
        self.chunk_size = chunk_size
        self.overlap = overlap
        self._chunks: List[DocumentChunk] = []
        self._by_id: Dict[int, DocumentChunk] = {}
        self._matrix: Optional[np.ndarray] = None
        self._lock = threading.Lock()
        self.logger = logging.getLogger(__name__)

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunks(self) -> List[DocumentChunk]:
        return list(self._chunks)

    def get(self, chunk_id: int) -> DocumentChunk:
        return self._by_id[chunk_id]

    def _store(self, chunk: DocumentChunk) -> None:
        if chunk.vector.dimension != self.dimension:
            raise ConfigurationError(
                f"vector dimension {chunk.vector.dimension} does not match index dimension {self.dimension}")
        self._chunks.append(chunk)
        self._by_id[chunk.chunk_id] = chunk
        self._matrix = None

    def add(self, source_id: str, text: str, chunk_size: Optional[int] = None,
            overlap: Optional[int] = None) -> List[int]:
        size = self.chunk_size if chunk_size is None else chunk_size
        lap = self.overlap if overlap is None else overlap
        pieces = chunk_text(text, size, lap)
        if not pieces:
            self.logger.warning(f"Source {source_id!r} has no text; nothing indexed")
            return []
        vectors = self.embedder.embed_many(pieces)
        ids = []
        with self._lock:
            for piece, vector in zip(pieces, vectors):
                chunk_id = len(self._chunks)
                self._store(DocumentChunk(chunk_id, source_id, piece, vector))
                ids.append(chunk_id)
        return ids

    def _normalized_matrix(self) -> np.ndarray:
        with self._lock:
            if self._matrix is None:
                matrix = np.vstack([c.vector.values for c in self._chunks]).astype(np.float64)
                norms = np.linalg.norm(matrix, axis=1, keepdims=True)
                norms[norms == 0.0] = 1.0
                self._matrix = matrix / norms
            return self._matrix

    def top_k(self, query: str, k: int) -> List[Tuple[int, float]]:
        """(chunk id, cosine) pairs, scores descending, ties by ascending chunk id"""
        if k < 1:
            raise ConfigurationError("k must be at least 1")
        if not self._chunks:
            self.logger.warning("top_k on an empty index")
            return []
        vector = self.embedder.embed(query)
        return self.top_k_vector(vector, k)

    def top_k_vector(self, vector: EmbeddingVector, k: int) -> List[Tuple[int, float]]:
        if not self._chunks:
            self.logger.warning("top_k on an empty index")
            return []
        matrix = self._normalized_matrix()
        ids = np.fromiter((c.chunk_id for c in self._chunks), dtype=np.int64, count=len(self._chunks))
        norm = float(np.linalg.norm(vector.values))
        if vector.degenerate or norm == 0.0:
            self.logger.warning("Degenerate (zero) query vector; all scores are 0")
            scores = np.zeros(len(self._chunks))
        else:
            scores = matrix @ (vector.values / norm)
        order = np.lexsort((ids, -scores))[:min(k, len(self._chunks))]
        return [(int(ids[i]), float(scores[i])) for i in order]

    def search(self, query: str, k: int) -> List[Tuple[DocumentChunk, float]]:
        return [(self._by_id[chunk_id], score) for chunk_id, score in self.top_k(query, k)]

    # ----- persistence -----------------------------------------------------

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        record = np.dtype([("id", "<i8"), ("vec", "<f8", (self.dimension,))])
        records = np.zeros(len(self._chunks), dtype=record)
        for row, chunk in enumerate(self._chunks):
            records[row]["id"] = chunk.chunk_id
            records[row]["vec"] = chunk.vector.values
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(np.array([self.dimension, len(self._chunks)], dtype="<u4").tobytes())
            f.write(records.tobytes())
        with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as f:
            for chunk in self._chunks:
                f.write(f"{chunk.chunk_id}\t{_tsv_field(chunk.source_id)}\t{_tsv_field(chunk.text)}\n")
        self.logger.info(f"Saved {len(self._chunks)} chunks (dimension {self.dimension}) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path], embedder: Embedder,
             chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_OVERLAP) -> "EmbeddingIndex":
        path = Path(path)
        try:
            data = path.read_bytes()
            sidecar = sidecar_path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise IngestionError(f"cannot read index: {e}", str(path)) from e
        if data[:4] != MAGIC:
            raise IngestionError("not an embedding index file", str(path))
        dimension, count = (int(v) for v in np.frombuffer(data[4:12], dtype="<u4"))
        if dimension != embedder.dimension:
            raise ConfigurationError(
                f"index dimension {dimension} does not match embedder dimension {embedder.dimension}")
        record = np.dtype([("id", "<i8"), ("vec", "<f8", (dimension,))])
        records = np.frombuffer(data[12:], dtype=record, count=count)

        texts = {}
        for line in sidecar.split("\n")[:-1]:
            chunk_id, source_id, text = line.split("\t")
            texts[int(chunk_id)] = (_tsv_unfield(source_id), _tsv_unfield(text))

        index = cls(embedder, chunk_size=chunk_size, overlap=overlap)
        for row in records:
            chunk_id = int(row["id"])
            if chunk_id not in texts:
                raise IngestionError(f"chunk {chunk_id} missing from sidecar", str(path))
            source_id, text = texts[chunk_id]
            index._store(DocumentChunk(chunk_id, source_id, text,
                                       EmbeddingVector.of(np.array(row["vec"]), dimension)))
        return index


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".tsv")
