"""
Text embedders: a seeded feature-hash embedder for tests and offline runs,
and a remote HTTP embedder.
"""

import hashlib
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import requests

from shared.errors import BackendError, ConfigurationError

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    degenerate: bool = False

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def of(cls, values, dimension: Optional[int] = None) -> "EmbeddingVector":
        array = np.asarray(values, dtype=np.float64).reshape(-1)
        if dimension is not None and array.shape[0] != dimension:
            raise ValueError(f"expected dimension {dimension}, got {array.shape[0]}")
        if not np.all(np.isfinite(array)):
            raise ValueError("embedding contains non-finite values")
        return cls(array, degenerate=not np.any(array))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; 0.0 when either side is the zero vector"""
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


class Embedder:
    dimension: int

    def embed(self, text: str) -> EmbeddingVector:
        raise NotImplementedError

    def embed_many(self, texts: List[str]) -> List[EmbeddingVector]:
        return [self.embed(text) for text in texts]


class HashEmbedder(Embedder):
    """
    Signed feature hashing of lowercase word tokens into `dimension` buckets,
    L2-normalised. The seed keys the hash, so different seeds give unrelated
    projections.
    """

    def __init__(self, dimension: int = 256, seed: int = 0):
        if dimension < 1:
            raise ConfigurationError("embedding dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._key = int(seed).to_bytes(8, "little", signed=True)

    def _bucket(self, token: str):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        value = int.from_bytes(digest, "little")
        return value % self.dimension, 1.0 if (value >> 63) & 1 else -1.0

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dimension, dtype=np.float64)
        for token in _TOKEN.findall(text.lower()):
            index, sign = self._bucket(token)
            values[index] += sign
        norm = np.linalg.norm(values)
        if norm == 0.0:
            return EmbeddingVector(values, degenerate=True)
        return EmbeddingVector(values / norm)


class RemoteEmbedder(Embedder):
    """JSON-over-HTTP embedding endpoint returning a float array"""

    def __init__(self, endpoint: str, dimension: int, model: str = "text-embedding-ada-002",
                 api_key_env: str = "HOPLINK_EMBED_API_KEY", timeout: float = 30.0,
                 retries: int = 2, backoff_base: float = 1.0,
                 session: Optional[requests.Session] = None):
        if not endpoint:
            raise ConfigurationError("remote embedder needs an endpoint URL")
        self.endpoint = endpoint
        self.dimension = dimension
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self.session = session or requests.Session()

    @staticmethod
    def _vector_from(payload) -> list:
        # bare array, {"embedding": [...]} or {"data": [{"embedding": [...]}]}
        if isinstance(payload, list):
            return payload
        if isinstance(payload, dict):
            if "embedding" in payload:
                return payload["embedding"]
            data = payload.get("data")
            if data:
                return data[0].get("embedding", [])
        raise ValueError("no embedding array in response")

    def _request(self, text: str) -> list:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self.session.post(self.endpoint, json={"input": text, "model": self.model},
                                         headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise BackendError(f"embedding request failed: {e}", retryable=True) from e
        if response.status_code == 429 or response.status_code >= 500:
            raise BackendError(f"embedding endpoint returned {response.status_code}", retryable=True)
        if response.status_code >= 400:
            raise BackendError(f"embedding endpoint returned {response.status_code}: {response.text[:200]}",
                               retryable=False)
        try:
            return self._vector_from(response.json())
        except ValueError as e:
            raise BackendError(f"unreadable embedding response: {e}", retryable=False) from e

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            return EmbeddingVector(np.zeros(self.dimension), degenerate=True)
        for attempt in range(self.retries + 1):
            try:
                values = self._request(text)
                break
            except BackendError as e:
                if not e.retryable or attempt == self.retries:
                    raise
                logger.warning(f"Embedding error (attempt {attempt + 1}): {e}")
                time.sleep(self.backoff_base * (2 ** attempt))
        try:
            return EmbeddingVector.of(values, self.dimension)
        except ValueError as e:
            raise BackendError(f"bad embedding: {e}", retryable=False) from e
