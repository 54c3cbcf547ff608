"""Stage-1 embedding providers and vector similarity.

The reference provider is a signed feature-hashing vectorizer: word unigrams
and bigrams of the lowercased prompt are hashed into ``dim`` buckets with a
hash-derived sign, then the vector is L2-normalized and stored as float32.
Tokenization is ``\\w+`` over the lowercased text with no length cap.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyPrompt, ProviderUnavailable
from .http_client import JsonEndpoint
from .prompts import Prompt, tokenize

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    key: str
    prompt_hash: int

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return (
            self.key == other.key
            and self.prompt_hash == other.prompt_hash
            and np.array_equal(self.values, other.values)
        )


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed_batch(self, prompts: Sequence[Prompt]) -> list[EmbeddingVector]: ...


def _feature_hash(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")


def hash_features(text: str) -> list[str]:
    tokens = tokenize(text)
    return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]


def _unit_float32(raw: np.ndarray, what: str) -> np.ndarray:
    norm = math.sqrt(float(np.dot(raw, raw)))
    if norm == 0.0:
        raise EmptyPrompt(f"zero vector for {what!r}")
    return (raw / norm).astype(np.float32)


class HashingEmbedder:
    """Deterministic, stateless reference provider."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"hashing-uni-bi-{dim}"

    def embed_text(self, text: str) -> np.ndarray:
        raw = np.zeros(self.dim, dtype=np.float64)
        for feature in hash_features(text):
            h = _feature_hash(feature)
            raw[h % self.dim] += -1.0 if (h >> 63) & 1 else 1.0
        return _unit_float32(raw, text)

    def embed_batch(self, prompts: Sequence[Prompt]) -> list[EmbeddingVector]:
        out = []
        for prompt in prompts:
            if not prompt.text.strip():
                raise EmptyPrompt(f"empty prompt for {prompt.source_id!r}")
            out.append(
                EmbeddingVector(self.embed_text(prompt.text), prompt.source_id, prompt.prompt_hash)
            )
        return out


class HttpEmbedder:
    """Batched text-in/vectors-out client.

    Request body: ``{"model": ..., "inputs": [text, ...]}``; response body:
    ``{"embeddings": [[float, ...], ...]}``.  Returned vectors are
    re-normalized locally.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int = DEFAULT_DIM,
        model: str = "remote",
        timeout: float = 30.0,
        retries: int = 2,
        max_in_flight: int = 4,
        api_key_env: str = "OPPMATCH_EMBEDDING_API_KEY",
    ):
        self.dim = dim
        self.name = f"http:{model}"
        self.model = model
        self._endpoint = JsonEndpoint(
            endpoint,
            timeout=timeout,
            retries=retries,
            max_in_flight=max_in_flight,
            api_key=os.environ.get(api_key_env),
        )

    def embed_batch(self, prompts: Sequence[Prompt]) -> list[EmbeddingVector]:
        for prompt in prompts:
            if not prompt.text.strip():
                raise EmptyPrompt(f"empty prompt for {prompt.source_id!r}")
        if not prompts:
            return []
        body = self._endpoint.post({"model": self.model, "inputs": [p.text for p in prompts]})
        rows = body.get("embeddings")
        if not isinstance(rows, list) or len(rows) != len(prompts):
            raise ProviderUnavailable("embedding response has wrong shape")
        out = []
        for prompt, row in zip(prompts, rows):
            raw = np.asarray(row, dtype=np.float64)
            if raw.shape != (self.dim,):
                raise DimensionMismatch(f"provider returned dim {raw.shape}, expected {self.dim}")
            out.append(
                EmbeddingVector(_unit_float32(raw, prompt.text), prompt.source_id, prompt.prompt_hash)
            )
        return out


def cosine(u: EmbeddingVector | np.ndarray, v: EmbeddingVector | np.ndarray) -> float:
    a = u.values if isinstance(u, EmbeddingVector) else np.asarray(u)
    b = v.values if isinstance(v, EmbeddingVector) else np.asarray(v)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(np.dot(a.astype(np.float64), b.astype(np.float64)))
