"""Provider contracts for text generation and embedding.

Backends implement the raw calls; ``TextGenerator`` and ``Embedder`` wrap a
backend with response caching, bounded retries, and an in-flight cap so the
rest of the pipeline never talks to a backend directly.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

from .cache import ResponseCache, request_digest

log = logging.getLogger(__name__)


class ProviderError(Exception):
    """Unrecoverable provider failure."""


class TransientProviderError(ProviderError):
    """Retryable failure: transport error or rate-limit signal."""


@dataclass(frozen=True)
class TextGenParams:
    temperature: float = 0.0
    max_output_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
                "seed": self.seed}


class EmbedLevel(str, Enum):
    """Which rendering of a QA triplet gets embedded."""

    Q = "Q"
    A = "A"
    E = "E"
    QA = "QA"

    def render(self, question: str, answer: str, evidence: str) -> str:
        if self is EmbedLevel.Q:
            return question
        if self is EmbedLevel.A:
            return answer
        if self is EmbedLevel.E:
            return evidence
        return f"{question} {answer}"


class GenerationBackend(Protocol):
    backend_id: str

    def complete(self, prompt: str, params: TextGenParams) -> str: ...


class EmbeddingBackend(Protocol):
    backend_id: str
    dimension: int

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class _RetryingCaller:
    """Shared retry/backoff/in-flight machinery for both provider wrappers."""

    def __init__(self, max_attempts: int = 3, base_delay: float = 0.5,
                 max_in_flight: int = 4, sleep=time.sleep):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self._max_attempts = max_attempts
        self._base_delay = base_delay
        self._gate = threading.Semaphore(max_in_flight)
        self._sleep = sleep

    def call(self, fn, what: str):
        last: Exception | None = None
        for attempt in range(self._max_attempts):
            if attempt:
                # Exponential backoff with jitter; timing never affects outputs.
                delay = self._base_delay * (2 ** (attempt - 1)) * (1 + random.random() * 0.25)
                self._sleep(delay)
            try:
                with self._gate:
                    return fn()
            except TransientProviderError as exc:
                last = exc
                log.warning("%s attempt %d/%d failed: %s", what, attempt + 1, self._max_attempts, exc)
        raise ProviderError(f"{what} failed after {self._max_attempts} attempts: {last}") from last


class TextGenerator:
    """Cached, retrying text-generation front end."""

    def __init__(self, backend: GenerationBackend, cache: ResponseCache | None = None,
                 max_attempts: int = 3, base_delay: float = 0.5, max_in_flight: int = 4,
                 max_prompt_chars: int | None = None, sleep=time.sleep):
        self._backend = backend
        self._cache = cache
        self._caller = _RetryingCaller(max_attempts, base_delay, max_in_flight, sleep)
        self._max_prompt_chars = max_prompt_chars

    @property
    def backend_id(self) -> str:
        return self._backend.backend_id

    def generate(self, prompt: str, params: TextGenParams | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if self._max_prompt_chars is not None and len(prompt) > self._max_prompt_chars:
            raise ProviderError(
                f"prompt of {len(prompt)} chars exceeds limit {self._max_prompt_chars}")
        params = params or TextGenParams()
        key = request_digest({"kind": "generate", "backend": self._backend.backend_id,
                              "prompt": prompt, **params.to_dict()})
        if self._cache is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit["text"]
        text = self._caller.call(lambda: self._backend.complete(prompt, params), "generation")
        if self._cache is not None:
            self._cache.put(key, {"text": text})
        return text


class Embedder:
    """Cached, retrying embedding front end. Identical texts always map to
    identical vectors within a run (and across runs when the cache persists)."""

    def __init__(self, backend: EmbeddingBackend, cache: ResponseCache | None = None,
                 max_attempts: int = 3, base_delay: float = 0.5, max_in_flight: int = 4,
                 batch_size: int = 64, sleep=time.sleep):
        self._backend = backend
        self._cache = cache
        self._caller = _RetryingCaller(max_attempts, base_delay, max_in_flight, sleep)
        self._batch_size = batch_size

    @property
    def backend_id(self) -> str:
        return self._backend.backend_id

    @property
    def dimension(self) -> int:
        return self._backend.dimension

    def _key(self, text: str) -> str:
        return request_digest({"kind": "embed", "backend": self._backend.backend_id,
                               "text": text})

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        """Embed texts in order; output row i corresponds to texts[i]."""
        if len(texts) == 0:
            raise ValueError("texts must be non-empty")
        for i, text in enumerate(texts):
            if not text:
                raise ValueError(f"texts[{i}] is empty")

        dim = self._backend.dimension
        out = np.empty((len(texts), dim), dtype=np.float64)
        misses: dict[str, list[int]] = {}
        for i, text in enumerate(texts):
            hit = self._cache.get(self._key(text)) if self._cache is not None else None
            if hit is not None:
                out[i] = np.asarray(hit["vector"], dtype=np.float64)
            else:
                misses.setdefault(text, []).append(i)

        pending = list(misses.keys())
        for start in range(0, len(pending), self._batch_size):
            chunk = pending[start:start + self._batch_size]
            vectors = self._caller.call(lambda c=chunk: self._backend.encode(c), "embedding")
            vectors = np.asarray(vectors, dtype=np.float64)
            if vectors.shape != (len(chunk), dim):
                raise ProviderError(
                    f"backend returned shape {vectors.shape}, expected {(len(chunk), dim)}")
            if not np.all(np.isfinite(vectors)):
                raise ProviderError("backend returned non-finite embedding values")
            for text, vector in zip(chunk, vectors):
                if self._cache is not None:
                    self._cache.put(self._key(text), {"vector": vector.tolist(), "dimension": dim})
                for i in misses[text]:
                    out[i] = vector
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two 1-D vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError("cosine expects 1-D vectors")
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine is undefined for zero-norm vectors")
    return float(np.dot(u, v) / (nu * nv))
