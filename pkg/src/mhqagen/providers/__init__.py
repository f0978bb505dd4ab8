"""Pluggable text-generation and embedding providers with caching and mocks."""

from .base import (
    EmbedLevel,
    Embedder,
    EmbeddingBackend,
    GenerationBackend,
    ProviderError,
    TextGenerator,
    TextGenParams,
    TransientProviderError,
    cosine,
)
from .cache import ResponseCache, request_digest
from .mocks import MockEmbeddingBackend, MockGenerationBackend
from .remote import RemoteEmbeddingBackend, RemoteGenerationBackend

__all__ = [
    "EmbedLevel",
    "Embedder",
    "EmbeddingBackend",
    "GenerationBackend",
    "MockEmbeddingBackend",
    "MockGenerationBackend",
    "ProviderError",
    "RemoteEmbeddingBackend",
    "RemoteGenerationBackend",
    "ResponseCache",
    "TextGenerator",
    "TextGenParams",
    "TransientProviderError",
    "cosine",
    "request_digest",
]
