"""HTTP backends for hosted generation/embedding services.

The wire contract is deliberately minimal:

    POST {base_url}/v1/generate  {"prompt", "temperature", "max_output_tokens", "seed"}
        -> {"text": "..."}
    POST {base_url}/v1/embed     {"texts": [...]}
        -> {"vectors": [[...], ...], "dimension": d}

Credentials are never read from config files: the config names an environment
variable and the secret is taken from the process environment at call time.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np
import requests

from .base import ProviderError, TextGenParams, TransientProviderError

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


def _api_key(env_var: str) -> str:
    key = os.environ.get(env_var, "")
    if not key:
        raise ProviderError(f"credential environment variable {env_var} is not set")
    return key


class _RemoteBase:
    def __init__(self, base_url: str, api_key_env: str, timeout: float = 60.0, session=None):
        if not base_url:
            raise ValueError("base_url is required for remote backends")
        self._base_url = base_url.rstrip("/")
        self._api_key_env = api_key_env
        self._timeout = timeout
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {_api_key(self._api_key_env)}"}
        try:
            response = self._session.post(f"{self._base_url}{path}", json=payload,
                                          headers=headers, timeout=self._timeout)
        except requests.RequestException as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        if response.status_code in _RETRYABLE_STATUS:
            raise TransientProviderError(f"HTTP {response.status_code} from {path}")
        if response.status_code != 200:
            raise ProviderError(f"HTTP {response.status_code} from {path}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"non-JSON response from {path}") from exc


class RemoteGenerationBackend(_RemoteBase):
    def __init__(self, base_url: str, api_key_env: str, model: str = "default",
                 timeout: float = 60.0, session=None):
        super().__init__(base_url, api_key_env, timeout, session)
        self.backend_id = f"remote-gen:{model}@{self._base_url}"
        self._model = model

    def complete(self, prompt: str, params: TextGenParams) -> str:
        body = self._post("/v1/generate", {
            "model": self._model,
            "prompt": prompt,
            "temperature": params.temperature,
            "max_output_tokens": params.max_output_tokens,
            "seed": params.seed,
        })
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderError("generation response missing 'text'")
        return text


class RemoteEmbeddingBackend(_RemoteBase):
    def __init__(self, base_url: str, api_key_env: str, dimension: int,
                 model: str = "default", timeout: float = 60.0, session=None):
        super().__init__(base_url, api_key_env, timeout, session)
        if dimension < 1:
            raise ValueError("dimension must be declared for remote embedding backends")
        self.backend_id = f"remote-embed:{model}@{self._base_url}"
        self.dimension = dimension
        self._model = model

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        body = self._post("/v1/embed", {"model": self._model, "texts": list(texts)})
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError("embedding response missing aligned 'vectors'")
        declared = body.get("dimension", self.dimension)
        if declared != self.dimension:
            raise ProviderError(
                f"backend declared dimension {declared}, configured {self.dimension}")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.shape != (len(texts), self.dimension):
            raise ProviderError(f"embedding response has shape {arr.shape}")
        return arr
