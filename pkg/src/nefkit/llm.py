"""Uniform chat and embedding access over an OpenAI-compatible wire protocol.

Two providers: an HTTP client for any server speaking the
``/chat/completions`` + ``/embeddings`` JSON shapes, and a fully
deterministic offline mock. Secrets never live in config; providers
read the key from the environment variable the config names.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence, runtime_checkable

import httpx

from nefkit.errors import (
    AuthConfigError,
    AuthRejectedError,
    GatewayError,
    MalformedProviderReply,
    RetriesExhaustedError,
)

RESPONSE_FREE_TEXT = "free-text"
RESPONSE_STRICT_STRUCTURED = "strict-structured"

_JSON_MODE_NUDGE = "Respond with valid JSON only, no surrounding prose."


@dataclass(frozen=True)
class ChatRequest:
    user_prompt: str
    system_prompt: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 2048
    response_format: str = RESPONSE_FREE_TEXT

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.response_format not in (RESPONSE_FREE_TEXT, RESPONSE_STRICT_STRUCTURED):
            raise ValueError(f"unknown response_format {self.response_format!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_id: str

    @property
    def token_usage(self) -> tuple[int, int]:
        return (self.prompt_tokens, self.completion_tokens)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    provider_id: str

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must have at least one component")
        if all(v == 0.0 for v in self.values):
            raise ValueError("embedding must not be the zero vector")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    api_key_env_name: str
    model_name: str
    request_timeout: float = 30.0
    max_retries: int = 3
    retry_backoff_base: float = 0.5
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be > 0")
        if not 0 <= self.max_retries <= 8:
            raise ValueError("max_retries must be within [0, 8]")
        if self.retry_backoff_base < 0:
            raise ValueError("retry_backoff_base must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@runtime_checkable
class Provider(Protocol):
    provider_id: str

    def chat(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class OpenAICompatProvider:
    """Client for any server exposing the OpenAI chat/embeddings JSON API.

    Transient failures (HTTP 429/5xx, timeouts) are retried with
    exponential backoff up to ``max_retries``; auth rejections are not.
    """

    RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        config: ProviderConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.provider_id = f"{config.base_url}::{config.model_name}"
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(config.max_concurrency)
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.request_timeout,
            transport=transport,
        )

    def _auth_headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env_name, "")
        if not key:
            raise AuthConfigError(self.config.api_key_env_name)
        return {"Authorization": f"Bearer {key}"}

    def _post(self, path: str, payload: Mapping[str, Any]) -> Mapping[str, Any]:
        headers = self._auth_headers()
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.retry_backoff_base * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._client.post(path, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = exc
                continue
            except httpx.HTTPError as exc:
                raise GatewayError(f"transport failure calling {path}: {exc}") from exc
            if response.status_code in (401, 403):
                raise AuthRejectedError(
                    f"provider rejected credentials on {path} (HTTP {response.status_code})"
                )
            if response.status_code in self.RETRYABLE_STATUS:
                last_error = GatewayError(f"HTTP {response.status_code} from {path}")
                continue
            if response.status_code >= 400:
                raise GatewayError(
                    f"HTTP {response.status_code} from {path}: {response.text[:200]}"
                )
            try:
                body = response.json()
            except ValueError as exc:
                raise MalformedProviderReply(f"non-JSON reply from {path}") from exc
            if not isinstance(body, Mapping):
                raise MalformedProviderReply(f"unexpected reply shape from {path}")
            return body
        raise RetriesExhaustedError(
            f"{path} still failing after {self.config.max_retries} retries: {last_error}"
        )

    def chat(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        user_content = request.user_prompt
        payload: dict[str, Any] = {
            "model": self.config.model_name,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.response_format == RESPONSE_STRICT_STRUCTURED:
            # Ask for JSON mode and nudge in-prompt for servers that ignore it.
            payload["response_format"] = {"type": "json_object"}
            user_content = f"{user_content}\n\n{_JSON_MODE_NUDGE}"
        messages.append({"role": "user", "content": user_content})
        payload["messages"] = messages

        body = self._post("/chat/completions", payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderReply("chat reply missing choices[0].message.content") from exc
        if not isinstance(text, str):
            raise MalformedProviderReply("chat reply content is not text")
        usage = body.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            provider_id=self.provider_id,
        )

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_embed_inputs(texts)
        body = self._post(
            "/embeddings", {"model": self.config.model_name, "input": list(texts)}
        )
        data = body.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise MalformedProviderReply("embeddings reply has wrong item count")
        items = sorted(data, key=lambda d: d.get("index", 0))
        vectors = []
        for item in items:
            values = item.get("embedding")
            if not isinstance(values, list) or not values:
                raise MalformedProviderReply("embeddings reply item missing vector")
            vectors.append(
                EmbeddingVector(values=tuple(float(v) for v in values), provider_id=self.provider_id)
            )
        if len({v.dimension for v in vectors}) > 1:
            raise MalformedProviderReply("embeddings reply mixes dimensions")
        return vectors

    def close(self) -> None:
        self._client.close()


def _check_embed_inputs(texts: Sequence[str]) -> None:
    if len(texts) == 0:
        raise ValueError("embed requires at least one text")
    for i, t in enumerate(texts):
        if not t:
            raise ValueError(f"embed text at index {i} is empty")


MOCK_FALLBACK_TEXT = "I do not have a canned reply for this prompt."


@dataclass(frozen=True)
class MockProvider:
    """Offline provider: canned chat by trigger substring, hashed embeddings.

    Chat returns the completion of the first canned trigger found as a
    substring of the user prompt (mapping insertion order), else a fixed
    fallback. Embeddings hash whitespace tokens into ``dim`` signed
    buckets with a seeded 64-bit hash and L2-normalize, so equal
    (seed, dim, text) always produce bitwise-identical vectors.
    """

    seed: int
    canned: Mapping[str, str] = field(default_factory=dict)
    dim: int = 64
    provider_id: str = "mock"

    def __post_init__(self) -> None:
        if self.dim < 8:
            raise ValueError("mock embedding dimension must be >= 8")

    def chat(self, request: ChatRequest) -> ChatResponse:
        text = MOCK_FALLBACK_TEXT
        for trigger, completion in self.canned.items():
            if trigger in request.user_prompt:
                text = completion
                break
        return ChatResponse(
            text=text,
            prompt_tokens=len(request.user_prompt.split()),
            completion_tokens=len(text.split()),
            provider_id=self.provider_id,
        )

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        _check_embed_inputs(texts)
        return [
            EmbeddingVector(values=hash_embed(t, self.seed, self.dim), provider_id=self.provider_id)
            for t in texts
        ]


def mock_provider(
    seed: int, canned: Optional[Mapping[str, str]] = None, dim: int = 64
) -> MockProvider:
    return MockProvider(seed=seed, canned=dict(canned or {}), dim=dim)


def _token_hash(token: str, seed: int) -> int:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def hash_embed(text: str, seed: int, dim: int) -> tuple[float, ...]:
    """Deterministic signed-bucket hash embedding, L2-normalized.

    Whitespace tokens are hashed with a seeded 64-bit hash; each token
    adds +/-1 to one of ``dim`` buckets. A degenerate all-zero
    accumulation (opposite-sign collisions) falls back to a one-hot
    vector so the result is never zero.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    buckets = [0.0] * dim
    tokens = text.split() or [text]
    for token in tokens:
        h = _token_hash(token, seed)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        buckets[h % dim] += sign
    norm_sq = sum(v * v for v in buckets)
    if norm_sq == 0.0:
        buckets[_token_hash(tokens[0], seed) % dim] = 1.0
        norm_sq = 1.0
    norm = math.sqrt(norm_sq)
    return tuple(v / norm for v in buckets)
