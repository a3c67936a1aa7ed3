"""Provider-agnostic chat-completion gateway.

All agent traffic flows through ``complete`` / ``complete_fanout`` against a
pluggable backend:

* ``HttpBackend``     — live chat-completions JSON endpoint (messages array,
  temperature, top_p, n), credential read from an environment variable.
* ``ReplayBackend``   — deterministic offline replay from a cassette file.
* ``CassetteRecorder``— wraps any backend and records successful calls.

Requests are keyed by ``(tag, sha256(messages+params))``; a changed prompt
template produces a loud ReplayMiss instead of a silently wrong answer.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Optional, Protocol

from . import cassette as cassette_io
from .errors import EngineError

MAX_COMPLETIONS = 64
MAX_TEMPERATURE = 2.0


class GatewayError(EngineError):
    """Base class for gateway failures."""


class AuthError(GatewayError):
    """Credential missing or rejected by the endpoint."""


class BackendError(GatewayError):
    """Non-retryable backend failure (malformed response, 4xx, ...)."""


class TransientBackendError(GatewayError):
    """Retryable failure: transport error or HTTP 429/5xx."""


class RateLimitExhausted(GatewayError):
    """Retry budget exhausted on transient failures."""


class ReplayMiss(GatewayError):
    """Replay mode has no cassette entry for the request key."""

    def __init__(self, key: str, tag: str):
        super().__init__(
            f"no cassette entry for key {key!r} (tag {tag!r}); "
            "the prompt or sampling parameters differ from the recorded run"
        )
        self.key = key
        self.tag = tag


class ShortResponse(GatewayError):
    """Backend returned fewer completions than requested."""


class AggregateFailure(GatewayError):
    """One or more fan-out sub-calls failed permanently."""

    def __init__(self, failures: dict[int, Exception]):
        indices = sorted(failures)
        super().__init__(
            f"fan-out sub-calls failed at indices {indices}: {failures[indices[0]]}"
        )
        self.failures = failures


# ---------------------------------------------------------------------------
# Request / response types


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid message role: {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    n_completions: int = 1
    max_tokens: int = 4096
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0 or self.temperature > MAX_TEMPERATURE:
            raise ValueError(f"temperature must be in [0, {MAX_TEMPERATURE}]")
        if not (0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")
        if not (1 <= self.n_completions <= MAX_COMPLETIONS):
            raise ValueError(f"n_completions must be in [1, {MAX_COMPLETIONS}]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    params: SamplingParams
    tag: str  # agent role + turn index; part of the replay key

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request must carry at least one message")
        if not self.tag:
            raise ValueError("request tag must be non-empty")
        for i, msg in enumerate(self.messages):
            if msg.role == "system" and i != 0:
                raise ValueError("system message allowed only at position 0")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class LlmResponse:
    completions: tuple[str, ...]
    attempts: int = 1
    usage: Usage = field(default_factory=Usage)


def request_digest(request: LlmRequest) -> str:
    """SHA-256 over canonicalized messages + sampling params (model excluded)."""
    canonical = json.dumps(
        {
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "params": {
                "temperature": request.params.temperature,
                "top_p": request.params.top_p,
                "n_completions": request.params.n_completions,
                "max_tokens": request.params.max_tokens,
                "seed": request.params.seed,
            },
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def request_key(request: LlmRequest) -> str:
    return f"{request.tag}:{request_digest(request)}"


# ---------------------------------------------------------------------------
# Backends


class Backend(Protocol):
    def complete(self, request: LlmRequest) -> LlmResponse: ...


class HttpBackend:
    """Live chat-completions endpoint speaking the common JSON HTTP shape.

    The credential comes from the environment variable named by ``auth_env``
    and is never written to disk. An internal semaphore caps concurrent
    in-flight requests (default 8).
    """

    def __init__(
        self,
        base_url: str,
        auth_env: str,
        timeout: float = 120.0,
        max_concurrent: int = 8,
    ):
        if auth_env not in os.environ or not os.environ[auth_env]:
            raise AuthError(f"credential environment variable {auth_env!r} is not set")
        self.base_url = base_url.rstrip("/")
        self.auth_env = auth_env
        self.timeout = timeout
        self._limiter = threading.Semaphore(max_concurrent)

    def complete(self, request: LlmRequest) -> LlmResponse:
        import requests

        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "n": request.params.n_completions,
            "max_tokens": request.params.max_tokens,
        }
        if request.params.seed is not None:
            payload["seed"] = request.params.seed
        headers = {
            "Authorization": f"Bearer {os.environ[self.auth_env]}",
            "Content-Type": "application/json",
        }
        with self._limiter:
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credential (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            choices = sorted(body["choices"], key=lambda c: c.get("index", 0))
            completions = tuple(str(c["message"]["content"]) for c in choices)
            usage_obj = body.get("usage", {})
            usage = Usage(
                int(usage_obj.get("prompt_tokens", 0)),
                int(usage_obj.get("completion_tokens", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        return LlmResponse(completions=completions, usage=usage)


class ReplayBackend:
    """Serves completions from a cassette; read-only after load."""

    def __init__(self, path):
        self._entries = cassette_io.load_cassette(path)
        self.path = path

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = request_key(request)
        entry = self._entries.get(key)
        if entry is None:
            raise ReplayMiss(key, request.tag)
        return LlmResponse(completions=entry.completions)


class CassetteRecorder:
    """Wraps a backend and appends every successful call to a cassette."""

    def __init__(self, inner: Backend, path):
        self.inner = inner
        self.path = path
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        response = self.inner.complete(request)
        digest = request_digest(request)
        entry = cassette_io.CassetteEntry(
            key=f"{request.tag}:{digest}",
            tag=request.tag,
            request_digest=digest,
            completions=response.completions,
            recorded_at=datetime.now(timezone.utc).isoformat(),
        )
        with self._lock:
            cassette_io.append_entry(self.path, entry)
        return response


class NamespacedBackend:
    """Prefixes every request tag; keeps per-run cassette namespaces apart."""

    def __init__(self, inner: Backend, prefix: str):
        self.inner = inner
        self.prefix = prefix

    def complete(self, request: LlmRequest) -> LlmResponse:
        return self.inner.complete(replace(request, tag=self.prefix + request.tag))


# ---------------------------------------------------------------------------
# Gateway operations


@dataclass(frozen=True)
class RetryPolicy:
    # Exponential backoff on transport errors and HTTP 429/5xx only.
    base_delay: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5


DEFAULT_RETRY = RetryPolicy()


def complete(
    request: LlmRequest,
    backend: Backend,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> LlmResponse:
    """Issue one completion request; retry transients; enforce cardinality.

    Returns exactly ``request.params.n_completions`` completions or raises
    ShortResponse. ``attempts`` counts every try including the successful one.
    """
    attempts = 0
    delay = retry.base_delay
    while True:
        attempts += 1
        try:
            response = backend.complete(request)
        except TransientBackendError as exc:
            if attempts >= retry.max_attempts:
                raise RateLimitExhausted(
                    f"gave up after {attempts} attempts: {exc}"
                ) from exc
            time.sleep(delay)
            delay *= retry.factor
            continue
        wanted = request.params.n_completions
        if len(response.completions) < wanted:
            raise ShortResponse(
                f"backend returned {len(response.completions)} completions, "
                f"requested {wanted} (tag {request.tag!r})"
            )
        return LlmResponse(
            completions=response.completions[:wanted],
            attempts=attempts,
            usage=response.usage,
        )


def complete_fanout(
    request: LlmRequest,
    backend: Backend,
    retry: RetryPolicy = DEFAULT_RETRY,
    max_workers: int = 8,
) -> LlmResponse:
    """Multi-completion via n independent single-completion calls.

    Supports backends without native multi-completion. Sub-call i is tagged
    ``<tag>.<i>`` so each gets its own replay key; completion order is issue
    order; each sub-call retries independently.
    """
    n = request.params.n_completions
    if n == 1:
        return complete(request, backend, retry)
    sub_params = replace(request.params, n_completions=1)

    def one(i: int) -> LlmResponse:
        sub = replace(request, params=sub_params, tag=f"{request.tag}.{i}")
        return complete(sub, backend, retry)

    results: list[Optional[LlmResponse]] = [None] * n
    failures: dict[int, Exception] = {}
    with ThreadPoolExecutor(max_workers=min(max_workers, n)) as pool:
        futures = {pool.submit(one, i): i for i in range(n)}
        for fut, i in futures.items():
            try:
                results[i] = fut.result()
            except GatewayError as exc:
                failures[i] = exc
    if failures:
        raise AggregateFailure(failures)
    completions = tuple(r.completions[0] for r in results)  # type: ignore[union-attr]
    attempts = sum(r.attempts for r in results)  # type: ignore[union-attr]
    usage = Usage()
    for r in results:
        usage = usage + r.usage  # type: ignore[union-attr]
    return LlmResponse(completions=completions, attempts=attempts, usage=usage)
