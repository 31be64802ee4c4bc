"""Client for chat-completion compatible HTTP endpoints."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable

import httpx

from .engine import AgentRequest, BackendReply
from .exceptions import BackendError, CredentialError, DomainError, ProtocolError

__all__ = ["LLMConfig", "Usage", "ChatClient", "LLMBackend", "llm_chat"]

log = logging.getLogger(__name__)

_RETRY_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str
    model: str
    temperature: float = 0.0
    timeout: float = 60.0
    api_key_env: str = "OPENAI_API_KEY"
    max_concurrency: int = 4
    max_attempts: int = 3
    backoff_base: float = 1.0
    min_interval: float = 0.0  # seconds between request starts, shared across threads
    max_tokens: int | None = None

    @property
    def url(self) -> str:
        url = self.endpoint.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"

    @classmethod
    def from_dict(cls, obj: dict) -> "LLMConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class ChatClient:
    """Thread-safe single-turn chat client.

    Transport errors, HTTP 429 and 5xx are retried with exponential backoff
    (``backoff_base * 2**attempt`` seconds) up to ``max_attempts`` attempts.
    """

    def __init__(self, config: LLMConfig, transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self._http = httpx.Client(timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._pace_lock = threading.Lock()
        self._next_start = 0.0
        self._metrics_lock = threading.Lock()
        self.metrics = {"calls": 0, "retries": 0, "prompt_tokens": 0, "completion_tokens": 0}

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise CredentialError(f"environment variable {self.config.api_key_env} is not set")
        return key

    def _pace(self):
        if self.config.min_interval <= 0:
            return
        with self._pace_lock:
            now = time.monotonic()
            wait = self._next_start - now
            self._next_start = max(now, self._next_start) + self.config.min_interval
        if wait > 0:
            self._sleep(wait)

    def _count(self, **deltas):
        with self._metrics_lock:
            for name, value in deltas.items():
                self.metrics[name] += value or 0

    def chat(self, system: str, user: str) -> tuple[str, Usage]:
        if not user or not user.strip():
            raise DomainError("user content must be nonempty")
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
        }
        if self.config.max_tokens is not None:
            payload["max_tokens"] = self.config.max_tokens

        last_error = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                self._count(retries=1)
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self._pace()
            with self._slots:
                try:
                    response = self._http.post(self.config.url, json=payload, headers=headers)
                except httpx.TransportError as exc:
                    log.warning("transport error on attempt %d: %s", attempt + 1, exc)
                    last_error = exc
                    continue
            if response.status_code in (401, 403):
                raise CredentialError(f"endpoint rejected credentials (HTTP {response.status_code})")
            if response.status_code in _RETRY_STATUS:
                log.warning("HTTP %d on attempt %d", response.status_code, attempt + 1)
                last_error = BackendError(f"HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
            text, usage = self._parse(response)
            self._count(calls=1, prompt_tokens=usage.prompt_tokens, completion_tokens=usage.completion_tokens)
            return text, usage
        raise BackendError(f"giving up after {self.config.max_attempts} attempts: {last_error}")

    @staticmethod
    def _parse(response: httpx.Response) -> tuple[str, Usage]:
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat completion response: {exc!r}") from None
        if not isinstance(text, str):
            raise ProtocolError("message content is not a string")
        usage = body.get("usage") or {}
        return text, Usage(usage.get("prompt_tokens"), usage.get("completion_tokens"))


def llm_chat(config: LLMConfig, system: str, user: str, client: ChatClient | None = None) -> tuple[str, Usage]:
    if client is not None:
        return client.chat(system, user)
    with ChatClient(config) as owned:
        return owned.chat(system, user)


class LLMBackend:
    """Agent backend that sends each activation as one chat completion."""

    def __init__(self, client: ChatClient):
        self.client = client

    def complete(self, request: AgentRequest) -> BackendReply:
        text, usage = self.client.chat(request.system, request.user)
        return BackendReply(text, usage.prompt_tokens, usage.completion_tokens)
