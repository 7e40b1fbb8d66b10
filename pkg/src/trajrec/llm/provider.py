"""Chat-completion transport: an OpenAI-compatible HTTP client and a canned stub."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from ..errors import EmptyResponse, ProviderError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProviderConfig:
    name: str = "default"
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4.1-mini"
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout_s: float = 120.0
    api_key_env: str = "OPENAI_API_KEY"
    max_parallel_requests: int = 4
    max_attempts: int = 3
    backoff_base_s: float = 1.0
    audit_log: str | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_parallel_requests < 1:
            raise ValueError("max_parallel_requests must be >= 1")


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0


class Provider(Protocol):
    def complete(self, prompt: str) -> Completion: ...


_audit_lock = threading.Lock()


def _audit(path: str | None, entry: dict) -> None:
    if not path:
        return
    with _audit_lock:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class ChatProvider:
    """Single-turn chat completions with bounded retries and an audit trail."""

    def __init__(
        self,
        config: ProviderConfig,
        *,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        key = os.environ.get(config.api_key_env)
        if not key:
            raise ProviderError(f"environment variable {config.api_key_env} is not set")
        self.config = config
        self._key = key
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(config.max_parallel_requests)

    def complete(self, prompt: str) -> Completion:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._key}"}
        last = ""
        for attempt in range(1, cfg.max_attempts + 1):
            if attempt > 1:
                self._sleep(cfg.backoff_base_s * 2 ** (attempt - 2))
            t0 = self._clock()
            entry = {"provider": cfg.name, "model": cfg.model, "attempt": attempt, "request": body}
            try:
                with self._slots:
                    resp = self._client.post(cfg.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                _audit(cfg.audit_log, {**entry, "error": last})
                continue
            latency = self._clock() - t0
            _audit(cfg.audit_log, {**entry, "status": resp.status_code, "response": resp.text, "latency_s": latency})
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"unexpected response shape: {exc}") from exc
            if not text.strip():
                raise EmptyResponse("provider returned an empty completion")
            usage = doc.get("usage") or {}
            return Completion(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)), latency)
        raise ProviderError(f"gave up after {cfg.max_attempts} attempts: {last}")


def chat(config: ProviderConfig, prompt: str, **kwargs) -> str:
    return ChatProvider(config, **kwargs).complete(prompt).text


@dataclass
class StubProvider:
    """Replies from ``(pattern, response)`` rules; the first regex that matches wins."""

    rules: list[tuple[str, str]] = field(default_factory=list)
    audit_log: str | None = None

    def __post_init__(self) -> None:
        self._compiled = [(re.compile(p, re.S), r) for p, r in self.rules]

    @classmethod
    def from_file(cls, path: str | os.PathLike, audit_log: str | None = None) -> StubProvider:
        """Rules file: JSON list of ``{"match": regex, "response": text}`` objects."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([(r["match"], r["response"]) for r in data], audit_log)

    def complete(self, prompt: str) -> Completion:
        for pattern, response in self._compiled:
            if pattern.search(prompt):
                _audit(self.audit_log, {"provider": "stub", "request": prompt, "response": response})
                if not response.strip():
                    raise EmptyResponse("stub rule returned empty text")
                return Completion(response, len(prompt.split()), len(response.split()), 0.0)
        raise ProviderError("no stub rule matches the prompt")
