"""Text-completion backends.

Every model call in the pipeline goes through :meth:`Backend.complete`, which
handles caching, call accounting and the global concurrency limit. Concrete
backends only implement ``_generate``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import httpx

from .cache import DiskCache
from .errors import (
    BackendError,
    ConfigError,
    ProtocolError,
    RemoteError,
    TransportError,
    UnmatchedStimulusError,
)

log = logging.getLogger(__name__)

PURPOSE_TAGS = ("init", "iter", "refine", "conflict", "synth", "repair_classify", "repair_generate")
API_KEY_ENV = "CARE_RAG_API_KEY"


@dataclass(frozen=True)
class SamplingParams:
    max_tokens: int = 1024
    temperature: float = 0.7
    top_p: float = 1.0

    def __post_init__(self):
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be a positive integer, got {self.max_tokens!r}")
        if not 0 <= self.temperature <= 2:
            raise ConfigError(f"temperature must lie in [0, 2], got {self.temperature!r}")
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: SamplingParams | None = None) -> SamplingParams:
        unknown = set(data) - {"max_tokens", "temperature", "top_p"}
        if unknown:
            raise ConfigError(f"unknown sampling fields: {sorted(unknown)}")
        return replace(base or cls(), **data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    params: SamplingParams = field(default_factory=SamplingParams)
    purpose_tag: str = "init"

    def __post_init__(self):
        if not self.prompt:
            raise ConfigError("prompt must be non-empty")
        if self.purpose_tag not in PURPOSE_TAGS:
            raise ConfigError(f"unknown purpose_tag {self.purpose_tag!r}")

    def identity(self) -> dict[str, Any]:
        """Cache-relevant fields; the purpose tag is deliberately left out."""
        return {
            "model_id": self.model_id,
            "prompt": self.prompt,
            "max_tokens": self.params.max_tokens,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
        }


@dataclass
class CompletionResult:
    text: str
    usage: dict[str, int] | None = None
    latency_ms: int = 0
    from_cache: bool = False


def cache_key(request: CompletionRequest) -> str:
    canonical = json.dumps(request.identity(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CallLogEntry:
    digest: str
    purpose_tag: str
    from_cache: bool
    timestamp: float
    backend: str
    model_id: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class BackendCallLog:
    """Append-only, thread-safe record of completion calls."""

    def __init__(self):
        self._entries: list[CallLogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: CallLogEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[CallLogEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def __iter__(self):
        return iter(self.entries)

    def count(self, purpose_tag: str | None = None, *, from_cache: bool | None = None) -> int:
        return sum(
            1
            for e in self.entries
            if (purpose_tag is None or e.purpose_tag == purpose_tag)
            and (from_cache is None or e.from_cache == from_cache)
        )

    def purposes(self) -> list[str]:
        return [e.purpose_tag for e in self.entries]

    def to_list(self) -> list[dict[str, Any]]:
        return [e.to_dict() for e in self.entries]


class Backend:
    """Shared machinery: cache lookup, call logging, concurrency gate."""

    kind = "abstract"

    def __init__(self, model_id: str, *, cache: DiskCache | None = None, concurrency: int = 8):
        if concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        self.model_id = model_id
        self.cache = cache
        self.call_log = BackendCallLog()
        self._gate = threading.BoundedSemaphore(concurrency)

    def request(self, prompt: str, purpose_tag: str, params: SamplingParams | None = None) -> CompletionRequest:
        return CompletionRequest(self.model_id, prompt, params or SamplingParams(), purpose_tag)

    def complete(
        self,
        request: CompletionRequest,
        *,
        call_log: BackendCallLog | None = None,
        use_cache: bool = True,
    ) -> CompletionResult:
        digest = cache_key(request)
        started = time.perf_counter()
        result = None
        if self.cache is not None and use_cache:
            hit = self.cache.get(digest)
            if hit is not None:
                result = CompletionResult(
                    text=hit["text"],
                    usage=hit.get("usage"),
                    latency_ms=int((time.perf_counter() - started) * 1000),
                    from_cache=True,
                )
        if result is None:
            with self._gate:
                text, usage = self._generate(request)
            result = CompletionResult(text=text, usage=usage, latency_ms=int((time.perf_counter() - started) * 1000))
            if self.cache is not None:
                self.cache.put(digest, request.identity(), text, usage)
        entry = CallLogEntry(
            digest=digest,
            purpose_tag=request.purpose_tag,
            from_cache=result.from_cache,
            timestamp=time.time(),
            backend=self.kind,
            model_id=request.model_id,
        )
        self.call_log.append(entry)
        if call_log is not None:
            call_log.append(entry)
        return result

    def _generate(self, request: CompletionRequest) -> tuple[str, dict[str, int] | None]:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptRule:
    """``contains`` is a tuple of literal substrings that must all appear; ``exact`` matches the whole prompt."""

    response: str
    contains: tuple[str, ...] = ()
    exact: str | None = None

    def matches(self, prompt: str) -> bool:
        if self.exact is not None:
            return prompt == self.exact
        return all(part in prompt for part in self.contains)

    @classmethod
    def from_obj(cls, obj: Any) -> ScriptRule:
        if isinstance(obj, ScriptRule):
            return obj
        if isinstance(obj, (tuple, list)) and len(obj) == 2:
            matcher, response = obj
            if isinstance(matcher, dict):
                return cls.from_obj({**matcher, "response": response})
            return cls(response=str(response), contains=(str(matcher),))
        if isinstance(obj, dict):
            if "response" not in obj:
                raise ConfigError(f"scripted rule lacks 'response': {obj!r}")
            if "exact" in obj:
                return cls(response=str(obj["response"]), exact=str(obj["exact"]))
            if "contains" in obj:
                parts = obj["contains"]
                parts = (parts,) if isinstance(parts, str) else tuple(str(p) for p in parts)
                return cls(response=str(obj["response"]), contains=parts)
            raise ConfigError(f"scripted rule needs 'contains' or 'exact': {obj!r}")
        raise ConfigError(f"cannot interpret scripted rule {obj!r}")


class ScriptedBackend(Backend):
    """Deterministic backend that answers from an ordered rule list; the first match wins."""

    kind = "scripted"

    def __init__(self, rules: Sequence[Any], *, model_id: str = "scripted", **kwargs):
        parsed = tuple(ScriptRule.from_obj(r) for r in rules)
        if not parsed:
            raise ConfigError("scripted backend needs at least one rule")
        super().__init__(model_id, **kwargs)
        self._rules = parsed

    @property
    def rules(self) -> tuple[ScriptRule, ...]:
        return self._rules

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kwargs) -> ScriptedBackend:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            kwargs.setdefault("model_id", data.get("model_id", "scripted"))
            data = data.get("rules", [])
        return cls(data, **kwargs)

    def _generate(self, request: CompletionRequest):
        for rule in self._rules:
            if rule.matches(request.prompt):
                return rule.response, None
        raise UnmatchedStimulusError(request.prompt)


def configure_scripted(rules: Iterable[Any], **kwargs) -> ScriptedBackend:
    """Build a scripted backend from ``(matcher, response)`` pairs or rule dicts."""
    return ScriptedBackend(list(rules), **kwargs)


class HTTPBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    kind = "http"
    RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        model_id: str,
        *,
        api_key: str | None = None,
        api_key_env: str = API_KEY_ENV,
        max_retries: int = 2,
        timeout: float = 60.0,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        **kwargs,
    ):
        if max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        super().__init__(model_id, **kwargs)
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff = backoff
        key = os.environ.get(api_key_env) or api_key
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.attempts = 0

    def close(self) -> None:
        self._client.close()

    def _generate(self, request: CompletionRequest):
        body = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.params.max_tokens,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
        }
        url = f"{self.base_url}/chat/completions"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                resp = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                log.warning("attempt %d/%d to %s failed: %s", attempt + 1, self.max_retries + 1, url, exc)
                last = exc
                continue
            if resp.status_code in self.RETRY_STATUSES and attempt < self.max_retries:
                last = RemoteError(resp.status_code, resp.text[:200])
                continue
            if not 200 <= resp.status_code < 300:
                raise RemoteError(resp.status_code, resp.text[:200])
            return _parse_chat_response(resp)
        if isinstance(last, RemoteError):
            raise last
        raise TransportError(f"{url} unreachable after {self.max_retries + 1} attempts: {last}")


def _parse_chat_response(resp: httpx.Response):
    try:
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed chat completion response: {exc!r}") from exc
    if not isinstance(text, str):
        raise ProtocolError("chat completion content is not a string")
    usage = None
    raw_usage = payload.get("usage")
    if isinstance(raw_usage, dict):
        usage = {
            "prompt": int(raw_usage.get("prompt_tokens", 0)),
            "completion": int(raw_usage.get("completion_tokens", 0)),
        }
    return text, usage


def backend_from_settings(settings, *, cache: DiskCache | None = None, concurrency: int = 8,
                          base_dir: Path | None = None) -> Backend:
    """Instantiate a backend from a :class:`care_rag.config.BackendSettings`."""
    if settings.kind == "scripted":
        path = Path(settings.transcript)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ScriptedBackend.from_file(path, model_id=settings.model_id or "scripted",
                                         cache=cache, concurrency=concurrency)
    if settings.kind == "http":
        return HTTPBackend(
            settings.base_url,
            settings.model_id,
            api_key=settings.api_key,
            api_key_env=settings.api_key_env,
            max_retries=settings.max_retries,
            timeout=settings.timeout,
            cache=cache,
            concurrency=concurrency,
        )
    raise BackendError(f"unknown backend kind {settings.kind!r}")
