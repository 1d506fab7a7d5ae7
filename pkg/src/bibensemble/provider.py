"""Chat-completion access: OpenAI-compatible HTTP client, replay store, response cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Mapping, Protocol
from urllib.parse import urlparse

import httpx

from .errors import (
    ConfigError,
    MissingApiKey,
    MissingReplayEntry,
    ProviderError,
    RetriesExhausted,
    TransportError,
    UnsupportedParameter,
)

if TYPE_CHECKING:
    from .generation import GenerationConfig

log = logging.getLogger(__name__)

BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 30.0
MAX_RETRIES_LIMIT = 10


@dataclass(frozen=True)
class ProviderProfile:
    name: str
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    supports_top_k: bool = False
    max_retries: int = 3
    timeout: float = 60.0

    def __post_init__(self) -> None:
        parsed = urlparse(self.base_url)
        if not (parsed.scheme and parsed.netloc):
            raise ConfigError(f"profile {self.name!r}: base_url must be absolute, got {self.base_url!r}")
        if not self.model:
            raise ConfigError(f"profile {self.name!r}: model must be non-empty")
        if not 0 <= self.max_retries <= MAX_RETRIES_LIMIT:
            raise ConfigError(f"profile {self.name!r}: max_retries must be in [0, {MAX_RETRIES_LIMIT}]")
        if self.timeout <= 0:
            raise ConfigError(f"profile {self.name!r}: timeout must be positive")

    @classmethod
    def from_dict(cls, name: str, data: Mapping[str, Any]) -> "ProviderProfile":
        if "api_key" in data:
            raise ConfigError(f"profile {name!r}: secrets go in the environment; name the variable via api_key_env")
        known = {"base_url", "model", "api_key_env", "supports_top_k", "max_retries", "timeout"}
        unknown = set(data) - known - {"name"}
        if unknown:
            raise ConfigError(f"profile {name!r}: unknown fields {sorted(unknown)}")
        try:
            return cls(name=name, **{k: v for k, v in data.items() if k in known})
        except TypeError as exc:
            raise ConfigError(f"profile {name!r}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "supports_top_k": self.supports_top_k,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
        }


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    config: GenerationConfig
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    fingerprint: str
    from_cache: bool = False
    attempt_count: int = 1
    usage: dict[str, Any] | None = field(default=None, compare=False)


# -- fingerprinting ----------------------------------------------------------

CANONICAL_FIELDS = ("model", "system_prompt", "user_prompt", "temperature", "top_k", "top_p", "max_tokens")
_REAL_FIELDS = {"temperature", "top_p"}


def canonical_request(fields: Mapping[str, Any]) -> str:
    """Serialize request fields in fixed order with no insignificant whitespace.

    Reals are rendered with exactly six decimals. ``repeat_index`` is appended
    only when non-zero so that repeated draws under one sampling setting get
    distinct cache keys.
    """
    parts = []
    for name in CANONICAL_FIELDS:
        value = fields.get(name)
        if name in _REAL_FIELDS:
            rendered = f"{float(value):.6f}"
        else:
            rendered = json.dumps(value, ensure_ascii=False)
        parts.append(f'"{name}":{rendered}')
    repeat = int(fields.get("repeat_index") or 0)
    if repeat:
        parts.append(f'"repeat_index":{repeat}')
    return "{" + ",".join(parts) + "}"


def request_fields(profile: ProviderProfile, request: CompletionRequest) -> dict[str, Any]:
    cfg = request.config
    return {
        "model": profile.model,
        "system_prompt": request.system_prompt,
        "user_prompt": request.user_prompt,
        "temperature": cfg.temperature,
        "top_k": cfg.top_k,
        "top_p": cfg.top_p,
        "max_tokens": request.max_tokens,
        "repeat_index": cfg.repeat_index,
    }


def fingerprint(profile: ProviderProfile, request: CompletionRequest) -> str:
    canonical = canonical_request(request_fields(profile, request))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# -- storage -----------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class ResponseCache:
    """Content-addressed store: ``<fp>.txt`` holds the text, ``<fp>.json`` the metadata."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _text_path(self, fp: str) -> Path:
        return self.root / f"{fp}.txt"

    def get(self, fp: str) -> str | None:
        try:
            return self._text_path(fp).read_text(encoding="utf-8")
        except FileNotFoundError:
            return None

    def put(self, fp: str, text: str, *, model: str, usage: Mapping[str, Any] | None = None) -> None:
        meta: dict[str, Any] = {"model": model, "created_at": datetime.now(timezone.utc).isoformat()}
        if usage:
            meta["usage"] = dict(usage)
        # Text first: a reader that sees the sidecar can rely on the body existing.
        atomic_write_text(self._text_path(fp), text)
        atomic_write_text(self.root / f"{fp}.json", json.dumps(meta, sort_keys=True))

    def __contains__(self, fp: str) -> bool:
        return self._text_path(fp).exists()


class ReplayStore:
    """Recorded fingerprint -> text pairs, persisted as JSON Lines."""

    def __init__(self, entries: Mapping[str, str] | None = None) -> None:
        self._entries: dict[str, str] = dict(entries or {})
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "ReplayStore":
        entries: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    entries[obj["fingerprint"]] = obj["text"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise ConfigError(f"{path}:{lineno}: bad replay line ({exc})") from exc
        return cls(entries)

    def save(self, path: str | Path) -> None:
        with self._lock:
            items = sorted(self._entries.items())
        body = "".join(json.dumps({"fingerprint": fp, "text": text}, ensure_ascii=False) + "\n" for fp, text in items)
        atomic_write_text(Path(path), body)

    def lookup(self, fp: str) -> str:
        try:
            return self._entries[fp]
        except KeyError:
            raise MissingReplayEntry(fp) from None

    def add(self, fp: str, text: str) -> None:
        with self._lock:
            self._entries[fp] = text

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fp: str) -> bool:
        return fp in self._entries


# -- backends ----------------------------------------------------------------


class Backend(Protocol):
    def send(self, profile: ProviderProfile, request: CompletionRequest, fp: str) -> CompletionResult: ...


def build_payload(profile: ProviderProfile, request: CompletionRequest) -> dict[str, Any]:
    cfg = request.config
    payload: dict[str, Any] = {
        "model": profile.model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "max_tokens": request.max_tokens,
    }
    if cfg.top_k is not None and profile.supports_top_k:
        payload["top_k"] = cfg.top_k
    return payload


def backoff_delay(attempt: int, rng: random.Random) -> float:
    """Full-jitter delay before retry number ``attempt`` (0-based)."""
    ceiling = min(BACKOFF_CAP, BACKOFF_BASE * BACKOFF_FACTOR**attempt)
    return rng.uniform(0.0, ceiling)


class HTTPBackend:
    """POSTs to ``{base_url}/chat/completions`` with retry on 429 and 5xx."""

    def __init__(
        self,
        client: httpx.Client | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        environ: Mapping[str, str] | None = None,
    ) -> None:
        self._owns_client = client is None
        self._client = client if client is not None else httpx.Client()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._environ = environ if environ is not None else os.environ

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def api_key(self, profile: ProviderProfile) -> str:
        key = self._environ.get(profile.api_key_env)
        if not key:
            raise MissingApiKey(f"environment variable {profile.api_key_env} is not set")
        return key

    def send(self, profile: ProviderProfile, request: CompletionRequest, fp: str) -> CompletionResult:
        key = self.api_key(profile)
        client = self._client
        url = profile.base_url.rstrip("/") + "/chat/completions"
        payload = build_payload(profile, request)
        headers = {"Authorization": f"Bearer {key}"}

        last_status: int | None = None
        for attempt in range(profile.max_retries + 1):
            if attempt:
                self._sleep(backoff_delay(attempt - 1, self._rng))
            try:
                resp = client.post(url, json=payload, headers=headers, timeout=profile.timeout)
            except httpx.HTTPError as exc:
                raise TransportError(f"{profile.name}: {exc}") from exc
            if resp.status_code == 429 or resp.status_code >= 500:
                last_status = resp.status_code
                log.warning("%s: HTTP %s on attempt %d", profile.name, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text)
            text, usage = _extract_content(resp)
            return CompletionResult(text=text, fingerprint=fp, attempt_count=attempt + 1, usage=usage)
        raise RetriesExhausted(profile.max_retries + 1, last_status)


def _extract_content(resp: httpx.Response) -> tuple[str, dict[str, Any] | None]:
    try:
        body = resp.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(resp.status_code, resp.text) from exc
    if not isinstance(text, str) or not text:
        raise ProviderError(resp.status_code, resp.text)
    usage = body.get("usage") if isinstance(body.get("usage"), dict) else None
    return text, usage


class ReplayBackend:
    def __init__(self, store: ReplayStore) -> None:
        self.store = store

    def send(self, profile: ProviderProfile, request: CompletionRequest, fp: str) -> CompletionResult:
        return CompletionResult(text=self.store.lookup(fp), fingerprint=fp)


# -- entry points ------------------------------------------------------------


def check_supported(profile: ProviderProfile, request: CompletionRequest) -> None:
    if request.config.top_k is not None and not profile.supports_top_k:
        raise UnsupportedParameter(f"profile {profile.name!r} does not accept top_k")


def complete(
    profile: ProviderProfile,
    request: CompletionRequest,
    cache: ResponseCache | None = None,
    backend: Backend | None = None,
    *,
    recorder: ReplayStore | None = None,
) -> CompletionResult:
    """Return the completion for ``request``, consulting ``cache`` first.

    ``backend`` defaults to a fresh :class:`HTTPBackend`. When ``recorder`` is
    given, every returned text (cached or fresh) is copied into it.
    """
    check_supported(profile, request)
    fp = fingerprint(profile, request)
    if cache is not None:
        hit = cache.get(fp)
        if hit is not None:
            if recorder is not None:
                recorder.add(fp, hit)
            return CompletionResult(text=hit, fingerprint=fp, from_cache=True, attempt_count=1)
    if backend is None:
        backend = HTTPBackend()
    result = backend.send(profile, request, fp)
    if cache is not None:
        cache.put(fp, result.text, model=profile.model, usage=result.usage)
    if recorder is not None:
        recorder.add(fp, result.text)
    return result


def replay_complete(store: ReplayStore, profile: ProviderProfile, request: CompletionRequest) -> CompletionResult:
    check_supported(profile, request)
    fp = fingerprint(profile, request)
    return CompletionResult(text=store.lookup(fp), fingerprint=fp)


class Provider:
    """A profile bound to a backend and an optional cache."""

    def __init__(
        self,
        profile: ProviderProfile,
        backend: Backend | None = None,
        cache: ResponseCache | None = None,
        recorder: ReplayStore | None = None,
    ) -> None:
        self.profile = profile
        self.backend = backend if backend is not None else HTTPBackend()
        self.cache = cache
        self.recorder = recorder

    def complete(self, request: CompletionRequest) -> CompletionResult:
        return complete(self.profile, request, self.cache, self.backend, recorder=self.recorder)

    def fingerprint(self, request: CompletionRequest) -> str:
        return fingerprint(self.profile, request)
