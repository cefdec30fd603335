"""Uniform access to text-generation and embedding backends.

Adds deterministic on-disk caching, retry with exponential backoff, bounded
batch concurrency, and a scriptable mock backend so every pipeline stage can
run offline and reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence


class BackendError(Exception):
    """Semantic backend failure (bad request, unscripted prompt, HTTP 4xx)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TransportError(Exception):
    """Network-level failure; eligible for retry."""


class RetryExhausted(Exception):
    """All retry attempts failed on transient errors."""


@dataclass(frozen=True)
class GenRequest:
    model_id: str
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class EmbedRequest:
    model_id: str
    texts: tuple[str, ...]
    normalize: bool = True

    def __init__(self, model_id: str, texts: Sequence[str], normalize: bool = True):
        if not texts:
            raise ValueError("texts must be nonempty")
        object.__setattr__(self, "model_id", model_id)
        object.__setattr__(self, "texts", tuple(texts))
        object.__setattr__(self, "normalize", normalize)


@dataclass
class GenResult:
    text: str
    created: str  # ISO timestamp of first computation (stable across cache hits)
    cached: bool


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class ResponseCache:
    """Content-addressed response store; one JSON file per cache key.

    Writes go through a temp file + rename so concurrent writers never
    expose partial entries.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fp:
            return json.load(fp)

    def put(self, key: str, entry: dict) -> None:
        path = self._path(key)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        with open(tmp, "w", encoding="utf-8") as fp:
            json.dump(entry, fp, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, path)


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


# --- backends ----------------------------------------------------------------

class HttpBackend:
    """OpenAI-style HTTP backend (chat completions + embeddings endpoints).

    The credential is read from ``api_key_env`` at call time; base URL and
    model ids come from configuration.
    """

    def __init__(self, base_url: str, api_key_env: str = "RECOMBKB_API_KEY",
                 timeout: float = 60.0, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.session.post(self.base_url + path, json=payload,
                                     headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}",
                              status=resp.status_code)
        return resp.json()

    def generate(self, req: GenRequest) -> str:
        body = self._post("/chat/completions", {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        })
        return body["choices"][0]["message"]["content"]

    def embed(self, req: EmbedRequest) -> list[list[float]]:
        body = self._post("/embeddings", {"model": req.model_id, "input": list(req.texts)})
        data = sorted(body["data"], key=lambda d: d.get("index", 0))
        return [list(map(float, d["embedding"])) for d in data]


def hash_embedding(text: str, dim: int = 16) -> list[float]:
    """Deterministic pseudo-embedding: unit vector seeded by the text digest.

    Used by scripted backends as a fallback so fixture pipelines can embed
    arbitrary strings reproducibly.
    """
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")
    import numpy as np

    rng = np.random.RandomState(seed)
    vec = rng.standard_normal(dim)
    vec = vec / np.linalg.norm(vec)
    return [float(x) for x in vec]


class MockBackend:
    """Scripted backend for tests and offline fixture pipelines.

    Prompts map to canned replies either exactly (``script``) or via
    substring rules (``add_rule``). Unscripted prompts raise
    :class:`BackendError`. All calls are counted, so tests can assert cache
    behavior and concurrency limits.
    """

    def __init__(self, embedding_dim: int = 4, embed_fallback: str | None = None):
        self._exact: dict[tuple[str | None, str], str] = {}
        self._rules: list[tuple[str | None, tuple[str, ...], str]] = []
        self._defaults: dict[str | None, str] = {}
        self._fail: dict[str, Exception] = {}
        self._embeddings: dict[str, list[float]] = {}
        self._lock = threading.Lock()
        self.embedding_dim = embedding_dim
        self.embed_fallback = embed_fallback
        self.generate_calls = 0
        self.embed_calls = 0
        self.in_flight = 0
        self.max_in_flight_seen = 0

    # -- scripting --
    def script(self, prompt: str, reply: str, model: str | None = None) -> "MockBackend":
        self._exact[(model, prompt)] = reply
        return self

    def add_rule(self, contains: str | Sequence[str], reply: str,
                 model: str | None = None) -> "MockBackend":
        needles = (contains,) if isinstance(contains, str) else tuple(contains)
        self._rules.append((model, needles, reply))
        return self

    def set_default(self, reply: str, model: str | None = None) -> "MockBackend":
        self._defaults[model] = reply
        return self

    def fail_on(self, prompt: str, exc: Exception) -> "MockBackend":
        self._fail[prompt] = exc
        return self

    def script_embedding(self, text: str, vector: Sequence[float]) -> "MockBackend":
        self._embeddings[text] = [float(x) for x in vector]
        return self

    # -- backend interface --
    def _enter(self):
        with self._lock:
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)

    def _exit(self):
        with self._lock:
            self.in_flight -= 1

    def generate(self, req: GenRequest) -> str:
        self._enter()
        try:
            with self._lock:
                self.generate_calls += 1
            if req.prompt in self._fail:
                raise self._fail[req.prompt]
            for model_key in (req.model_id, None):
                if (model_key, req.prompt) in self._exact:
                    return self._exact[(model_key, req.prompt)]
            for model, needles, reply in self._rules:
                if model is not None and model != req.model_id:
                    continue
                if all(n in req.prompt for n in needles):
                    return reply
            for model_key in (req.model_id, None):
                if model_key in self._defaults:
                    return self._defaults[model_key]
            raise BackendError(f"unscripted prompt for model {req.model_id!r}: "
                               f"{req.prompt[:80]!r}")
        finally:
            self._exit()

    def embed(self, req: EmbedRequest) -> list[list[float]]:
        self._enter()
        try:
            with self._lock:
                self.embed_calls += 1
            out = []
            for text in req.texts:
                if text in self._embeddings:
                    out.append(list(self._embeddings[text]))
                elif self.embed_fallback == "hash":
                    out.append(hash_embedding(text, self.embedding_dim))
                else:
                    raise BackendError(f"no scripted embedding for {text[:80]!r}")
            return out
        finally:
            self._exit()

    @classmethod
    def from_script_file(cls, path: str | Path) -> "MockBackend":
        """Load a scripted backend from a JSON file.

        Layout::

            {"generate": [{"model": ..., "prompt"|"contains": ..., "reply": ...},
                          {"model": ..., "default": true, "reply": ...}],
             "embeddings": {"text": [..]},
             "embedding_dim": 16,
             "embedding_fallback": "hash"}
        """
        with open(path, encoding="utf-8") as fp:
            spec = json.load(fp)
        backend = cls(embedding_dim=spec.get("embedding_dim", 16),
                      embed_fallback=spec.get("embedding_fallback"))
        for rule in spec.get("generate", []):
            model = rule.get("model")
            if rule.get("default"):
                backend.set_default(rule["reply"], model=model)
            elif "prompt" in rule:
                backend.script(rule["prompt"], rule["reply"], model=model)
            else:
                backend.add_rule(rule["contains"], rule["reply"], model=model)
        for text, vec in spec.get("embeddings", {}).items():
            backend.script_embedding(text, vec)
        return backend


# --- gateway ------------------------------------------------------------------

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


def _is_retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportError):
        return True
    if isinstance(exc, BackendError) and exc.status is not None:
        return exc.status in RETRYABLE_STATUSES or 500 <= exc.status < 600
    return False


@dataclass
class GatewayStats:
    network_calls: int = 0
    cache_hits: int = 0
    retries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, attr: str, n: int = 1) -> None:
        with self._lock:
            setattr(self, attr, getattr(self, attr) + n)


class Gateway:
    """Caching, retrying front door for a generation/embedding backend."""

    def __init__(self, backend, cache_dir: str | Path | None = None,
                 max_attempts: int = 5, backoff_base: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self.stats = GatewayStats()

    def _with_retries(self, fn):
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                return fn()
            except Exception as exc:  # noqa: BLE001 - classified below
                if not _is_retryable(exc):
                    raise
                last = exc
                if attempt + 1 < self.max_attempts:
                    self.stats.bump("retries")
                    self._sleep(self.backoff_base * (2 ** attempt))
        raise RetryExhausted(f"gave up after {self.max_attempts} attempts: {last}")

    # -- generation --
    def generate_detailed(self, req: GenRequest) -> GenResult:
        key = _digest({
            "kind": "generate",
            "model": req.model_id,
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        })
        if self.cache:
            entry = self.cache.get(key)
            if entry is not None:
                self.stats.bump("cache_hits")
                return GenResult(text=entry["response"], created=entry["created"], cached=True)
        text = self._with_retries(lambda: self.backend.generate(req))
        self.stats.bump("network_calls")
        created = _now_iso()
        if self.cache:
            self.cache.put(key, {"key": key, "kind": "generate", "model": req.model_id,
                                 "created": created, "response": text})
        return GenResult(text=text, created=created, cached=False)

    def generate(self, req: GenRequest) -> str:
        return self.generate_detailed(req).text

    # -- embeddings --
    def embed(self, req: EmbedRequest) -> list[list[float]]:
        raw: dict[int, list[float]] = {}
        missing: list[int] = []
        keys: list[str] = []
        for i, text in enumerate(req.texts):
            key = _digest({"kind": "embed", "model": req.model_id, "text": text})
            keys.append(key)
            entry = self.cache.get(key) if self.cache else None
            if entry is not None:
                self.stats.bump("cache_hits")
                raw[i] = entry["response"]
            else:
                missing.append(i)
        if missing:
            sub = EmbedRequest(req.model_id, [req.texts[i] for i in missing], normalize=False)
            vectors = self._with_retries(lambda: self.backend.embed(sub))
            self.stats.bump("network_calls")
            if len(vectors) != len(missing):
                raise BackendError(f"backend returned {len(vectors)} vectors for "
                                   f"{len(missing)} texts")
            created = _now_iso()
            for i, vec in zip(missing, vectors):
                raw[i] = [float(x) for x in vec]
                if self.cache:
                    self.cache.put(keys[i], {"key": keys[i], "kind": "embed",
                                             "model": req.model_id, "created": created,
                                             "response": raw[i]})
        out = [raw[i] for i in range(len(req.texts))]
        if req.normalize:
            out = [unit_norm(v) for v in out]
        return out

    # -- batching --
    def batch_execute(self, requests: Sequence[GenRequest | EmbedRequest],
                      max_in_flight: int = 4) -> list:
        """Run requests concurrently, at most ``max_in_flight`` outstanding.

        Results are positionally aligned with the input; a failed request
        yields its exception object at that position instead of aborting
        the batch.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if not requests:
            return []

        def run_one(req):
            try:
                if isinstance(req, EmbedRequest):
                    return self.embed(req)
                return self.generate(req)
            except Exception as exc:  # noqa: BLE001 - reported positionally
                return exc

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(run_one, requests))


def unit_norm(vec: Sequence[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in vec))
    if norm == 0:
        raise BackendError("zero vector cannot be normalized")
    return [x / norm for x in vec]
