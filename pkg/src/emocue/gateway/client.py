"""Chat and embedding gateway: caching, retries, call budget and transcript."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from emocue.errors import (
    BudgetExceeded,
    EmptyInput,
    ImageLoadError,
    TransportError,
    ZeroVector,
)
from emocue.gateway.cache import ResponseCache

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 1024
TEXT = "text"
IMAGE = "image"


@dataclass(frozen=True)
class ImageRef:
    path: str
    digest: str
    data: bytes = field(repr=False)
    mime: str = "image/png"


_MIME = {"PNG": "image/png", "JPEG": "image/jpeg", "GIF": "image/gif", "WEBP": "image/webp", "BMP": "image/bmp"}


def file_digest(path: str | Path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc


def load_image(path: str | Path | ImageRef) -> ImageRef:
    if isinstance(path, ImageRef):
        return path
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc
    try:
        with Image.open(io.BytesIO(data)) as im:
            fmt = im.format
            im.verify()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageLoadError(f"cannot decode image {path}: {exc}") from exc
    return ImageRef(str(path), hashlib.sha256(data).hexdigest(), data, _MIME.get(fmt or "", "application/octet-stream"))


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray = field(repr=False)
    modality: str = TEXT

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def normalize(self) -> "Embedding":
        n = self.norm
        if n == 0.0 or not np.isfinite(n):
            raise ZeroVector(f"cannot normalize a zero {self.modality} embedding")
        return Embedding(self.values / n, self.modality)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    user_text: str
    system_text: str | None = None
    images: tuple[ImageRef, ...] = ()
    max_output_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    purpose: str = ""  # transcript tag only; not part of the cache key

    def __post_init__(self):
        if not self.user_text.strip():
            raise EmptyInput("chat request with empty user text")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        object.__setattr__(self, "images", tuple(load_image(i) for i in self.images))

    def key_fields(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "images": [i.digest for i in self.images],
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        }

    def match_subject(self) -> str:
        """Text the mock backend matches regex rules against."""
        parts = [self.system_text or "", self.user_text]
        parts += [f"[image sha256:{i.digest}]" for i in self.images]
        return "\n".join(parts)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict[str, int]
    backend_id: str
    cached: bool = False


def cache_key(kind: str, fields: dict[str, Any]) -> str:
    blob = json.dumps({"kind": kind, **fields}, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend(Protocol):
    backend_id: str
    kind: str

    def chat(self, request: ChatRequest, digest: str) -> tuple[str, dict[str, int]]: ...

    def embed_text(self, text: str, model_id: str) -> Sequence[float]: ...

    def embed_image(self, image: ImageRef, model_id: str) -> Sequence[float]: ...


class Transcript:
    """Append-only record of gateway calls and pipeline events.

    Inside ``scope()`` events from the current thread go to a private list so
    concurrent per-image work can be flushed in a deterministic order.
    """

    def __init__(self):
        self.events: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        self._local = threading.local()

    def record(self, event: dict[str, Any]) -> None:
        stack = getattr(self._local, "stack", None)
        if stack:
            stack[-1].append(event)
        else:
            with self._lock:
                self.events.append(event)

    @contextmanager
    def scope(self):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        bucket: list[dict[str, Any]] = []
        stack.append(bucket)
        try:
            yield bucket
        finally:
            stack.pop()

    def extend(self, events: Sequence[dict[str, Any]]) -> None:
        for e in events:
            self.record(e)

    def count(self, **match: Any) -> int:
        return sum(all(e.get(k) == v for k, v in match.items()) for e in self.events)


class Gateway:
    def __init__(
        self,
        backend: Backend,
        *,
        chat_model: str = "vlm",
        embed_model: str = "clip",
        cache: ResponseCache | None = None,
        max_retries: int = 3,
        backoff: float = 0.5,
        call_cap: int | None = None,
        max_output_tokens: int = DEFAULT_MAX_TOKENS,
        temperature: float = 0.0,
        transcript: Transcript | None = None,
    ):
        self.backend = backend
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.cache = cache if cache is not None else ResponseCache(None)
        self.max_retries = max_retries
        self.backoff = backoff
        self.call_cap = call_cap
        self.max_output_tokens = max_output_tokens
        self.temperature = temperature
        self.transcript = transcript if transcript is not None else Transcript()
        self.backend_calls = 0
        self._count_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._key_locks_lock = threading.Lock()

    def request(self, user_text: str, images: Sequence[str | Path | ImageRef] = (), purpose: str = "",
                system_text: str | None = None) -> ChatRequest:
        return ChatRequest(
            model_id=self.chat_model,
            user_text=user_text,
            system_text=system_text,
            images=tuple(images),
            max_output_tokens=self.max_output_tokens,
            temperature=self.temperature,
            purpose=purpose,
        )

    def request_digest(self, request: ChatRequest) -> str:
        return cache_key(f"chat:{self.backend.kind}", request.key_fields())

    def _lock_for(self, digest: str) -> threading.Lock:
        with self._key_locks_lock:
            return self._key_locks.setdefault(digest, threading.Lock())

    def _charge(self) -> None:
        with self._count_lock:
            if self.call_cap is not None and self.backend_calls >= self.call_cap:
                raise BudgetExceeded(f"backend call cap of {self.call_cap} reached")
            self.backend_calls += 1

    def _with_retries(self, fn, what: str):
        attempt = 0
        while True:
            try:
                return fn()
            except TransportError as exc:
                if attempt >= self.max_retries:
                    raise TransportError(f"{what} failed after {attempt + 1} attempts: {exc}") from exc
                delay = self.backoff * (2 ** attempt)
                log.warning("%s failed (%s); retry %d in %.2fs", what, exc, attempt + 1, delay)
                if delay > 0:
                    time.sleep(delay)
                attempt += 1

    def chat(self, request: ChatRequest) -> ChatResponse:
        digest = self.request_digest(request)
        with self._lock_for(digest):
            hit = self.cache.get(digest)
            if hit is not None:
                resp = ChatResponse(hit["text"], hit.get("usage", {}), hit["backend_id"], cached=True)
            else:
                self._charge()
                text, usage = self._with_retries(lambda: self.backend.chat(request, digest), "chat")
                text = text.rstrip()
                self.cache.put(
                    digest,
                    {"kind": "chat", **request.key_fields()},
                    {"text": text, "usage": dict(usage), "backend_id": self.backend.backend_id},
                )
                resp = ChatResponse(text, dict(usage), self.backend.backend_id, cached=False)
        self.transcript.record({"op": "chat", "purpose": request.purpose, "digest": digest,
                                "images": [i.digest for i in request.images]})
        return resp

    def _embed(self, kind: str, key_fields: dict[str, Any], compute, modality: str) -> Embedding:
        digest = cache_key(f"{kind}:{self.backend.kind}", key_fields)
        with self._lock_for(digest):
            hit = self.cache.get(digest)
            if hit is not None:
                values = hit["values"]
            else:
                self._charge()
                values = [float(x) for x in self._with_retries(compute, kind)]
                if not any(values):
                    raise ZeroVector(f"backend returned an all-zero {modality} embedding")
                self.cache.put(digest, {"kind": kind, **key_fields},
                               {"values": values, "backend_id": self.backend.backend_id})
        self.transcript.record({"op": kind, "digest": digest})
        return Embedding(np.asarray(values, dtype=np.float64), modality).normalize()

    def embed_text(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise EmptyInput("cannot embed empty text")
        return self._embed("embed_text", {"model_id": self.embed_model, "text": text},
                           lambda: self.backend.embed_text(text, self.embed_model), TEXT)

    def embed_image(self, image: str | Path | ImageRef) -> Embedding:
        ref = load_image(image)
        return self._embed("embed_image", {"model_id": self.embed_model, "image": ref.digest},
                           lambda: self.backend.embed_image(ref, self.embed_model), IMAGE)
