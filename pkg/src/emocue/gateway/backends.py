"""Backends behind the gateway: an HTTP+JSON client and a scripted mock."""

from __future__ import annotations

import base64
import hashlib
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx
import numpy as np
import yaml

from emocue.errors import BackendRefusal, ConfigError, TransportError
from emocue.gateway.client import ChatRequest, ImageRef

DEFAULT_API_KEY_ENV = "EMOCUE_API_KEY"


def data_url(image: ImageRef) -> str:
    return f"data:{image.mime};base64,{base64.b64encode(image.data).decode('ascii')}"


class HTTPBackend:
    """Chat-completions and embeddings endpoints over HTTP+JSON.

    Chat: ``POST {base}/chat/completions`` with images inlined as data URLs.
    Embeddings: ``POST {base}/embeddings`` with ``input`` a string for text or
    ``[{"image": <data url>}]`` for images.
    """

    kind = "http"

    def __init__(self, base_url: str, *, embed_base_url: str | None = None,
                 api_key_env: str = DEFAULT_API_KEY_ENV, timeout: float = 120.0,
                 transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self.embed_base_url = (embed_base_url or base_url).rstrip("/")
        self.backend_id = f"http:{self.base_url}"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(api_key_env, "").strip()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, url: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self._client.post(url, json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {url}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"POST {url}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendRefusal(f"POST {url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendRefusal(f"POST {url}: response is not JSON") from exc

    def chat(self, request: ChatRequest, digest: str) -> tuple[str, dict[str, int]]:
        content: list[dict[str, Any]] = [{"type": "text", "text": request.user_text}]
        content += [{"type": "image_url", "image_url": {"url": data_url(i)}} for i in request.images]
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": content})
        body = self._post(f"{self.base_url}/chat/completions", {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "stream": False,
        })
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendRefusal("chat response lacks choices[0].message.content") from exc
        usage = {k: int(v) for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
        return text, usage

    def _embedding(self, payload: dict[str, Any]) -> list[float]:
        body = self._post(f"{self.embed_base_url}/embeddings", payload)
        try:
            return [float(x) for x in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendRefusal("embedding response lacks data[0].embedding") from exc

    def embed_text(self, text: str, model_id: str) -> list[float]:
        return self._embedding({"model": model_id, "input": text})

    def embed_image(self, image: ImageRef, model_id: str) -> list[float]:
        return self._embedding({"model": model_id, "input": [{"image": data_url(image)}]})


@dataclass(frozen=True)
class MockRule:
    respond: str
    digest: str | None = None
    regex: re.Pattern | None = None

    def matches(self, digest: str, subject: str) -> bool:
        if self.digest is not None:
            return self.digest == digest
        return bool(self.regex and self.regex.search(subject))


def _parse_rule(raw: dict[str, Any]) -> MockRule:
    if "respond" not in raw or "match" not in raw:
        raise ConfigError(f"mock rule needs 'match' and 'respond': {raw}")
    match = raw["match"]
    respond = str(raw["respond"])
    if isinstance(match, dict):
        if "digest" in match:
            return MockRule(respond, digest=str(match["digest"]))
        if "regex" in match:
            return MockRule(respond, regex=re.compile(match["regex"], re.MULTILINE))
        raise ConfigError(f"mock rule match must hold 'digest' or 'regex': {raw}")
    return MockRule(respond, regex=re.compile(str(match), re.MULTILINE))


Responder = Callable[[ChatRequest, str], "str | None"]


class MockBackend:
    """Deterministic stand-in for real models.

    Chat replies come from an optional ``responder`` callable, then the first
    matching rule, then ``default``. Embeddings are hash-seeded Gaussian
    vectors, so they depend only on the text or the image content digest.
    """

    kind = "mock"
    backend_id = "mock"

    def __init__(self, rules: Sequence[MockRule] = (), *, default: str = "", seed: int = 0,
                 image_seed: int | None = None, dim: int = 64, responder: Responder | None = None):
        self.rules = list(rules)
        self.default = default
        self.seed = seed
        self.image_seed = seed if image_seed is None else image_seed
        self.dim = dim
        self.responder = responder

    @classmethod
    def from_script(cls, path: str | Path, responder: Responder | None = None) -> "MockBackend":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read mock script {path}: {exc}") from exc
        emb = data.get("embedding") or {}
        return cls(
            [_parse_rule(r) for r in data.get("rules") or []],
            default=str(data.get("default", "")),
            seed=int(emb.get("seed", 0)),
            image_seed=emb.get("image_seed"),
            dim=int(emb.get("dim", 64)),
            responder=responder,
        )

    def chat(self, request: ChatRequest, digest: str) -> tuple[str, dict[str, int]]:
        subject = request.match_subject()
        text = self.responder(request, subject) if self.responder else None
        if text is None:
            text = next((r.respond for r in self.rules if r.matches(digest, subject)), self.default)
        return text, {"prompt_tokens": len(subject.split()), "completion_tokens": len(text.split())}

    def _vector(self, seed: int, tag: str, key: str) -> list[float]:
        h = hashlib.sha256(f"{seed}:{tag}:{key}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        return rng.standard_normal(self.dim).tolist()

    def embed_text(self, text: str, model_id: str) -> list[float]:
        return self._vector(self.seed, "text", text)

    def embed_image(self, image: ImageRef, model_id: str) -> list[float]:
        return self._vector(self.image_seed, "image", image.digest)
