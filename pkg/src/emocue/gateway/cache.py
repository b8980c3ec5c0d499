"""Content-addressed response cache.

Layout: ``<root>/<digest[:2]>/<digest>.json`` holding the request metadata and
the verbatim response. Without a root the cache lives in memory.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any


class ResponseCache:
    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        assert self.root is not None
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict[str, Any] | None:
        if self.root is None:
            with self._lock:
                rec = self._mem.get(digest)
            return None if rec is None else rec["response"]
        path = self._path(digest)
        try:
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, KeyError):
            # torn or foreign file: treat as a miss, it will be rewritten
            return None

    def put(self, digest: str, request: dict[str, Any], response: dict[str, Any]) -> None:
        record = {"digest": digest, "request": request, "response": response}
        if self.root is None:
            with self._lock:
                self._mem.setdefault(digest, record)
            return
        path = self._path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(record, fh, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, path)

    def __len__(self) -> int:
        if self.root is None:
            return len(self._mem)
        if not self.root.exists():
            return 0
        return sum(1 for _ in self.root.glob("*/*.json"))
