"""Append-only JSONL journal of records keyed by one field, used to resume interrupted work."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Any, Iterator

log = logging.getLogger(__name__)


class Journal:
    def __init__(self, path: str | Path, key_field: str = "key"):
        self.path = Path(path)
        self.key_field = key_field
        self._lock = threading.Lock()
        self._records: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        good = 0
        with open(self.path, "rb") as fh:
            for raw in fh:
                try:
                    if not raw.endswith(b"\n"):
                        raise ValueError("unterminated line")
                    rec = json.loads(raw)
                    key = rec[self.key_field]
                except (ValueError, KeyError, TypeError):
                    # torn tail from a killed run; cut it off so appends stay well-formed
                    log.warning("dropping torn journal tail in %s", self.path)
                    break
                self._records.setdefault(key, rec)
                good += len(raw)
        with open(self.path, "r+b") as fh:
            fh.truncate(good)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> dict[str, Any] | None:
        return self._records.get(key)

    def append(self, record: dict[str, Any]) -> bool:
        """Write ``record`` unless its key is already journaled. Returns True if written."""
        key = record[self.key_field]
        with self._lock:
            if key in self._records:
                return False
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            self._records[key] = record
            return True

    def records(self) -> Iterator[dict[str, Any]]:
        return iter(list(self._records.values()))
