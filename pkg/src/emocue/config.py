"""Engine configuration: loading, validation and the semantic config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from emocue.errors import ConfigError, DataError
from emocue.taxonomy import DatasetProfile, register_profile

TOGGLES = ("no_mer", "no_sve", "no_mm", "no_roa")
_PATH_FIELDS = ("concept_corpus", "manifest", "run_dir", "mock_script", "expert_cues", "templates", "cache_dir")
# Fields that do not change what a run computes.
_NON_SEMANTIC = {"run_dir", "cache_dir", "parallelism", "max_retries", "backoff", "timeout", "api_key_env",
                 "base_url", "embed_base_url", "call_cap", "method_name"}


@dataclass(frozen=True)
class EngineConfig:
    """Everything a run depends on.

    File-valued fields are resolved relative to the config file. ``survey``
    is a list of survey files; empty means the bundled defaults.
    """

    run_dir: str = "run"
    manifest: str | None = None
    concept_corpus: str | None = None
    backend: str = "mock"
    mock_script: str | None = None
    base_url: str | None = None
    embed_base_url: str | None = None
    api_key_env: str = "EMOCUE_API_KEY"
    chat_model: str = "vlm"
    embed_model: str = "clip"
    alpha: float = 0.6
    k: int = 10
    n: int = 3
    m: int = 7
    sve_iterations: int = 3
    per_emotion: int = 5
    seed: int = 0
    parallelism: int = 4
    toggles: tuple[str, ...] = ()
    text_embedding: str = "pool"
    accuracy_mode: str = "micro"
    max_retries: int = 3
    backoff: float = 0.5
    timeout: float = 120.0
    call_cap: int | None = None
    max_output_tokens: int = 1024
    temperature: float = 0.0
    expert_cues: str | None = None
    survey: tuple[str, ...] = ()
    templates: str | None = None
    cache_dir: str | None = None
    method_name: str = "engine"
    profiles: tuple[Mapping[str, Any], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "toggles", tuple(sorted(set(self.toggles))))
        object.__setattr__(self, "survey", tuple(self.survey))
        object.__setattr__(self, "profiles", tuple(self.profiles))
        problems = []
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha must be in [0,1], got {self.alpha}")
        if self.k < 1:
            problems.append("k must be >= 1")
        if self.n < 1 or self.m < 1:
            problems.append("prompt budgets n and m must be >= 1")
        if self.sve_iterations < 0:
            problems.append("sve_iterations must be >= 0")
        if self.per_emotion < 1:
            problems.append("per_emotion must be >= 1")
        if self.parallelism < 1:
            problems.append("parallelism must be >= 1")
        bad = set(self.toggles) - set(TOGGLES)
        if bad:
            problems.append(f"unknown toggles {sorted(bad)}; allowed {TOGGLES}")
        if self.backend not in ("mock", "http"):
            problems.append("backend must be 'mock' or 'http'")
        if self.backend == "http" and not self.base_url:
            problems.append("http backend needs base_url")
        if self.text_embedding not in ("pool", "concat"):
            problems.append("text_embedding must be 'pool' or 'concat'")
        if self.accuracy_mode not in ("micro", "macro"):
            problems.append("accuracy_mode must be 'micro' or 'macro'")
        if self.temperature < 0 or self.max_output_tokens < 1:
            problems.append("temperature must be >= 0 and max_output_tokens >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.run_dir) / "cache"

    def with_overrides(self, **changes: Any) -> "EngineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["toggles"] = list(self.toggles)
        d["survey"] = list(self.survey)
        d["profiles"] = [dict(p) for p in self.profiles]
        return d

    def register_profiles(self) -> None:
        for p in self.profiles:
            try:
                vocab = tuple(str(v).lower() for v in p["vocabulary"])
                register_profile(DatasetProfile(str(p["dataset_id"]).lower(), vocab, "neutral" in vocab,
                                                bool(p.get("multi_label", True))))
            except (KeyError, TypeError, DataError) as exc:
                raise ConfigError(f"bad custom profile {p!r}: {exc}") from exc

    def config_hash(self) -> str:
        """Hash of the fields that affect results; input files count by content, not path."""
        d = self.to_json()
        for key in _NON_SEMANTIC:
            d.pop(key, None)
        for key in ("concept_corpus", "manifest", "mock_script", "expert_cues", "templates"):
            d[key] = _content_digest(d[key])
        d["survey"] = [_content_digest(s) for s in d["survey"]]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def _content_digest(path: str | None) -> str | None:
    if not path:
        return None
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return f"missing:{Path(path).name}"


def load_config(path: str | Path, **overrides: Any) -> EngineConfig:
    """Read a YAML or JSON config file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(data, base=path.parent, **overrides)


def config_from_dict(data: Mapping[str, Any], base: str | Path = ".", **overrides: Any) -> EngineConfig:
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    base = Path(base)
    for key in _PATH_FIELDS:
        if data.get(key):
            data[key] = str((base / str(data[key])).resolve())
    if "survey" in data:
        surveys = data["survey"]
        if isinstance(surveys, str):
            surveys = [surveys]
        data["survey"] = tuple(str((base / s).resolve()) for s in surveys)
    if "toggles" in data:
        data["toggles"] = tuple(data["toggles"] or ())
    if "profiles" in data:
        data["profiles"] = tuple(data["profiles"] or ())
    try:
        return EngineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
