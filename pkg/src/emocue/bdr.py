"""Bi-directional reasoning: cue categorization and contrastive logic."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from emocue.errors import DataError, ParseFailure
from emocue.gateway import Gateway, InstructionTemplate, render
from emocue.gateway.templates import REPROMPT_SUFFIX
from emocue.manifest import ManifestEntry, sample_corpus
from emocue.replies import ask, extract_json
from emocue.taxonomy import (
    NEGATIVE,
    POSITIVE,
    VEC,
    DatasetProfile,
    EmotionSet,
    canonical_categories,
    category,
    guess_category,
    normalize_phrase,
    seed_vecs,
)

log = logging.getLogger(__name__)

SUPPORTS = "supports"
SUPPRESSES = "suppresses"


@dataclass(frozen=True)
class ExpertCue:
    phrase: str
    source: str = ""


@dataclass(frozen=True)
class ExpertCueSet:
    cues: tuple[ExpertCue, ...]

    def __post_init__(self):
        if not self.cues:
            raise DataError("expert cue set is empty")
        if any(not c.phrase.strip() for c in self.cues):
            raise DataError("expert cue with empty phrase")

    def render(self) -> str:
        return "\n".join(f"- {c.phrase}" + (f" ({c.source})" if c.source else "") for c in self.cues)


@dataclass(frozen=True)
class SurveyEntry:
    factor: str
    share: float
    respondents: int

    def __post_init__(self):
        if not 0.0 <= self.share <= 1.0:
            raise DataError(f"survey share out of [0,1]: {self.share}")
        if self.respondents <= 0:
            raise DataError(f"survey respondent count must be positive: {self.respondents}")


@dataclass(frozen=True)
class SurveyStats:
    entries: tuple[SurveyEntry, ...]

    def render(self) -> str:
        return "\n".join(f"- {e.factor}: {e.share:.0%} of {e.respondents} respondents" for e in self.entries)


def _records(path: str | Path | None, default_name: str) -> list[list[str]]:
    if path is None:
        text = resources.files("emocue.data").joinpath(default_name).read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    for line in text.splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            rows.append([f.strip() for f in line.split("\t")])
    return rows


def load_expert_cues(path: str | Path | None = None) -> ExpertCueSet:
    """One cue per line: ``phrase<TAB>source``. Defaults to the bundled seed file."""
    return ExpertCueSet(tuple(ExpertCue(r[0], r[1] if len(r) > 1 else "") for r in _records(path, "expert_cues.tsv")))


def load_survey(paths: Sequence[str | Path] | None = None) -> SurveyStats:
    """One factor per line: ``factor<TAB>share<TAB>respondents``."""
    rows = []
    for p in paths or [None]:
        rows += _records(p, "survey_default.tsv")
    try:
        return SurveyStats(tuple(SurveyEntry(r[0], float(r[1]), int(r[2])) for r in rows))
    except (IndexError, ValueError) as exc:
        raise DataError(f"malformed survey record: {exc}") from exc


class StructuredVECSet:
    """Cues grouped under all six categories. Phrases are unique across the set."""

    def __init__(self, by_category: Mapping[int, Iterable[VEC]]):
        cats = {c.index for c in canonical_categories()}
        if set(by_category) != cats:
            raise DataError(f"structured cue set needs exactly categories {sorted(cats)}")
        seen: set[str] = set()
        self.by_category: dict[int, tuple[VEC, ...]] = {}
        for idx in sorted(by_category):
            vecs = tuple(by_category[idx])
            for v in vecs:
                if v.category.index != idx:
                    raise DataError(f"cue {v.phrase!r} filed under category {idx} but tagged {v.category.index}")
                if v.phrase.lower() in seen:
                    raise DataError(f"duplicate cue {v.phrase!r}")
                seen.add(v.phrase.lower())
            self.by_category[idx] = vecs

    def __eq__(self, other):
        return isinstance(other, StructuredVECSet) and self.by_category == other.by_category

    def all(self) -> list[VEC]:
        return [v for idx in sorted(self.by_category) for v in self.by_category[idx]]

    def render(self) -> str:
        lines = []
        for c in canonical_categories():
            phrases = ", ".join(v.phrase for v in self.by_category[c.index]) or "(none)"
            lines.append(f"{c.index}. {c.title}: {phrases}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {str(k): [v.phrase for v in vs] for k, vs in sorted(self.by_category.items())}

    @classmethod
    def from_json(cls, data: Mapping[str, Sequence[str]]) -> "StructuredVECSet":
        return cls({int(k): [VEC(p, category(int(k))) for p in v] for k, v in data.items()})

    @classmethod
    def from_seed(cls) -> "StructuredVECSet":
        groups: dict[int, list[VEC]] = {c.index: [] for c in canonical_categories()}
        for v in seed_vecs():
            groups[v.category.index].append(v)
        return cls(groups)


def _category_key(key: str) -> int | None:
    key = str(key).strip()
    m = re.match(r"^(\d)\b", key)
    if m and 1 <= int(m.group(1)) <= 6:
        return int(m.group(1))
    for c in canonical_categories():
        if c.title.lower() in key.lower():
            return c.index
    return None


def parse_structured_vecs(reply: str) -> StructuredVECSet:
    data = extract_json(reply)
    if not isinstance(data, dict):
        raise ParseFailure("expected a JSON object mapping categories to cue lists")
    groups: dict[int, list[VEC]] = {}
    seen: set[str] = set()
    for key, phrases in data.items():
        idx = _category_key(key)
        if idx is None:
            log.warning("ignoring unknown category key %r", key)
            continue
        if not isinstance(phrases, list):
            raise ParseFailure(f"category {key!r} must map to a list")
        bucket = groups.setdefault(idx, [])
        for p in phrases:
            phrase = normalize_phrase(str(p))
            if not phrase or phrase.lower() in seen:
                continue
            try:
                bucket.append(VEC(phrase, category(idx)))
            except DataError as exc:
                log.warning("dropping cue: %s", exc)
                continue
            seen.add(phrase.lower())
    if not groups:
        raise ParseFailure("no recognizable categories in reply")
    seed = StructuredVECSet.from_seed()
    for c in canonical_categories():
        if c.index not in groups:
            log.warning("reply omitted category %d (%s); using seed cues", c.index, c.title)
            groups[c.index] = [v for v in seed.by_category[c.index] if v.phrase.lower() not in seen]
            seen.update(v.phrase.lower() for v in groups[c.index])
    return StructuredVECSet(groups)


def direct_informing(gateway: Gateway, template: InstructionTemplate, cues: ExpertCueSet,
                     survey: SurveyStats) -> StructuredVECSet:
    categories = "\n".join(f"{c.index}. {c.title}" for c in canonical_categories())
    result, _ = ask(gateway, template, {"cues": cues.render(), "survey": survey.render(), "categories": categories},
                    parse_structured_vecs, purpose="i_d")
    return result


@dataclass(frozen=True)
class LogicRule:
    emotion: str
    direction: str
    cue: VEC
    rationale: str = ""

    def sort_key(self):
        return (self.emotion, self.direction, self.cue.phrase.lower(), self.cue.phrase,
                self.cue.category.index, self.rationale)

    def to_json(self) -> dict:
        return {"emotion": self.emotion, "direction": self.direction, "cue": self.cue.phrase,
                "category": self.cue.category.index, "rationale": self.rationale}


@dataclass(frozen=True)
class ContrastiveLogic:
    rules: tuple[LogicRule, ...] = ()

    def render(self) -> str:
        if not self.rules:
            return "(none)"
        return "\n".join(f"- {r.cue.phrase} {r.direction} {r.emotion}" for r in self.rules)

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self.rules]

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> "ContrastiveLogic":
        rules = []
        for r in data:
            pol = NEGATIVE if r["direction"] == SUPPRESSES else POSITIVE
            rules.append(LogicRule(r["emotion"], r["direction"], VEC(r["cue"], category(int(r["category"])), pol),
                                   r.get("rationale", "")))
        return cls(tuple(rules))


_SUPPORT_WORDS = {"support", "supports", "evoke", "evokes", "elicit", "elicits", "trigger", "triggers",
                  "enhance", "enhances", "amplify", "amplifies"}
_SUPPRESS_WORDS = {"suppress", "suppresses", "inhibit", "inhibits", "reduce", "reduces", "prevent",
                   "prevents", "negate", "negates", "dampen", "dampens"}
_PROSE_RULE = re.compile(
    r"^(?P<cue>.+?)\s+(?P<verb>" + "|".join(sorted(_SUPPORT_WORDS | _SUPPRESS_WORDS, key=len, reverse=True))
    + r")\s+(?P<emotion>[A-Za-z-]+)(?P<rest>.*)$",
    re.IGNORECASE,
)


def _direction(word: str) -> str | None:
    w = str(word).strip().lower()
    if w in _SUPPORT_WORDS:
        return SUPPORTS
    if w in _SUPPRESS_WORDS:
        return SUPPRESSES
    return None


def _make_rule(emotion: str, direction: str | None, cue: str, cat, rationale: str,
               profile: DatasetProfile) -> LogicRule | None:
    emotion = str(emotion).strip().lower()
    if emotion not in profile.vocabulary or direction is None:
        return None
    try:
        cat_obj = category(int(cat)) if cat is not None else guess_category(cue)
    except (DataError, ValueError, TypeError):
        cat_obj = guess_category(cue)
    try:
        vec = VEC(cue, cat_obj, NEGATIVE if direction == SUPPRESSES else POSITIVE)
    except DataError:
        return None
    return LogicRule(emotion, direction, vec, " ".join(str(rationale).split()))


def parse_logic(reply: str, profile: DatasetProfile) -> ContrastiveLogic:
    """Rules from a JSON list, or from prose lines like "bright colors suppress fear"."""
    rules: list[LogicRule] = []
    try:
        data = extract_json(reply)
    except ParseFailure:
        data = None
    if isinstance(data, dict):
        data = data.get("rules")
    if isinstance(data, list):
        for item in data:
            if not isinstance(item, dict) or "cue" not in item or "emotion" not in item:
                continue
            rule = _make_rule(item["emotion"], _direction(item.get("direction", "")), str(item["cue"]),
                              item.get("category"), item.get("rationale", ""), profile)
            if rule:
                rules.append(rule)
    else:
        for line in (reply or "").splitlines():
            line = re.sub(r"^\s*(?:[-*•]+|\d+[.)])\s*", "", line).strip()
            m = _PROSE_RULE.match(line)
            if not m:
                continue
            rule = _make_rule(m.group("emotion"), _direction(m.group("verb")), m.group("cue").strip(" \"'"),
                              None, line, profile)
            if rule:
                rules.append(rule)
        if not rules and data is None and (reply or "").strip():
            raise ParseFailure("no contrastive rules found in reply")
    return ContrastiveLogic(tuple(rules))


def reverse_reasoning(gateway: Gateway, template: InstructionTemplate, evoked: EmotionSet, image,
                      profile: DatasetProfile) -> ContrastiveLogic:
    absent = evoked.complement()
    text = render(template, {
        "evoked": evoked.render() or "(none)",
        "absent": absent.render() or "(none)",
        "vocabulary": ", ".join(profile.vocabulary),
    })
    best: ContrastiveLogic | None = None
    reason = ""
    for attempt in range(2):
        user = text if attempt == 0 else text + REPROMPT_SUFFIX.format(reason=reason)
        reply = gateway.chat(gateway.request(user, [image], purpose="i_rev")).text
        try:
            logic = parse_logic(reply, profile)
        except ParseFailure as exc:
            reason = str(exc)
            continue
        best = logic
        if not len(absent) or any(r.direction == SUPPRESSES and r.emotion in absent for r in logic.rules):
            return logic
        reason = f"no rule explains why any of these emotions were suppressed: {absent.render()}"
    if best is None:
        raise ParseFailure(f"i_rev: reply unusable after reprompt: {reason}")
    log.info("accepting contrastive logic without suppress rules for %s", getattr(image, "path", image))
    return best


def aggregate_logic(parts: Iterable[ContrastiveLogic]) -> ContrastiveLogic:
    """Merge per-image logic, deduplicated by (emotion, direction, cue) in canonical order."""
    merged: dict[tuple[str, str, str], LogicRule] = {}
    for rule in sorted((r for p in parts for r in p.rules), key=LogicRule.sort_key):
        merged.setdefault((rule.emotion, rule.direction, rule.cue.phrase.lower()), rule)
    return ContrastiveLogic(tuple(merged.values()))


def build_reverse_corpus(entries: Sequence[ManifestEntry], per_emotion: int, seed: int) -> list[tuple[str, EmotionSet]]:
    return [(e.image, e.ground_truth) for e in sample_corpus(entries, "bdr", per_emotion, seed)]
