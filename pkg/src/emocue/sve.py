"""Self-refined cue extraction: budgeted prompt generation and few-shot refinement."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

from emocue.bdr import ContrastiveLogic, StructuredVECSet
from emocue.errors import DataError, ParseFailure
from emocue.gateway import Gateway, InstructionTemplate, file_digest, render
from emocue.journal import Journal
from emocue.replies import ask, dedupe_phrases, extract_json, parse_phrases
from emocue.taxonomy import DatasetProfile, EmotionSet

log = logging.getLogger(__name__)

KEEP, REVISE, DROP = "keep", "revise", "drop"
VERDICTS = (KEEP, REVISE, DROP)

OBJECTIVE = "objective"
SUBJECTIVE = "subjective"


@dataclass(frozen=True)
class PromptItem:
    id: str
    kind: str
    emotion: str | None
    text: str


@dataclass(frozen=True)
class PromptSet:
    objective: tuple[str, ...]
    subjective: Mapping[str, tuple[str, ...]]
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objective", tuple(self.objective))
        object.__setattr__(self, "subjective", {k: tuple(v) for k, v in self.subjective.items()})
        if any(not t.strip() for t in self.all_texts()):
            raise DataError("prompt set holds an empty prompt")
        if self.version < 0:
            raise DataError("prompt set version must be >= 0")

    def all_texts(self) -> list[str]:
        return [*self.objective, *(t for v in self.subjective.values() for t in v)]

    def items(self, emotions: Iterable[str] | None = None) -> list[PromptItem]:
        keep = None if emotions is None else set(emotions)
        out = [PromptItem(f"o{i + 1}", OBJECTIVE, None, t) for i, t in enumerate(self.objective)]
        for emotion, texts in self.subjective.items():
            if keep is None or emotion in keep:
                out += [PromptItem(f"s-{emotion}-{i + 1}", SUBJECTIVE, emotion, t) for i, t in enumerate(texts)]
        return out

    def __len__(self) -> int:
        return len(self.all_texts())

    def within_budget(self, n: int, m: int) -> bool:
        return len(self.objective) <= n and all(len(v) <= m for v in self.subjective.values())

    def to_json(self) -> dict:
        return {"version": self.version, "objective": list(self.objective),
                "subjective": {k: list(v) for k, v in self.subjective.items()}}

    @classmethod
    def from_json(cls, data: Mapping) -> "PromptSet":
        return cls(tuple(data["objective"]), {k: tuple(v) for k, v in data["subjective"].items()},
                   int(data.get("version", 0)))

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def render(self) -> str:
        return "\n".join(f"{p.id} [{p.kind}{'/' + p.emotion if p.emotion else ''}]: {p.text}" for p in self.items())


@dataclass(frozen=True)
class ExtractedVECs:
    descriptive: tuple[str, ...]
    elicitive: Mapping[str, tuple[str, ...]]
    source_image: str

    def to_json(self) -> dict:
        return {"descriptive": list(self.descriptive), "elicitive": {k: list(v) for k, v in self.elicitive.items()},
                "source_image": self.source_image}

    @classmethod
    def from_json(cls, data: Mapping) -> "ExtractedVECs":
        return cls(tuple(data["descriptive"]), {k: tuple(v) for k, v in data["elicitive"].items()},
                   data["source_image"])


@dataclass(frozen=True)
class FewShotSet:
    examples: tuple[tuple[str, EmotionSet], ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise DataError("few-shot set is empty")

    @property
    def count(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class Verdict:
    prompt_id: str
    verdict: str
    suggestion: str | None = None
    rationale: str = ""


@dataclass(frozen=True)
class RefinementFeedback:
    per_prompt: tuple[Verdict, ...]
    round: int

    def all_keep(self) -> bool:
        return all(v.verdict == KEEP for v in self.per_prompt)

    def to_json(self) -> dict:
        return {"round": self.round, "per_prompt": [v.__dict__ for v in self.per_prompt]}


def run_extraction_prompt(gateway: Gateway, template: InstructionTemplate, prompt: str, image,
                          purpose: str = "extract") -> list[str]:
    reply = gateway.chat(gateway.request(render(template, {"prompt": prompt}), [image], purpose=purpose)).text
    return parse_phrases(reply)


def _prompt_list(value) -> list[str]:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list):
        return []
    return [" ".join(str(v).split()) for v in value if isinstance(v, (str, int, float)) and str(v).strip()]


def parse_objective_reply(reply: str) -> list[str]:
    try:
        data = extract_json(reply)
    except ParseFailure:
        lines = [re.sub(r"^\s*(?:[-*•]+|\d+[.)])\s*", "", l).strip() for l in (reply or "").splitlines()]
        lines = [l for l in lines if l]
        if not lines:
            raise
        return lines
    if isinstance(data, dict):
        data = data.get("prompts", data.get("objective"))
    if not isinstance(data, list):
        raise ParseFailure("expected a JSON list of prompt strings")
    return _prompt_list(data)


def parse_subjective_reply(reply: str, emotions: Sequence[str]) -> dict[str, list[str]]:
    data = extract_json(reply)
    if isinstance(data, dict) and "subjective" in data and isinstance(data["subjective"], dict):
        data = data["subjective"]
    if not isinstance(data, dict):
        raise ParseFailure("expected a JSON object mapping emotions to prompt lists")
    wanted = {e.lower(): e for e in emotions}
    out: dict[str, list[str]] = {}
    for key, value in data.items():
        e = wanted.get(str(key).strip().lower())
        if e is not None:
            out.setdefault(e, []).extend(_prompt_list(value))
    return out


def _clamp(new: Sequence[str], existing: Sequence[str], limit: int) -> list[str]:
    seen = {t.lower() for t in existing}
    out: list[str] = []
    for t in new:
        if len(out) >= limit:
            break
        if t and t.lower() not in seen:
            seen.add(t.lower())
            out.append(t)
    return out


def parse_feedback(reply: str, prompts: PromptSet, round_: int) -> RefinementFeedback:
    data = extract_json(reply)
    if isinstance(data, dict):
        data = data.get("verdicts", data.get("feedback", [
            {"id": k, **(v if isinstance(v, dict) else {"verdict": v})} for k, v in data.items()
        ]))
    if not isinstance(data, list):
        raise ParseFailure("expected a JSON list of verdicts")
    ids = [p.id for p in prompts.items()]
    found: dict[str, Verdict] = {}
    for item in data:
        if not isinstance(item, dict):
            continue
        pid = str(item.get("id", "")).strip()
        if pid not in ids or pid in found:
            continue
        verdict = str(item.get("verdict", "")).strip().lower()
        if verdict not in VERDICTS:
            raise ParseFailure(f"prompt {pid}: verdict must be one of {VERDICTS}, got {verdict!r}")
        suggestion = item.get("suggestion")
        suggestion = " ".join(str(suggestion).split()) if suggestion else None
        found[pid] = Verdict(pid, verdict, suggestion, str(item.get("rationale", "")))
    missing = [i for i in ids if i not in found]
    if missing:
        raise ParseFailure(f"no verdict for prompt ids {missing}")
    return RefinementFeedback(tuple(found[i] for i in ids), round_)


class SelfRefiner:
    """Generates a budgeted prompt set and refines it against labeled examples."""

    def __init__(
        self,
        gateway: Gateway,
        templates: Mapping[str, InstructionTemplate],
        profile: DatasetProfile,
        cues: StructuredVECSet,
        logic: ContrastiveLogic,
        n: int = 3,
        m: int = 7,
        *,
        parallelism: int = 1,
        journal: Journal | None = None,
        on_round: Callable[[PromptSet, RefinementFeedback], None] | None = None,
    ):
        if n < 1 or m < 1:
            raise DataError(f"prompt budgets must be >= 1 (n={n}, m={m})")
        self.gateway = gateway
        self.templates = templates
        self.profile = profile
        self.cues = cues
        self.logic = logic
        self.n = n
        self.m = m
        self.parallelism = max(1, parallelism)
        self.journal = journal
        self.on_round = on_round

    def _bindings(self, count: int, existing: Sequence[str]) -> dict[str, object]:
        return {"cues": self.cues.render(), "logic": self.logic.render(), "count": count,
                "existing": "\n".join(f"- {t}" for t in existing) or "(none)"}

    def _objective(self, count: int, existing: Sequence[str]) -> list[str]:
        new, _ = ask(self.gateway, self.templates["i_o"], self._bindings(count, existing),
                     parse_objective_reply, purpose="i_o")
        return _clamp(new, existing, count)

    def _subjective(self, count: int, emotions: Sequence[str], existing: Sequence[str]) -> dict[str, list[str]]:
        b = self._bindings(count, existing)
        b["emotions"] = ", ".join(emotions)
        new, _ = ask(self.gateway, self.templates["i_s"], b,
                     lambda r: parse_subjective_reply(r, emotions), purpose="i_s")
        return {e: new.get(e, []) for e in emotions}

    def generate_prompts(self) -> PromptSet:
        objective = self._objective(self.n, [])
        vocab = list(self.profile.vocabulary)
        subj = self._subjective(self.m, vocab, [])
        subjective = {e: tuple(_clamp(subj[e], [], self.m)) for e in vocab}
        return PromptSet(tuple(objective), subjective, 0)

    def _extract_one(self, prompts: PromptSet, image: str) -> ExtractedVECs:
        digest = file_digest(image)
        key = f"{prompts.digest()}:{digest}"
        if self.journal is not None and key in self.journal:
            return ExtractedVECs.from_json(self.journal.get(key)["extraction"])
        tmpl = self.templates["extract"]
        descriptive: list[str] = []
        for text in prompts.objective:
            descriptive += run_extraction_prompt(self.gateway, tmpl, text, image, "extract_objective")
        elicitive: dict[str, tuple[str, ...]] = {}
        for emotion, texts in prompts.subjective.items():
            phrases: list[str] = []
            for text in texts:
                phrases += run_extraction_prompt(self.gateway, tmpl, text, image, "extract_subjective")
            elicitive[emotion] = tuple(dedupe_phrases(phrases))
        result = ExtractedVECs(tuple(dedupe_phrases(descriptive)), elicitive, digest)
        if self.journal is not None:
            self.journal.append({"key": key, "extraction": result.to_json()})
        return result

    def extract_for_refinement(self, prompts: PromptSet, fewshot: FewShotSet) -> list[ExtractedVECs]:
        images = [img for img, _ in fewshot.examples]
        transcript = self.gateway.transcript

        def work(img):
            with transcript.scope() as events:
                result = self._extract_one(prompts, img)
            return result, list(events)

        out = []
        with ThreadPoolExecutor(self.parallelism) as pool:
            for result, events in pool.map(work, images):
                transcript.extend(events)
                out.append(result)
        return out

    def refine(self, extracted: Sequence[ExtractedVECs], fewshot: FewShotSet, prompts: PromptSet,
               round_: int = 1) -> RefinementFeedback:
        if len(extracted) != fewshot.count:
            raise DataError("extractions are not aligned with the few-shot examples")
        blocks = []
        for i, (ex, (_, truth)) in enumerate(zip(extracted, fewshot.examples), 1):
            elic = "; ".join(f"{e}: {', '.join(v) or '(none)'}" for e, v in ex.elicitive.items()) or "(none)"
            blocks.append(f"Example {i} (ground truth: {truth.render() or '(none)'})\n"
                          f"  descriptive: {', '.join(ex.descriptive) or '(none)'}\n"
                          f"  elicitive: {elic}")
        bindings = {"fewshot_count": fewshot.count, "prompts": prompts.render(), "examples": "\n".join(blocks)}
        feedback, _ = ask(self.gateway, self.templates["i_ref"], bindings,
                          lambda r: parse_feedback(r, prompts, round_), purpose="i_ref")
        return feedback

    def apply(self, prompts: PromptSet, feedback: RefinementFeedback) -> PromptSet:
        """Apply verdicts, then regenerate prompts for groups that lost some to "drop"."""
        verdicts = {v.prompt_id: v for v in feedback.per_prompt}

        def survivors(items: Sequence[PromptItem]) -> tuple[list[str], bool]:
            kept: list[str] = []
            dropped = False
            for p in items:
                v = verdicts[p.id]
                if v.verdict == DROP:
                    dropped = True
                    continue
                text = v.suggestion if v.verdict == REVISE and v.suggestion else p.text
                if text.lower() not in {k.lower() for k in kept}:
                    kept.append(text)
            return kept, dropped

        items = prompts.items()
        objective, obj_dropped = survivors([p for p in items if p.kind == OBJECTIVE])
        subjective: dict[str, list[str]] = {}
        refill: list[str] = []
        for emotion in prompts.subjective:
            kept, dropped = survivors([p for p in items if p.emotion == emotion])
            subjective[emotion] = kept
            if dropped and len(kept) < self.m:
                refill.append(emotion)

        if obj_dropped and len(objective) < self.n:
            objective += self._objective(self.n - len(objective), objective)
        if refill:
            deficit = max(self.m - len(subjective[e]) for e in refill)
            existing = [t for e in refill for t in subjective[e]]
            new = self._subjective(deficit, refill, existing)
            for e in refill:
                subjective[e] += _clamp(new[e], subjective[e], self.m - len(subjective[e]))
        return PromptSet(tuple(objective[: self.n]), {e: tuple(v[: self.m]) for e, v in subjective.items()},
                         prompts.version + 1)

    def refinement_loop(self, initial: PromptSet, fewshot: FewShotSet, iterations: int = 3) -> PromptSet:
        if iterations < 0:
            raise DataError("iterations must be >= 0")
        current = initial
        for r in range(1, iterations + 1):
            extracted = self.extract_for_refinement(current, fewshot)
            feedback = self.refine(extracted, fewshot, current, r)
            if feedback.all_keep():
                current = replace(current, version=current.version + 1)
                if self.on_round:
                    self.on_round(current, feedback)
                log.info("refinement reached a fixed point in round %d", r)
                break
            current = self.apply(current, feedback)
            if self.on_round:
                self.on_round(current, feedback)
        return current
