"""Final arousal judgment over extracted cues and retrieved concepts."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import AbstractSet, Mapping

from emocue.errors import DataError, ParseFailure
from emocue.gateway import Gateway, InstructionTemplate, render
from emocue.mer import EMPTY_RETRIEVAL, RetrievedConcepts, VECExtraction
from emocue.taxonomy import DatasetProfile, EmotionSet, parse_emotion_labels

log = logging.getLogger(__name__)

NO_MER = "no_mer"
NO_ROA = "no_roa"
NO_SVE = "no_sve"
NO_MM = "no_mm"
TOGGLES = frozenset({NO_MER, NO_SVE, NO_MM, NO_ROA})

_DEMAND = "\n\nYour previous answer named none of the allowed emotions. Name at least one of: {vocabulary}"


@dataclass(frozen=True)
class ArousalJudgment:
    emotions: EmotionSet
    per_emotion_rationale: Mapping[str, str] = field(default_factory=dict)
    raw_reply: str = ""


def _rationales(reply: str, emotions: EmotionSet) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in reply.splitlines():
        for e in emotions:
            if e not in out and re.search(rf"(?<![A-Za-z]){re.escape(e)}(?![A-Za-z])", line, re.IGNORECASE):
                out[e] = line.strip()
    return out


def render_judgment_prompt(template: InstructionTemplate, cues: VECExtraction | None,
                           concepts: RetrievedConcepts, profile: DatasetProfile) -> str:
    phrases = list(cues.phrases) if cues is not None else []
    return render(template, {
        "cues": "\n".join(f"- {p}" for p in phrases) or "(none)",
        "concepts": concepts.render(),
        "vocabulary": ", ".join(profile.vocabulary),
    })


def reflect(gateway: Gateway, template: InstructionTemplate, cues: VECExtraction | None,
            concepts: RetrievedConcepts, image, profile: DatasetProfile) -> ArousalJudgment:
    text = render_judgment_prompt(template, cues, concepts, profile)
    reply = gateway.chat(gateway.request(text, [image], purpose="i_p")).text
    found = parse_emotion_labels(reply, profile)
    if not len(found):
        if profile.includes_neutral:
            found = profile.emotion_set(["neutral"])
        else:
            reply = gateway.chat(gateway.request(
                text + _DEMAND.format(vocabulary=", ".join(profile.vocabulary)), [image], purpose="i_p")).text
            found = parse_emotion_labels(reply, profile)
            if not len(found):
                raise ParseFailure("final judgment named no allowed emotion after reprompt")
    return ArousalJudgment(found, _rationales(reply, found), reply)


def ablation_reflect(gateway: Gateway, template: InstructionTemplate, cues: VECExtraction | None,
                     concepts: RetrievedConcepts | None, image, profile: DatasetProfile,
                     toggles: AbstractSet[str] = frozenset()) -> ArousalJudgment:
    """``reflect`` with the retrieval or the judgment step switched off.

    no_mer drops the concepts from the prompt. no_roa skips the model call and
    answers with every emotion whose subjective prompts extracted something.
    """
    unknown = set(toggles) - TOGGLES
    if unknown:
        raise DataError(f"unknown ablation toggles {sorted(unknown)}")
    if NO_MER in toggles or concepts is None:
        concepts = EMPTY_RETRIEVAL
    if NO_ROA in toggles:
        hits = cues.elicited_emotions() if cues is not None else []
        emotions = profile.emotion_set([h for h in hits if h in profile.vocabulary])
        if not len(emotions) and profile.includes_neutral:
            emotions = profile.emotion_set(["neutral"])
        rationale = {e: "; ".join(cues.elicitive[e]) for e in emotions if cues and e in cues.elicitive}
        return ArousalJudgment(emotions, rationale, "")
    return reflect(gateway, template, cues, concepts, image, profile)
