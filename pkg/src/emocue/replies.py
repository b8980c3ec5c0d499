"""Turning free-form model replies into structures."""

from __future__ import annotations

import json
import re
from typing import Any, Callable, Mapping, Sequence, TypeVar

from emocue.errors import ParseFailure
from emocue.gateway import Gateway, InstructionTemplate, render
from emocue.gateway.templates import REPROMPT_SUFFIX

T = TypeVar("T")

_FENCE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)
_NONE_WORDS = {"none", "n/a", "na", "nothing", "no cues", "-", "null"}
_BULLET = re.compile(r"^\s*(?:[-*•]+|\d+[.)]|\(\d+\))\s*")


def extract_json(text: str) -> Any:
    """Decode the first fenced block, else the first bare JSON value in ``text``."""
    for block in _FENCE.findall(text or ""):
        try:
            return json.loads(block)
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for m in re.finditer(r"[\[{]", text or ""):
        try:
            value, _ = decoder.raw_decode(text, m.start())
            return value
        except json.JSONDecodeError:
            continue
    raise ParseFailure("no JSON value found in reply")


def dedupe_phrases(phrases: Sequence[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for p in phrases:
        p = " ".join(str(p).split())
        if p and p.lower() not in seen and p.lower() not in _NONE_WORDS:
            seen.add(p.lower())
            out.append(p)
    return out


def parse_phrases(text: str) -> list[str]:
    """Cue phrases from an extraction reply: a JSON list, or one phrase per line/comma."""
    text = (text or "").strip()
    if not text:
        return []
    try:
        value = extract_json(text)
        if isinstance(value, list):
            return dedupe_phrases([v for v in value if isinstance(v, str)])
    except ParseFailure:
        pass
    parts = []
    for line in text.splitlines():
        line = _BULLET.sub("", line).strip().strip("`")
        parts.extend(s.strip().strip(".\"'") for s in re.split(r"[;,]", line))
    return dedupe_phrases(parts)


def ask(
    gateway: Gateway,
    template: InstructionTemplate,
    bindings: Mapping[str, object],
    parse: Callable[[str], T],
    *,
    images: Sequence = (),
    purpose: str | None = None,
    reprompts: int = 1,
) -> tuple[T, str]:
    """Render, call, parse; on ParseFailure re-ask with the reason appended."""
    text = render(template, bindings)
    purpose = purpose or template.id
    reason = ""
    for attempt in range(reprompts + 1):
        user = text if attempt == 0 else text + REPROMPT_SUFFIX.format(reason=reason)
        reply = gateway.chat(gateway.request(user, images, purpose=purpose)).text
        try:
            return parse(reply), reply
        except ParseFailure as exc:
            reason = str(exc)
    raise ParseFailure(f"{purpose}: reply unusable after {reprompts} reprompt(s): {reason}")
