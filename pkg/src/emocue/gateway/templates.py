"""Instruction templates for every model call in the pipeline."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import yaml

from emocue.errors import ConfigError, MissingBinding

_TOKEN = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class InstructionTemplate:
    id: str
    text: str

    @property
    def placeholders(self) -> list[str]:
        names = []
        for m in _TOKEN.finditer(self.text):
            if m.group(1) and m.group(1) not in names:
                names.append(m.group(1))
        return names


def render(template: InstructionTemplate, bindings: Mapping[str, object]) -> str:
    """Single-pass substitution. Bound values are inserted verbatim, braces included."""
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise MissingBinding(f"template {template.id}: unbound placeholders {missing}")

    def sub(m: re.Match) -> str:
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        return str(bindings[m.group(1)])

    return _TOKEN.sub(sub, template.text)


_DEFAULTS = {
    "i_d": """### Cue categorization
You are an expert in visual emotion analysis. Below are visual emotion cues proposed in the
literature and statistics from viewer surveys about what triggers their emotions.

Expert cues:
{cues}

Survey statistics (factor: share of respondents):
{survey}

Organize the most influential cues into these six orthogonal categories:
{categories}

Each cue must be a concise phrase and must appear under exactly one category.
Reply with a single fenced JSON block mapping category number to a list of cue phrases, e.g.
```json
{{"1": ["Facial Expressions"], "2": ["Lighting"], "3": [], "4": [], "5": [], "6": []}}
```""",
    "i_rev": """### Contrastive reasoning
Viewers of the attached image reported these emotions: {evoked}
They did NOT report these emotions: {absent}

Reason contrastively: which visual cues in the image support the reported emotions, and which
cues suppress the emotions that were not felt?
Reply with a single fenced JSON block holding a list of rules, e.g.
```json
[{{"emotion": "fear", "direction": "suppresses", "cue": "bright colors", "rationale": "..."}}]
```
"direction" is either "supports" or "suppresses". Use only emotions from: {vocabulary}""",
    "i_o": """### Objective prompt design
Using the categorized visual emotion cues and contrastive logic below, write up to {count}
objective description prompts. Each prompt asks a vision-language model to describe
emotion-relevant visual content of an image as short cue phrases, without naming emotions.

Categorized cues:
{cues}

Contrastive logic:
{logic}

Existing prompts (do not repeat them):
{existing}

Reply with a single fenced JSON block holding a list of prompt strings.""",
    "i_s": """### Subjective prompt design
Using the categorized visual emotion cues and contrastive logic below, write up to {count}
subjective elicitation prompts for EACH of these emotions: {emotions}
Each prompt asks a vision-language model to list the cue phrases in an image that would elicit
that emotion in a viewer, answering "none" when there are none.

Categorized cues:
{cues}

Contrastive logic:
{logic}

Existing prompts (do not repeat them):
{existing}

Reply with a single fenced JSON block mapping each emotion to a list of prompt strings.""",
    "i_ref": """### Prompt refinement
The prompts below were run on {fewshot_count} labeled example images. For each example you see
the descriptive cues extracted by the objective prompts, the elicitive cues extracted by the
subjective prompts, and the ground-truth emotions.

Prompts:
{prompts}

Examples:
{examples}

Judge how well each prompt's extractions align with the ground truth. Give every prompt id
exactly one verdict: "keep", "revise" (with a suggested replacement text) or "drop".
Reply with a single fenced JSON block, e.g.
```json
[{{"id": "o1", "verdict": "revise", "suggestion": "...", "rationale": "..."}}]
```""",
    "i_p": """### Final emotion judgment
Decide which emotions the attached image evokes strongly enough in viewers.

Visual emotion cues extracted from the image:
{cues}

Related emotion concepts from the knowledge graph (with relevance scores):
{concepts}

Weigh cues that support and cues that suppress each emotion. Allowed emotions:
{vocabulary}
Answer with the evoked emotions from the allowed list, comma separated.""",
    "extract": """### Cue extraction
{prompt}
Reply with a short list of concise cue phrases, one per line, or "none".""",
}

TEMPLATE_IDS = ("i_d", "i_rev", "i_o", "i_s", "i_ref", "i_p", "extract")

REPROMPT_SUFFIX = (
    "\n\nYour previous reply could not be used: {reason}\n"
    "Reply again, following the requested format exactly."
)


def default_templates() -> dict[str, InstructionTemplate]:
    return {k: InstructionTemplate(k, v) for k, v in _DEFAULTS.items()}


def load_templates(path: str | Path | None = None) -> dict[str, InstructionTemplate]:
    """Defaults, optionally overridden by a YAML mapping of template id to text."""
    templates = default_templates()
    if path is None:
        return templates
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read templates {path}: {exc}") from exc
    for key, text in data.items():
        if key not in TEMPLATE_IDS:
            raise ConfigError(f"unknown template id {key!r}")
        old = set(templates[key].placeholders)
        new = InstructionTemplate(key, str(text))
        if set(new.placeholders) - old:
            raise ConfigError(f"template {key} uses unknown placeholders {set(new.placeholders) - old}")
        templates[key] = new
    return templates
