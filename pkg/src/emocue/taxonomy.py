"""Emotion vocabularies, cue categories and dataset profiles."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from emocue.errors import DataError, UnknownDataset

MAX_CUE_LENGTH = 120

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class VECCategory:
    index: int
    title: str


_CATEGORY_TITLES = (
    "Human and Animal Characters",
    "Scenery and Environment",
    "Artistic and Stylistic Elements",
    "Object Presence",
    "Action and Narrative",
    "Text Overlay and Graphic Elements",
)

_CATEGORIES = tuple(VECCategory(i + 1, t) for i, t in enumerate(_CATEGORY_TITLES))

# Typos in the published table ("Easpons", "Treatening Objects") are corrected here.
_SEED_TABLE = {
    1: ("Facial Expressions", "Body Language", "Archetypes", "Emotional Contagion", "Cuteness"),
    2: (
        "Lighting", "Perspective", "Ephemeral Elements", "Seasonal Depictions",
        "Time of Day", "Weather/Climate", "Nature/Urban",
    ),
    3: (
        "Color Palette", "Contrast", "Symmetry/Asymmetry", "Texture", "Depth of Field",
        "Sharpness/Blurriness", "Rule of Thirds", "Leading Lines", "Visual Weight",
        "Repetition/Patterns", "Framing", "Balance/Imbalance", "Gestalt Principles",
        "Stylization", "Brushwork/Texture", "Filters/Effects", "Artistic Medium",
    ),
    4: (
        "Objects", "Scale/Proportion", "Personal Items", "Machines", "Weapons",
        "Threatening Objects", "Technology", "Food and Drinks", "Cultural Objects",
    ),
    5: (
        "Motion Blur", "Juxtaposition", "Symbolism", "Historical References", "Metaphors",
        "Mythological Motifs", "Nostalgia", "Familiarity", "Novelty", "Holiday",
        "Subliminal Messaging", "Personal Memories", "Cultural Narratives",
        "Social Conditioning", "Political Context", "Cultural Appropriation",
        "Perceived Movement", "Perceived Authenticity",
    ),
    6: ("Inclusion of Text", "Iconography", "Captions", "Memes", "Hashtags", "Emojis/Emoticons"),
}


def normalize_phrase(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class VEC:
    phrase: str
    category: VECCategory
    polarity: str = POSITIVE

    def __post_init__(self):
        phrase = normalize_phrase(self.phrase)
        if not phrase:
            raise DataError("cue phrase is empty")
        if len(phrase) > MAX_CUE_LENGTH:
            raise DataError(f"cue phrase longer than {MAX_CUE_LENGTH} chars: {phrase[:40]}...")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise DataError(f"bad polarity {self.polarity!r}")
        object.__setattr__(self, "phrase", phrase)


def canonical_categories() -> list[VECCategory]:
    return list(_CATEGORIES)


def category(index: int) -> VECCategory:
    if not 1 <= index <= len(_CATEGORIES):
        raise DataError(f"category index out of range: {index}")
    return _CATEGORIES[index - 1]


def seed_vecs() -> list[VEC]:
    return [VEC(p, _CATEGORIES[i - 1]) for i, phrases in _SEED_TABLE.items() for p in phrases]


def _stem(token: str) -> str:
    return token[:-1] if len(token) > 3 and token.endswith("s") else token


def _tokens(text: str) -> set[str]:
    return {_stem(t) for t in re.findall(r"[a-z]+", text.lower()) if len(t) > 2}


_CATEGORY_VOCAB = {
    idx: _tokens(" ".join(phrases) + " " + _CATEGORY_TITLES[idx - 1])
    for idx, phrases in _SEED_TABLE.items()
}


def guess_category(phrase: str) -> VECCategory:
    """Assign a free-form cue to the category whose seed cues share most words with it.

    Falls back to "Action and Narrative" when nothing overlaps.
    """
    toks = _tokens(phrase)
    best, best_score = 5, 0
    for idx in sorted(_CATEGORY_VOCAB):
        score = len(toks & _CATEGORY_VOCAB[idx])
        if score > best_score:
            best, best_score = idx, score
    return _CATEGORIES[best - 1]


@dataclass(frozen=True)
class EmotionSet:
    """Ordered subset of a profile vocabulary.

    Members are kept in vocabulary order, so two sets with the same members
    always compare and render the same.
    """

    labels: tuple[str, ...]
    vocabulary: tuple[str, ...] = field(compare=False, repr=False)

    @classmethod
    def of(cls, labels: Iterable[str], vocabulary: Sequence[str]) -> "EmotionSet":
        vocab = tuple(vocabulary)
        wanted = {str(l).strip().lower() for l in labels}
        unknown = wanted.difference(vocab)
        if unknown:
            raise DataError(f"labels not in vocabulary: {sorted(unknown)}")
        return cls(tuple(v for v in vocab if v in wanted), vocab)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return isinstance(label, str) and label.lower() in self.labels

    def union(self, other: Iterable[str]) -> "EmotionSet":
        return EmotionSet.of([*self.labels, *other], self.vocabulary)

    def intersection(self, other: Iterable[str]) -> "EmotionSet":
        keep = set(other)
        return EmotionSet.of([l for l in self.labels if l in keep], self.vocabulary)

    def complement(self) -> "EmotionSet":
        return EmotionSet.of([v for v in self.vocabulary if v not in self.labels], self.vocabulary)

    def render(self) -> str:
        return ", ".join(self.labels)


@dataclass(frozen=True)
class DatasetProfile:
    dataset_id: str
    vocabulary: tuple[str, ...]
    includes_neutral: bool
    multi_label: bool = True

    def __post_init__(self):
        vocab = tuple(v.strip().lower() for v in self.vocabulary)
        if not vocab:
            raise DataError(f"profile {self.dataset_id!r} has an empty vocabulary")
        if len(set(vocab)) != len(vocab):
            raise DataError(f"profile {self.dataset_id!r} has duplicate labels")
        if ("neutral" in vocab) != self.includes_neutral:
            raise DataError(f"profile {self.dataset_id!r}: includes_neutral disagrees with vocabulary")
        object.__setattr__(self, "vocabulary", vocab)

    def emotion_set(self, labels: Iterable[str] = ()) -> EmotionSet:
        return EmotionSet.of(labels, self.vocabulary)

    @property
    def full_set(self) -> EmotionSet:
        return self.emotion_set(self.vocabulary)


SIX_BASIC = ("sadness", "joy", "fear", "disgust", "anger", "surprise")

_REGISTRY: dict[str, DatasetProfile] = {
    "emotion6": DatasetProfile("emotion6", SIX_BASIC + ("neutral",), True),
    "emoset": DatasetProfile("emoset", SIX_BASIC, False),
    "m-disaster": DatasetProfile("m-disaster", SIX_BASIC + ("neutral",), True),
}
_BUILTIN_IDS = frozenset(_REGISTRY)


def dataset_profile(dataset_id: str) -> DatasetProfile:
    try:
        return _REGISTRY[dataset_id.lower()]
    except KeyError:
        raise UnknownDataset(f"unknown dataset {dataset_id!r}") from None


def register_profile(profile: DatasetProfile) -> DatasetProfile:
    key = profile.dataset_id.lower()
    if key in _BUILTIN_IDS and _REGISTRY[key] != profile:
        raise DataError(f"cannot redefine built-in profile {key!r}")
    _REGISTRY[key] = profile
    return profile


def registered_ids() -> list[str]:
    return sorted(_REGISTRY)


def union_profile(profiles: Iterable[DatasetProfile], dataset_id: str = "union") -> DatasetProfile:
    """Profile whose vocabulary is the ordered union of several profiles."""
    vocab: list[str] = []
    for p in profiles:
        vocab.extend(v for v in p.vocabulary if v not in vocab)
    return DatasetProfile(dataset_id, tuple(vocab), "neutral" in vocab)


def parse_emotion_labels(text: str, profile: DatasetProfile) -> EmotionSet:
    """Pick out vocabulary labels that appear as whole words in ``text``."""
    found = [
        label
        for label in profile.vocabulary
        if re.search(rf"(?<![A-Za-z0-9_]){re.escape(label)}(?![A-Za-z0-9_])", text or "", re.IGNORECASE)
    ]
    return profile.emotion_set(found)
