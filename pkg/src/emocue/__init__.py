"""Knowledge-enhanced visual emotion analysis engine."""

from emocue.taxonomy import (
    DatasetProfile,
    EmotionSet,
    VEC,
    VECCategory,
    canonical_categories,
    dataset_profile,
    parse_emotion_labels,
    seed_vecs,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetProfile",
    "EmotionSet",
    "VEC",
    "VECCategory",
    "canonical_categories",
    "dataset_profile",
    "parse_emotion_labels",
    "seed_vecs",
]
