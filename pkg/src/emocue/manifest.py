"""Dataset manifests and split-aware corpus sampling."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from emocue.errors import DataError, InsufficientData, ImageLoadError, ManifestParseError, SplitLeakage
from emocue.gateway import file_digest
from emocue.taxonomy import EmotionSet, dataset_profile

SPLITS = ("bdr", "fewshot", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    ground_truth: EmotionSet
    dataset_id: str
    split: str
    digest: str

    def to_json(self) -> dict:
        return {"image": self.image, "labels": list(self.ground_truth), "dataset_id": self.dataset_id,
                "split": self.split}


def _labels(raw) -> list[str]:
    if isinstance(raw, str):
        raw = raw.replace(";", ",").split(",")
    if not isinstance(raw, list):
        raise ManifestParseError(f"labels must be a list or comma string, got {type(raw).__name__}")
    return [str(x).strip().lower() for x in raw if str(x).strip()]


def check_disjoint(entries: Iterable[ManifestEntry]) -> None:
    """Raise SplitLeakage if one image digest shows up in more than one split."""
    seen: dict[str, ManifestEntry] = {}
    for e in entries:
        prev = seen.get(e.digest)
        if prev is None:
            seen[e.digest] = e
        elif prev.split != e.split:
            raise SplitLeakage(
                f"image {e.image} ({e.digest[:12]}) is in split {e.split!r} and in split {prev.split!r} "
                f"as {prev.image}"
            )
        else:
            raise ManifestParseError(f"duplicate image {e.image} in split {e.split!r}")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"{where}: {exc}") from exc
        if not isinstance(rec, dict):
            raise ManifestParseError(f"{where}: record must be an object")
        missing = [k for k in ("image", "labels", "dataset_id", "split") if k not in rec]
        if missing:
            raise ManifestParseError(f"{where}: missing fields {missing}")
        if rec["split"] not in SPLITS:
            raise ManifestParseError(f"{where}: split must be one of {SPLITS}")
        try:
            profile = dataset_profile(str(rec["dataset_id"]))
            labels = _labels(rec["labels"])
            if not labels:
                raise ManifestParseError(f"{where}: no labels")
            gt = profile.emotion_set(labels)
        except DataError as exc:
            if isinstance(exc, ManifestParseError):
                raise
            raise ManifestParseError(f"{where}: {exc}") from exc
        image = Path(rec["image"])
        if not image.is_absolute():
            image = path.parent / image
        try:
            digest = file_digest(image)
        except ImageLoadError as exc:
            raise ManifestParseError(f"{where}: {exc}") from exc
        entries.append(ManifestEntry(str(image), gt, profile.dataset_id, rec["split"], digest))
    check_disjoint(entries)
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json()) + "\n")


def split_entries(entries: Iterable[ManifestEntry], split: str) -> list[ManifestEntry]:
    return [e for e in entries if e.split == split]


def sample_corpus(
    entries: Sequence[ManifestEntry],
    split: str,
    per_emotion: int,
    seed: int,
    *,
    supplement_neutral: bool = True,
) -> list[ManifestEntry]:
    """Pick ``per_emotion`` distinct images per emotion per dataset from one split.

    Datasets whose profile lacks "neutral" borrow neutral images from other
    datasets in the same split that have it.
    """
    if per_emotion < 1:
        raise DataError(f"per_emotion must be >= 1, got {per_emotion}")
    pool = sorted(split_entries(entries, split), key=lambda e: (e.dataset_id, e.digest))
    datasets = sorted({e.dataset_id for e in pool})
    rng = np.random.default_rng(seed)
    chosen: list[ManifestEntry] = []
    taken: set[str] = set()

    def take(cands: list[ManifestEntry], what: str) -> None:
        if len(cands) < per_emotion:
            raise InsufficientData(f"{what}: need {per_emotion} images in split {split!r}, have {len(cands)}")
        for i in sorted(rng.choice(len(cands), size=per_emotion, replace=False)):
            chosen.append(cands[i])
            taken.add(cands[i].digest)

    for ds in datasets:
        for emotion in dataset_profile(ds).vocabulary:
            take([e for e in pool if e.dataset_id == ds and emotion in e.ground_truth and e.digest not in taken],
                 f"{ds}/{emotion}")
    # borrowed neutral images are drawn only after every dataset has its own quota
    donors = [e for e in pool if dataset_profile(e.dataset_id).includes_neutral and "neutral" in e.ground_truth]
    if supplement_neutral and donors:
        for ds in datasets:
            if not dataset_profile(ds).includes_neutral:
                take([e for e in donors if e.digest not in taken], f"{ds}/neutral (supplement)")
    return chosen


def label_counts(entries: Iterable[ManifestEntry]) -> Counter:
    return Counter(l for e in entries for l in e.ground_truth)
