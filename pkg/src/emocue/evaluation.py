"""Per-emotion accuracy, balanced F1 with negative resampling, and report rendering."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from emocue.errors import DataError, InsufficientNegatives, MissingPrediction
from emocue.manifest import ManifestEntry
from emocue.taxonomy import SIX_BASIC, DatasetProfile, dataset_profile

log = logging.getLogger(__name__)

ROUNDS = 3
UNDEFINED = "--"
MICRO = "micro"
MACRO = "macro"

DISPLAY_NAMES = {"emotion6": "Emotion6", "emoset": "EmoSet", "m-disaster": "M-Disaster"}


@dataclass(frozen=True)
class PredictionRecord:
    image_digest: str
    dataset_id: str
    predicted: tuple[str, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"digest": self.image_digest, "dataset_id": self.dataset_id, "predicted": list(self.predicted),
                "provenance": dict(self.provenance)}

    @classmethod
    def from_json(cls, data: Mapping) -> "PredictionRecord":
        profile = dataset_profile(data["dataset_id"])
        labels = profile.emotion_set(data["predicted"]).labels
        return cls(data["digest"], profile.dataset_id, labels, data.get("provenance", {}))


def load_predictions(path: str | Path) -> dict[str, PredictionRecord]:
    out: dict[str, PredictionRecord] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    for line in lines:
        if line.strip():
            rec = PredictionRecord.from_json(json.loads(line))
            out.setdefault(rec.image_digest, rec)
    return out


Predictions = Mapping[str, "PredictionRecord | Iterable[str]"]


def _predicted(predictions: Predictions, entry: ManifestEntry) -> set[str]:
    try:
        p = predictions[entry.digest]
    except KeyError:
        raise MissingPrediction(f"no prediction for {entry.image}") from None
    return set(p.predicted if isinstance(p, PredictionRecord) else p)


def accuracy_counts(predictions: Predictions, entries: Sequence[ManifestEntry], emotion: str) -> tuple[int, int]:
    """(TP, Total) where Total counts entries whose ground truth holds ``emotion``."""
    preds = [_predicted(predictions, e) for e in entries]
    total = tp = 0
    for entry, pred in zip(entries, preds):
        if emotion in entry.ground_truth:
            total += 1
            tp += emotion in pred
    return tp, total


def accuracy_per_emotion(predictions: Predictions, entries: Sequence[ManifestEntry], emotion: str) -> float | None:
    """TP/Total for one emotion; None when no entry carries it."""
    tp, total = accuracy_counts(predictions, entries, emotion)
    return tp / total if total else None


def round_seed(base_seed: int, round_index: int) -> int:
    return base_seed * 1000 + round_index


def balanced_rounds(entries: Sequence[ManifestEntry], emotion: str, seed: int,
                    rounds: int = ROUNDS) -> list[tuple[list[ManifestEntry], list[ManifestEntry]]]:
    """For each round: all positives for ``emotion`` and as many sampled negatives."""
    positives = [e for e in entries if emotion in e.ground_truth]
    negatives = sorted((e for e in entries if emotion not in e.ground_truth), key=lambda e: e.digest)
    pos_count = len(positives)
    if len(negatives) < pos_count:
        raise InsufficientNegatives(f"{emotion}: {pos_count} positives but only {len(negatives)} negatives")
    out = []
    for r in range(rounds):
        rng = np.random.default_rng(round_seed(seed, r))
        picks = rng.choice(len(negatives), size=pos_count, replace=False)
        out.append((positives, [negatives[i] for i in picks]))
    return out


@dataclass(frozen=True)
class RoundCounts:
    tp: int
    fp: int
    fn: int
    total: int

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def balanced_f1(predictions: Predictions, entries: Sequence[ManifestEntry], emotion: str, seed: int,
                rounds: int = ROUNDS) -> tuple[tuple[float, ...], float, tuple[RoundCounts, ...]] | None:
    """Per-round F1 on balanced 2n sets, their mean, and the per-round counts.

    Returns None when no entry carries ``emotion``.
    """
    if not any(emotion in e.ground_truth for e in entries):
        return None
    counts = []
    for positives, negatives in balanced_rounds(entries, emotion, seed, rounds):
        tp = sum(emotion in _predicted(predictions, e) for e in positives)
        fp = sum(emotion in _predicted(predictions, e) for e in negatives)
        counts.append(RoundCounts(tp, fp, len(positives) - tp, 2 * len(positives)))
    scores = tuple(c.f1 for c in counts)
    return scores, float(np.mean(scores)), tuple(counts)


def overall_accuracy(predictions: Predictions, entries: Sequence[ManifestEntry],
                     vocabulary: Sequence[str] | None = None, mode: str = MICRO) -> float:
    if not entries:
        raise DataError("empty test split")
    if vocabulary is None:
        vocabulary = dataset_profile(entries[0].dataset_id).vocabulary
    pairs = [accuracy_counts(predictions, entries, e) for e in vocabulary]
    if mode == MICRO:
        total = sum(t for _, t in pairs)
        if not total:
            raise DataError("no labeled instances in test split")
        return sum(tp for tp, _ in pairs) / total
    if mode == MACRO:
        accs = [tp / t for tp, t in pairs if t]
        if not accs:
            raise DataError("no labeled instances in test split")
        return float(np.mean(accs))
    raise DataError(f"unknown accuracy mode {mode!r}")


@dataclass(frozen=True)
class EmotionMetrics:
    acc: float | None
    f1_rounds: tuple[float, ...] | None
    f1_mean: float | None
    tp: int
    total: int
    round_counts: tuple[RoundCounts, ...] = ()
    note: str = ""


@dataclass(frozen=True)
class EvalReport:
    dataset_id: str
    vocabulary: tuple[str, ...]
    per_emotion: Mapping[str, EmotionMetrics]
    overall_acc: float
    avg_f1: float | None
    seed: int
    round_seeds: tuple[int, ...]
    mode: str = MICRO
    provenance: Mapping[str, object] = field(default_factory=dict)

    def to_json(self) -> dict:
        per = {}
        for e, m in self.per_emotion.items():
            per[e] = {"acc": m.acc, "f1_rounds": None if m.f1_rounds is None else list(m.f1_rounds),
                      "f1_mean": m.f1_mean, "tp": m.tp, "total": m.total, "note": m.note,
                      "round_counts": [c.__dict__ for c in m.round_counts]}
        return {"dataset_id": self.dataset_id, "vocabulary": list(self.vocabulary), "per_emotion": per,
                "overall_acc": self.overall_acc, "avg_f1": self.avg_f1, "seed": self.seed,
                "round_seeds": list(self.round_seeds), "mode": self.mode, "provenance": dict(self.provenance)}

    @classmethod
    def from_json(cls, data: Mapping) -> "EvalReport":
        per = {}
        for e, m in data["per_emotion"].items():
            per[e] = EmotionMetrics(m["acc"], None if m["f1_rounds"] is None else tuple(m["f1_rounds"]),
                                    m["f1_mean"], m["tp"], m["total"],
                                    tuple(RoundCounts(**c) for c in m.get("round_counts", [])), m.get("note", ""))
        return cls(data["dataset_id"], tuple(data["vocabulary"]), per, data["overall_acc"], data["avg_f1"],
                   data["seed"], tuple(data["round_seeds"]), data.get("mode", MICRO), data.get("provenance", {}))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode("utf-8")).hexdigest()


def avg_f1(report: EvalReport | Mapping[str, float | None]) -> float | None:
    """Unweighted mean of the defined per-emotion F1 means."""
    if isinstance(report, EvalReport):
        values = [m.f1_mean for m in report.per_emotion.values()]
    else:
        values = list(report.values())
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def build_report(predictions: Predictions, entries: Sequence[ManifestEntry], profile: DatasetProfile, seed: int,
                 *, rounds: int = ROUNDS, mode: str = MICRO,
                 provenance: Mapping[str, object] | None = None) -> EvalReport:
    entries = [e for e in entries if e.dataset_id == profile.dataset_id]
    if not entries:
        raise DataError(f"no test entries for {profile.dataset_id}")
    per: dict[str, EmotionMetrics] = {}
    for emotion in profile.vocabulary:
        tp, total = accuracy_counts(predictions, entries, emotion)
        note = ""
        try:
            bf = balanced_f1(predictions, entries, emotion, seed, rounds)
        except InsufficientNegatives as exc:
            log.warning("%s: %s", profile.dataset_id, exc)
            bf, note = None, "insufficient negatives"
        per[emotion] = EmotionMetrics(
            tp / total if total else None,
            None if bf is None else bf[0],
            None if bf is None else bf[1],
            tp, total,
            () if bf is None else bf[2],
            note,
        )
    report = EvalReport(
        profile.dataset_id, profile.vocabulary, per,
        overall_accuracy(predictions, entries, profile.vocabulary, mode),
        None, seed, tuple(round_seed(seed, r) for r in range(rounds)), mode, dict(provenance or {}),
    )
    return EvalReport(**{**report.__dict__, "avg_f1": avg_f1(report)})


def _cell(value: float | None) -> str:
    return UNDEFINED if value is None else f"{value:.2f}"


def render_table(rows: Sequence[tuple[str, EvalReport]], columns: Sequence[str] | None = None) -> str:
    """Plain-text table: one Acc/F1 column pair per emotion, then Overall Acc and Avg-F1.

    Rows are grouped under a heading per dataset. Emotions outside a dataset's
    vocabulary, or with no annotated images, show "--".
    """
    if columns is None:
        columns = list(SIX_BASIC) + ["neutral"]
        for _, r in rows:
            columns += [v for v in r.vocabulary if v not in columns]
    method_w = max([len("Method")] + [len(m) for m, _ in rows])
    pair_w = 11
    head1 = ["Method".ljust(method_w)] + [c.capitalize().center(pair_w) for c in columns] + ["Overall".center(pair_w + 2)]
    head2 = ["".ljust(method_w)] + [f"{'Acc':>5} {'F1':>5}" for _ in columns] + [f"{'Acc':>5} {'Avg-F1':>7}"]
    width = len(" | ".join(head1))
    lines = [" | ".join(head1).rstrip(), " | ".join(head2).rstrip(), "-" * width]
    groups: dict[str, list[tuple[str, EvalReport]]] = {}
    for method, r in rows:
        groups.setdefault(r.dataset_id, []).append((method, r))
    for ds, members in groups.items():
        lines.append(DISPLAY_NAMES.get(ds, ds).center(width).rstrip())
        lines.append("-" * width)
        for method, r in members:
            cells = [method.ljust(method_w)]
            for c in columns:
                m = r.per_emotion.get(c)
                acc = m.acc if m else None
                f1 = m.f1_mean if m else None
                cells.append(f"{_cell(acc):>5} {_cell(f1):>5}")
            cells.append(f"{_cell(r.overall_acc):>5} {_cell(r.avg_f1):>7}")
            lines.append(" | ".join(cells).rstrip())
        lines.append("-" * width)
    return "\n".join(lines) + "\n"


def write_reports(reports: Sequence[EvalReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in reports], indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_reports(path: str | Path) -> list[EvalReport]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    return [EvalReport.from_json(d) for d in data]
