import hashlib
import json

import pytest

from emocue.errors import DataError, InsufficientNegatives, ManifestParseError, MissingPrediction, SplitLeakage
from emocue.evaluation import (
    EvalReport,
    PredictionRecord,
    accuracy_per_emotion,
    avg_f1,
    balanced_f1,
    balanced_rounds,
    build_report,
    load_predictions,
    overall_accuracy,
    read_reports,
    round_seed,
    write_reports,
)
from emocue.manifest import ManifestEntry, load_manifest
from emocue.taxonomy import dataset_profile

from conftest import make_png, write_manifest

E6 = dataset_profile("emotion6")


def entries(labels, dataset="emotion6"):
    prof = dataset_profile(dataset)
    return [ManifestEntry(f"i{i}.png", prof.emotion_set(l), dataset, "test",
                          hashlib.sha256(f"{dataset}{i}".encode()).hexdigest()) for i, l in enumerate(labels)]


def preds(es, labels):
    return {e.digest: l for e, l in zip(es, labels)}


def test_accuracy_examples():
    es = entries([["joy"]] * 4 + [["fear"]])
    p = preds(es, [["joy"], ["joy", "fear"], ["joy"], ["sadness"], ["fear"]])
    assert accuracy_per_emotion(p, es, "joy") == 0.75
    assert accuracy_per_emotion(p, es, "fear") == 1.0
    assert accuracy_per_emotion(p, es, "anger") is None
    with pytest.raises(MissingPrediction):
        accuracy_per_emotion({}, es, "joy")


def test_balanced_f1_examples():
    es = entries([["joy"]] * 3 + [["fear"]] * 5)
    perfect = preds(es, [[*e.ground_truth] for e in es])
    scores, mean, _ = balanced_f1(perfect, es, "joy", seed=1)
    assert scores == (1.0, 1.0, 1.0) and mean == 1.0
    never = preds(es, [["fear"]] * 8)
    assert balanced_f1(never, es, "joy", seed=1)[0] == (0.0, 0.0, 0.0)
    assert balanced_f1(perfect, es, "anger", seed=1) is None


def test_balanced_f1_hand_count():
    # 4 positives, 3 hit (FN=1); exactly 4 negatives so every round samples all of them, one a false positive
    es = entries([["joy"]] * 4 + [["fear"]] * 4)
    p = preds(es, [["joy"]] * 3 + [["fear"]] + [["joy"]] + [["fear"]] * 3)
    scores, mean, counts = balanced_f1(p, es, "joy", seed=0)
    assert (counts[0].tp, counts[0].fp, counts[0].fn, counts[0].total) == (3, 1, 1, 8)
    assert scores[0] == 6 / 8


def test_rounds_balanced_and_seeded():
    es = entries([["joy"]] * 3 + [["fear"]] * 6 + [["joy", "fear"]])
    rounds = balanced_rounds(es, "joy", seed=4)
    assert len(rounds) == 3
    for pos, neg in rounds:
        assert len(pos) == len(neg) == 4
        assert all("joy" not in e.ground_truth for e in neg)
        assert len({e.digest for e in neg}) == 4
    assert balanced_rounds(es, "joy", seed=4) == rounds
    assert round_seed(4, 2) == 4002
    with pytest.raises(InsufficientNegatives):
        balanced_rounds(entries([["joy"]] * 3 + [["fear"]]), "joy", 0)


def test_avg_f1():
    assert avg_f1({"a": 0.5, "b": 0.5}) == 0.5
    assert abs(avg_f1({"a": 0.2, "b": 0.4, "c": 0.6}) - 0.4) <= 1e-12
    assert avg_f1({"a": 0.2, "b": None}) == 0.2
    assert avg_f1({"a": None}) is None


def test_overall_accuracy():
    es = entries([["joy"]] * 4 + [["fear"]] * 4)
    p = preds(es, [["joy"]] * 3 + [["x"]] + [["fear"]] + [["x"]] * 3)
    assert overall_accuracy(p, es) == 0.5
    assert overall_accuracy(p, es, mode="macro") == 0.5
    single = entries([["joy"]] * 4)
    p1 = preds(single, [["joy"]] * 3 + [[]])
    assert overall_accuracy(p1, single) == accuracy_per_emotion(p1, single, "joy")
    with pytest.raises(DataError):
        overall_accuracy({}, [])
    uneven = entries([["joy"]] * 3 + [["fear"]])
    pu = preds(uneven, [["joy"]] * 3 + [[]])
    assert overall_accuracy(pu, uneven) == 0.75 and overall_accuracy(pu, uneven, mode="macro") == 0.5


def test_report_roundtrip_and_undefined(tmp_path):
    es = entries([["joy"]] * 2 + [["fear"]] * 3, "emoset")
    recs = {e.digest: PredictionRecord(e.digest, "emoset", tuple(e.ground_truth)) for e in es}
    r = build_report(recs, es, dataset_profile("emoset"), seed=3, provenance={"config_hash": "abc"})
    assert r.per_emotion["sadness"].acc is None and r.per_emotion["sadness"].f1_mean is None
    assert r.overall_acc == 1.0 and r.avg_f1 == 1.0 and r.round_seeds == (3000, 3001, 3002)
    for m in r.per_emotion.values():
        if m.f1_rounds:
            assert abs(m.f1_mean - sum(m.f1_rounds) / 3) <= 1e-12
    write_reports([r], tmp_path / "r.json")
    back = read_reports(tmp_path / "r.json")[0]
    assert back == r and back.digest() == r.digest()
    assert build_report(recs, es, dataset_profile("emoset"), seed=3,
                        provenance={"config_hash": "abc"}).digest() == r.digest()


def test_report_marks_insufficient_negatives():
    es = entries([["joy"]] * 3 + [["fear"]])
    p = preds(es, [["joy"]] * 4)
    r = build_report(p, es, E6, seed=0)
    assert r.per_emotion["joy"].f1_mean is None and r.per_emotion["joy"].note
    assert r.per_emotion["joy"].acc == 1.0


def test_load_predictions(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"digest": "d1", "dataset_id": "emotion6", "predicted": ["Fear", "joy"],
                                "provenance": {}}) + "\n")
    assert load_predictions(path)["d1"].predicted == ("joy", "fear")
    path.write_text(json.dumps({"digest": "d1", "dataset_id": "emotion6", "predicted": ["calm"]}) + "\n")
    with pytest.raises(DataError):
        load_predictions(path)


def test_manifest_validation(tmp_path):
    m = write_manifest(tmp_path, [{"labels": ["joy"], "split": "test"}, {"labels": "fear, anger", "split": "bdr"},
                                  {"labels": ["neutral"], "split": "fewshot"}])
    es = load_manifest(m)
    assert len(es) == 3 and es[1].ground_truth.labels == ("fear", "anger")

    m.write_text(json.dumps({"image": "img/000.png", "dataset_id": "emotion6", "split": "test"}) + "\n")
    with pytest.raises(ManifestParseError):
        load_manifest(m)

    make_png(tmp_path / "dup.png", 99)
    rows = [{"image": "dup.png", "labels": ["joy"], "dataset_id": "emotion6", "split": s} for s in ("fewshot", "test")]
    m.write_text("".join(json.dumps(r) + "\n" for r in rows))
    with pytest.raises(SplitLeakage):
        load_manifest(m)

    rows = [{"image": "img/000.png", "labels": ["neutral"], "dataset_id": "emoset", "split": "test"}]
    m.write_text("".join(json.dumps(r) + "\n" for r in rows))
    with pytest.raises(ManifestParseError):
        load_manifest(m)


def test_report_from_json_rejects_garbage(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(DataError):
        read_reports(tmp_path / "bad.json")
    assert isinstance(EvalReport.from_json(build_report(
        {e.digest: ["joy"] for e in entries([["joy"]])}, entries([["joy"]]), E6, 0).to_json()), EvalReport)
