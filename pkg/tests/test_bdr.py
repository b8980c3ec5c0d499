import json

import pytest

from emocue.bdr import (
    SUPPRESSES,
    ContrastiveLogic,
    StructuredVECSet,
    aggregate_logic,
    build_reverse_corpus,
    direct_informing,
    load_expert_cues,
    load_survey,
    parse_logic,
    parse_structured_vecs,
    reverse_reasoning,
)
from emocue.errors import DataError, InsufficientData, ParseFailure
from emocue.gateway import default_templates
from emocue.manifest import load_manifest
from emocue.taxonomy import NEGATIVE, category, dataset_profile

from conftest import write_manifest

T = default_templates()
E6 = dataset_profile("emotion6")


def fenced(data):
    return "```json\n" + json.dumps(data) + "\n```"


def test_bundled_inputs():
    cues = load_expert_cues()
    assert any(c.phrase == "Lighting" for c in cues.cues)
    survey = load_survey()
    top = max(survey.entries, key=lambda e: e.share)
    assert top.share == 0.8 and "background" in top.factor
    assert all(0 <= e.share <= 1 and e.respondents > 0 for e in survey.entries)


def test_survey_validation(tmp_path):
    bad = tmp_path / "s.tsv"
    bad.write_text("scenes\t1.5\t10\n")
    with pytest.raises(DataError):
        load_survey([bad])
    bad.write_text("scenes\t0.5\t0\n")
    with pytest.raises(DataError):
        load_survey([bad])


def test_direct_informing_places_lighting(mock_gateway):
    gw = mock_gateway(default=fenced({"2": ["Lighting"], "1": [], "3": [], "4": [], "5": [], "6": []}))
    c = direct_informing(gw, T["i_d"], load_expert_cues(), load_survey())
    assert [v.phrase for v in c.by_category[2]] == ["Lighting"]
    assert c.by_category[2][0].category.title == "Scenery and Environment"
    assert sorted(c.by_category) == [1, 2, 3, 4, 5, 6]
    assert gw.transcript.count(op="chat", purpose="i_d") == 1


def test_empty_category_is_kept_empty():
    c = parse_structured_vecs(fenced({str(i): [f"cue {i}"] for i in range(1, 6)} | {"6": []}))
    assert list(c.by_category[6]) == []


def test_first_occurrence_wins():
    reply = fenced({"1": ["Gestures", "Smile"], "2": ["gestures", "Lighting"], "3": [], "4": [], "5": [], "6": []})
    c = parse_structured_vecs(reply)
    # oracle: scan categories in reply order, keep a phrase the first time it is seen
    seen, expected = set(), {}
    for key, phrases in json.loads(reply.split("\n")[1]).items():
        for p in phrases:
            if p.lower() not in seen:
                seen.add(p.lower())
                expected.setdefault(int(key), []).append(p)
    for idx in range(1, 7):
        assert [v.phrase for v in c.by_category[idx]] == expected.get(idx, [])


def test_omitted_category_falls_back_to_seed():
    c = parse_structured_vecs(fenced({"1": ["Smile"], "category 2": ["Fog"]}))
    assert "Inclusion of Text" in [v.phrase for v in c.by_category[6]]
    assert c == StructuredVECSet.from_json(c.to_json())


def test_direct_informing_reprompts_then_fails(mock_gateway):
    gw = mock_gateway(default="I cannot do that.")
    with pytest.raises(ParseFailure):
        direct_informing(gw, T["i_d"], load_expert_cues(), load_survey())
    assert gw.transcript.count(op="chat") == 2


def test_structured_set_invariants():
    from emocue.taxonomy import VEC
    with pytest.raises(DataError):
        StructuredVECSet({i: [] for i in range(1, 6)})
    with pytest.raises(DataError):
        StructuredVECSet({i: [VEC("x", category(1))] if i == 2 else [] for i in range(1, 7)})


def test_reverse_reasoning_complement(mock_gateway, png):
    gw = mock_gateway(default="bright colors suppress fear")
    logic = reverse_reasoning(gw, T["i_rev"], E6.emotion_set(["joy"]), png(), E6)
    assert len(logic.rules) == 1
    r = logic.rules[0]
    assert (r.emotion, r.direction, r.cue.phrase) == ("fear", SUPPRESSES, "bright colors")
    assert r.cue.polarity == NEGATIVE
    # the prompt lists the six absent emotions
    req = gw.cache._mem[gw.transcript.events[0]["digest"]]["request"]["user_text"]
    absent_line = next(l for l in req.splitlines() if l.startswith("They did NOT"))
    assert absent_line.endswith("sadness, fear, disgust, anger, surprise, neutral")


def test_reverse_reasoning_full_vocabulary_allows_supports_only(mock_gateway, png):
    gw = mock_gateway(default=fenced([{"emotion": "joy", "direction": "supports", "cue": "smiles"}]))
    logic = reverse_reasoning(gw, T["i_rev"], E6.full_set, png(), E6)
    assert [r.direction for r in logic.rules] == ["supports"]
    assert gw.transcript.count(op="chat") == 1


def test_reverse_reasoning_reprompts_for_missing_suppress_rule(mock_gateway, png):
    gw = mock_gateway(default=fenced([{"emotion": "joy", "direction": "supports", "cue": "smiles"},
                                      {"emotion": "melancholy", "direction": "suppresses", "cue": "x"}]))
    logic = reverse_reasoning(gw, T["i_rev"], E6.emotion_set(["joy"]), png(), E6)
    assert gw.transcript.count(op="chat") == 2
    assert [r.emotion for r in logic.rules] == ["joy"]  # out-of-vocabulary emotion dropped


def test_aggregate_is_order_independent():
    a = parse_logic("bright colors suppress fear\nrain evokes sadness", E6)
    b = parse_logic(fenced([{"emotion": "fear", "direction": "suppresses", "cue": "Bright Colors"},
                            {"emotion": "joy", "direction": "suppresses", "cue": "dark sky"}]), E6)
    ab, ba = aggregate_logic([a, b]), aggregate_logic([b, a])
    assert ab.to_json() == ba.to_json()
    assert len(ab.rules) == 3
    assert ContrastiveLogic.from_json(ab.to_json()).to_json() == ab.to_json()


def test_reverse_corpus(tmp_path):
    rows = [{"labels": [e], "split": "bdr"} for e in E6.vocabulary for _ in range(3)]
    rows += [{"labels": ["joy"], "split": "test"}]
    entries = load_manifest(write_manifest(tmp_path, rows))
    picked = build_reverse_corpus(entries, 2, seed=5)
    assert len(picked) == 14
    assert picked == build_reverse_corpus(entries, 2, seed=5)
    test_images = {e.image for e in entries if e.split == "test"}
    assert not test_images & {img for img, _ in picked}
    with pytest.raises(DataError):
        build_reverse_corpus(entries, 0, seed=5)
    with pytest.raises(InsufficientData):
        build_reverse_corpus(entries, 4, seed=5)


def test_reverse_corpus_full_scale(tmp_path):
    rows = []
    for ds in ("emotion6", "emoset", "m-disaster"):
        vocab = dataset_profile(ds).vocabulary
        rows += [{"labels": [e], "split": "bdr", "dataset_id": ds} for e in vocab for _ in range(5)]
    rows += [{"labels": ["neutral"], "split": "bdr", "dataset_id": "emotion6"} for _ in range(5)]
    # neutral for emoset is supplemented from a dataset that has it
    picked = build_reverse_corpus(load_manifest(write_manifest(tmp_path, rows)), 5, seed=0)
    assert len(picked) == 105
    assert len({img for img, _ in picked}) == 105
