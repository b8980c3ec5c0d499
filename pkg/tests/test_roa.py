import pytest

from emocue.errors import DataError, ParseFailure
from emocue.gateway import Embedding, Gateway, MockBackend, default_templates
from emocue.mer import EMPTY_RETRIEVAL, ConceptRecord, RetrievedConcepts, RetrievedItem, VECExtraction
from emocue.roa import ablation_reflect, reflect, render_judgment_prompt
from emocue.taxonomy import dataset_profile

T = default_templates()["i_p"]
E6 = dataset_profile("emotion6")
EMOSET = dataset_profile("emoset")

CUES = VECExtraction(("grey sky", "lonely figure"), "d" * 64, {"sadness": ("lonely figure",), "joy": ()})
CONCEPTS = RetrievedConcepts((RetrievedItem(ConceptRecord("c1", "grief", (), Embedding([1.0])), 0.734, 0.8, 0.6),), 10)


def gw(reply):
    replies = reply if isinstance(reply, list) else [reply]
    it = iter(replies)
    return Gateway(MockBackend(responder=lambda r, s: next(it)))


def test_reflect_parses(png):
    j = reflect(gw("sadness, fear"), T, CUES, CONCEPTS, png(), E6)
    assert j.emotions.labels == ("sadness", "fear")
    assert j.raw_reply == "sadness, fear"
    assert set(j.per_emotion_rationale) <= {"sadness", "fear"}


def test_neutral_fallback(png):
    assert reflect(gw("calm scene, nothing strong"), T, CUES, CONCEPTS, png(), E6).emotions.labels == ("neutral",)


def test_vocabulary_clamp(png):
    assert reflect(gw("sadness, maybe neutral"), T, CUES, CONCEPTS, png(), EMOSET).emotions.labels == ("sadness",)


def test_reprompt_then_fail_without_neutral(png):
    g = gw(["calm", "anger"])
    assert reflect(g, T, CUES, CONCEPTS, png(), EMOSET).emotions.labels == ("anger",)
    assert g.transcript.count(op="chat", purpose="i_p") == 2
    with pytest.raises(ParseFailure):
        reflect(gw(["calm", "still calm"]), T, CUES, CONCEPTS, png(), EMOSET)


def test_prompt_lists_vocabulary_and_scores():
    text = render_judgment_prompt(T, CUES, CONCEPTS, E6)
    assert ", ".join(E6.vocabulary) in text
    assert "- concept: grief [c1] (score 0.73)" in text
    assert "- grey sky" in text


def test_ablation_identity_and_no_mer(png):
    img = png()
    plain = reflect(gw("joy"), T, CUES, CONCEPTS, img, E6)
    assert ablation_reflect(gw("joy"), T, CUES, CONCEPTS, img, E6) == plain
    g = gw("joy")
    ablation_reflect(g, T, CUES, CONCEPTS, img, E6, {"no_mer"})
    sent = g.cache._mem[g.transcript.events[0]["digest"]]["request"]["user_text"]
    assert "- concept:" not in sent and "(none)" in sent
    assert render_judgment_prompt(T, CUES, EMPTY_RETRIEVAL, E6) == sent


def test_no_roa_skips_chat(png):
    g = gw("fear")
    cues = VECExtraction(("x",), "d", {"joy": ("smiles",), "fear": ()})
    j = ablation_reflect(g, T, cues, CONCEPTS, png(), E6, {"no_roa"})
    assert j.emotions.labels == ("joy",)
    assert g.transcript.count(op="chat") == 0
    empty = VECExtraction(("x",), "d", {"joy": ()})
    assert ablation_reflect(g, T, empty, CONCEPTS, png(), E6, {"no_roa"}).emotions.labels == ("neutral",)
    with pytest.raises(DataError):
        ablation_reflect(g, T, cues, CONCEPTS, png(), E6, {"bogus"})
