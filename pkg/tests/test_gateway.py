import json
import shutil

import httpx
import numpy as np
import pytest

from emocue.errors import (
    BackendRefusal,
    BudgetExceeded,
    ConfigError,
    EmptyInput,
    ImageLoadError,
    MissingBinding,
    TransportError,
    ZeroVector,
)
from emocue.gateway import (
    ChatRequest,
    Gateway,
    HTTPBackend,
    InstructionTemplate,
    MockBackend,
    MockRule,
    ResponseCache,
    default_templates,
    load_templates,
    render,
)


def test_render_examples():
    t = InstructionTemplate("i_d", "Classify {cues}")
    assert render(t, {"cues": "Lighting"}) == "Classify Lighting"
    with pytest.raises(MissingBinding):
        render(t, {})
    # values go in verbatim; a placeholder-looking value is not expanded again
    assert render(t, {"cues": "{cues} {x}"}) == "Classify {cues} {x}"
    assert render(InstructionTemplate("x", "{{literal}} {a}"), {"a": 1}) == "{literal} 1"


def test_default_templates_cover_every_call():
    ts = default_templates()
    assert set(ts) == {"i_d", "i_rev", "i_o", "i_s", "i_ref", "i_p", "extract"}
    assert set(ts["i_p"].placeholders) == {"cues", "concepts", "vocabulary"}
    assert set(ts["i_rev"].placeholders) == {"evoked", "absent", "vocabulary"}


def test_template_overrides(tmp_path):
    ok = tmp_path / "t.yaml"
    ok.write_text("i_p: 'Judge. {cues} {concepts} {vocabulary}'\n")
    assert load_templates(ok)["i_p"].text.startswith("Judge.")
    bad = tmp_path / "bad.yaml"
    bad.write_text("i_p: 'Judge {nonsense}'\n")
    with pytest.raises(ConfigError):
        load_templates(bad)
    unknown = tmp_path / "u.yaml"
    unknown.write_text("i_zz: 'x'\n")
    with pytest.raises(ConfigError):
        load_templates(unknown)


def test_chat_mock_echo_and_cache(mock_gateway):
    gw = mock_gateway()
    req = gw.request("what emotion?")
    digest = gw.request_digest(req)
    gw.backend.rules = [MockRule("joy", digest=digest)]
    first = gw.chat(req)
    assert (first.text, first.cached) == ("joy", False)
    second = gw.chat(gw.request("what emotion?", purpose="other tag"))
    assert (second.text, second.cached) == ("joy", True)
    assert gw.backend_calls == 1
    assert len(gw.cache) == 1


def test_cache_key_sensitivity(mock_gateway, png):
    gw = mock_gateway()
    img = png()
    base = gw.request("x", [img])
    digests = {gw.request_digest(base)}
    for variant in (ChatRequest("other", "x", images=(img,)), ChatRequest("vlm", "y", images=(img,)),
                    ChatRequest("vlm", "x", images=(img,), temperature=0.5),
                    ChatRequest("vlm", "x", images=(img,), max_output_tokens=9),
                    ChatRequest("vlm", "x", "sys", images=(img,)), ChatRequest("vlm", "x")):
        digests.add(gw.request_digest(variant))
    assert len(digests) == 7


def test_call_cap(mock_gateway):
    gw = mock_gateway(call_cap=0)
    with pytest.raises(BudgetExceeded):
        gw.chat(gw.request("hi"))
    gw = mock_gateway(call_cap=1)
    gw.chat(gw.request("a"))
    gw.chat(gw.request("a"))  # cached hits are free
    with pytest.raises(BudgetExceeded):
        gw.chat(gw.request("b"))


class Flaky:
    kind = "mock"
    backend_id = "flaky"

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def chat(self, request, digest):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("connection reset")
        return "ok", {}


def test_retries_then_success_then_give_up():
    b = Flaky(2)
    gw = Gateway(b, max_retries=3, backoff=0.0)
    assert gw.chat(gw.request("q")).text == "ok"
    assert b.calls == 3
    assert len(gw.cache) == 1
    b = Flaky(10)
    gw = Gateway(b, max_retries=2, backoff=0.0)
    with pytest.raises(TransportError):
        gw.chat(gw.request("q"))
    assert b.calls == 3
    assert len(gw.cache) == 0


def test_embed_text(mock_gateway):
    gw = mock_gateway()
    a = gw.embed_text("dark sky")
    b = gw.embed_text("dark sky")
    assert abs(a.norm - 1.0) <= 1e-9 and a.modality == "text" and a.dim == 16
    assert a.values.tobytes() == b.values.tobytes()
    assert gw.backend_calls == 1
    with pytest.raises(EmptyInput):
        gw.embed_text("  ")


def test_embed_image_content_addressed(mock_gateway, png, tmp_path):
    gw = mock_gateway()
    src = png("a.png")
    copy = tmp_path / "elsewhere" / "b.png"
    copy.parent.mkdir()
    shutil.copy(src, copy)
    e1, e2 = gw.embed_image(src), gw.embed_image(copy)
    assert e1.modality == "image"
    assert e1.values.tobytes() == e2.values.tobytes()
    assert gw.backend_calls == 1
    assert gw.embed_image(png()).values.tobytes() != e1.values.tobytes()
    with pytest.raises(ImageLoadError):
        gw.embed_image(tmp_path / "missing.png")
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ImageLoadError):
        gw.embed_image(junk)


def test_zero_vector_rejected():
    class Zero(MockBackend):
        def embed_text(self, text, model_id):
            return [0.0] * 4

    with pytest.raises(ZeroVector):
        Gateway(Zero()).embed_text("x")


def test_disk_cache_layout_and_persistence(tmp_path):
    root = tmp_path / "cache"
    gw = Gateway(MockBackend(default="fine"), cache=ResponseCache(root))
    gw.chat(gw.request("hello"))
    files = list(root.glob("*/*.json"))
    assert len(files) == 1
    rec = json.loads(files[0].read_text())
    assert files[0].parent.name == rec["digest"][:2]
    assert rec["response"]["text"] == "fine" and rec["request"]["user_text"] == "hello"
    again = Gateway(MockBackend(default="changed"), cache=ResponseCache(root))
    r = again.chat(again.request("hello"))
    assert (r.text, r.cached) == ("fine", True)


def test_mock_script_rules(tmp_path):
    script = tmp_path / "m.yaml"
    script.write_text(
        "rules:\n"
        "  - {match: '^### Final', respond: 'fear'}\n"
        "  - {match: {regex: 'hello'}, respond: 'hi'}\n"
        "default: nothing\n"
        "embedding: {seed: 3, dim: 8}\n")
    gw = Gateway(MockBackend.from_script(script))
    assert gw.chat(gw.request("### Final judgment")).text == "fear"
    assert gw.chat(gw.request("say hello")).text == "hi"
    assert gw.chat(gw.request("other")).text == "nothing"
    assert gw.embed_text("a").dim == 8
    bad = tmp_path / "bad.yaml"
    bad.write_text("rules:\n  - {respond: x}\n")
    with pytest.raises(ConfigError):
        MockBackend.from_script(bad)


def _http(handler, monkeypatch=None):
    return HTTPBackend("http://vlm.test/v1", transport=httpx.MockTransport(handler))


def test_http_chat_wire_format(png, monkeypatch):
    monkeypatch.setenv("EMOCUE_API_KEY", "secret")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "joy  \n"}}],
                                         "usage": {"prompt_tokens": 5, "completion_tokens": 1}})

    gw = Gateway(_http(handler))
    resp = gw.chat(gw.request("judge", [png()], system_text="be terse"))
    assert resp.text == "joy"
    assert resp.usage == {"prompt_tokens": 5, "completion_tokens": 1}
    assert seen["url"] == "http://vlm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    body = seen["body"]
    assert body["temperature"] == 0.0 and body["max_tokens"] == 1024
    assert body["messages"][0] == {"role": "system", "content": "be terse"}
    parts = body["messages"][1]["content"]
    assert parts[0] == {"type": "text", "text": "judge"}
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_http_embeddings(png):
    def handler(request):
        body = json.loads(request.content)
        vec = [3.0, 4.0] if isinstance(body["input"], str) else [0.0, 2.0]
        return httpx.Response(200, json={"data": [{"embedding": vec}]})

    gw = Gateway(_http(handler))
    np.testing.assert_allclose(gw.embed_text("x").values, [0.6, 0.8])
    np.testing.assert_allclose(gw.embed_image(png()).values, [0.0, 1.0])


def test_http_errors():
    codes = iter([503, 429, 200])

    def handler(request):
        code = next(codes)
        if code != 200:
            return httpx.Response(code)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    gw = Gateway(_http(handler), backoff=0.0)
    assert gw.chat(gw.request("q")).text == "ok"

    gw = Gateway(_http(lambda r: httpx.Response(400, text="bad request")), backoff=0.0)
    with pytest.raises(BackendRefusal):
        gw.chat(gw.request("q"))

    def boom(request):
        raise httpx.ConnectError("refused")

    gw = Gateway(_http(boom), max_retries=1, backoff=0.0)
    with pytest.raises(TransportError):
        gw.chat(gw.request("q"))


def test_empty_request_rejected(mock_gateway):
    with pytest.raises(EmptyInput):
        mock_gateway().request("  ")
