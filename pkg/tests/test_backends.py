from __future__ import annotations

import json
import math
import os
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from scriptannot.backends import (
    EMPTY,
    FAILURE_KINDS,
    INCOMPLETE_JSON,
    TRUNCATED,
    AnnotationDraft,
    Completion,
    GenerationRequest,
    HttpBackend,
    HttpOptions,
    MockBackend,
    ModelHandle,
    ParseFailure,
    annotate,
    annotate_corpus,
    generate,
    load_template,
    make_backend,
    marker_verdict,
    mock_judge_verdict,
    parse_annotation_text,
    parse_judge_verdict,
    parse_pairwise_verdict,
    render_prompt,
    summary_for,
)
from scriptannot.errors import (
    InvalidField,
    MissingContent,
    ProtocolMissingLogprobs,
    Transport,
    UnboundPlaceholder,
    UnknownTemplate,
)

from conftest import annotator_handle, judge_handle, make_corpus, make_record


# -- value types ---------------------------------------------------------------


def test_generation_request_validation():
    GenerationRequest(prompt="p", temperature=0.0)
    GenerationRequest(prompt="p", temperature=2.0)
    with pytest.raises(InvalidField):
        GenerationRequest(prompt="p", temperature=2.1)
    with pytest.raises(InvalidField):
        GenerationRequest(prompt="p", temperature=0.5, max_output_tokens=0)


def test_completion_validation():
    Completion(text="x", label_token_logprob=-0.5)
    Completion(text="x", label_token_logprob=0.0)
    with pytest.raises(InvalidField):
        Completion(text="x", label_token_logprob=0.1)
    with pytest.raises(InvalidField):
        Completion(text="x", finish_reason="maybe")


def test_model_handle_validation():
    with pytest.raises(InvalidField):
        ModelHandle(identifier="", endpoint="mock:annotator", role="annotator")
    with pytest.raises(InvalidField):
        ModelHandle(identifier="m", endpoint="mock:annotator", role="referee")


def test_draft_probability_bounds():
    kwargs = dict(sha256="0" * 64, temperature=0.6, malicious=True, language="py", summary="s", raw_text="r")
    AnnotationDraft(label_probability=1.0, **kwargs)
    AnnotationDraft(label_probability=None, **kwargs)
    with pytest.raises(InvalidField):
        AnnotationDraft(label_probability=0.0, **kwargs)
    with pytest.raises(InvalidField):
        AnnotationDraft(label_probability=1.2, **kwargs)


# -- templates ------------------------------------------------------------------


def test_render_prompt_substitutes_placeholders():
    text = render_prompt("annotate_simple", {"content": "echo hi"})
    assert "echo hi" in text
    assert "{{" not in text


def test_render_prompt_unknown_template():
    with pytest.raises(UnknownTemplate):
        render_prompt("annotate_fancy", {})


def test_render_prompt_unbound_placeholder():
    with pytest.raises(UnboundPlaceholder) as err:
        render_prompt("annotate_simple", {})
    assert err.value.placeholder == "content"


def test_render_prompt_from_custom_directory(tmp_path):
    (tmp_path / "greeting.txt").write_text("hello {{name}} and {{name}}", encoding="utf-8")
    assert render_prompt("greeting", {"name": "world"}, tmp_path) == "hello world and world"
    with pytest.raises(UnknownTemplate):
        load_template("annotate_simple", tmp_path)


def test_all_shipped_templates_load():
    for name in ("annotate_simple", "annotate_detailed", "judge_coherence", "judge_pairwise"):
        assert load_template(name)


# -- parse trichotomy ------------------------------------------------------------

VALID_BODY = '{"malicious": true, "language": "py", "summary": "does things"}'


@pytest.mark.parametrize(
    "text,finish,expected",
    [
        ("", "stop", EMPTY),
        ("   \n\t", "stop", EMPTY),
        ("", "error", EMPTY),
        (VALID_BODY, "length", TRUNCATED),
        ('{"malicious": true, "language": "py", "summ', "stop", TRUNCATED),
        ("no structured output here", "stop", INCOMPLETE_JSON),
        ('{"malicious": true}', "stop", INCOMPLETE_JSON),
        ('{"malicious": "yes", "language": "py", "summary": "x"}', "stop", INCOMPLETE_JSON),
        ('{"malicious": true, "language": "perl", "summary": "x"}', "stop", INCOMPLETE_JSON),
        ('{"malicious": true, "language": "py", "summary": ""}', "stop", INCOMPLETE_JSON),
        ('{"malicious": true,, "language": "py", "summary": "x"}', "stop", INCOMPLETE_JSON),
    ],
)
def test_parse_annotation_failures(text, finish, expected):
    fields, kind, detail = parse_annotation_text(text, finish)
    assert fields is None
    assert kind == expected
    assert detail


def test_parse_annotation_success_with_preamble():
    fields, kind, _ = parse_annotation_text("Sure, here you go: " + VALID_BODY + " hope that helps")
    assert kind is None
    assert fields == {"malicious": True, "language": "py", "summary": "does things"}


def test_parse_annotation_handles_braces_inside_strings():
    body = '{"malicious": false, "language": "sh", "summary": "prints {\\"x\\": 1} to stdout"}'
    fields, kind, _ = parse_annotation_text(body)
    assert kind is None and fields["summary"] == 'prints {"x": 1} to stdout'


def test_parse_annotation_total_over_fuzzed_input():
    rng = random.Random(7)
    alphabet = '{}[]"\\:,truefalse malicious language summary py sh\n'
    for _ in range(2000):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 60)))
        fields, kind, _ = parse_annotation_text(text, rng.choice(("stop", "length", "error")))
        assert (fields is None) != (kind is None)
        if kind is not None:
            assert kind in FAILURE_KINDS


def test_parse_judge_verdict():
    assert parse_judge_verdict('{"malicious": true}') is True
    assert parse_judge_verdict('{"malicious": false}') is False
    assert parse_judge_verdict("This looks benign to me") is False
    assert parse_judge_verdict("Clearly malicious behavior") is True
    assert parse_judge_verdict("no idea") is None
    assert parse_judge_verdict("") is None


def test_parse_pairwise_verdict():
    assert parse_pairwise_verdict('{"winner": "A"}') == "A"
    assert parse_pairwise_verdict('{"winner": "b"}') == "B"
    assert parse_pairwise_verdict("B") == "B"
    assert parse_pairwise_verdict("The better summary is A .") == "A"
    assert parse_pairwise_verdict("both are fine") is None


# -- mock backend -----------------------------------------------------------------


def test_mock_completion_is_deterministic():
    model = annotator_handle(flip=0.2, empty=0.1, lowconf=0.3)
    backend = MockBackend()
    request = GenerationRequest(prompt="#mal=1\nscript body", temperature=0.6, seed=11)
    first = backend.complete(model, request)
    second = backend.complete(model, request)
    assert first == second
    # changing any key ingredient changes the stream somewhere
    other_seed = backend.complete(model, GenerationRequest(prompt="#mal=1\nscript body", temperature=0.6, seed=12))
    other_temp = backend.complete(model, GenerationRequest(prompt="#mal=1\nscript body", temperature=0.8, seed=11))
    assert other_seed != first or other_temp != first


def test_mock_empty_rate_one_yields_empty_stop():
    model = annotator_handle(empty=1.0)
    completion = MockBackend().complete(model, GenerationRequest(prompt="x", temperature=0.4))
    assert completion.text == ""
    assert completion.finish_reason == "stop"


def test_mock_respects_content_hints():
    backend = MockBackend()
    model = annotator_handle()  # no fault injection
    for mal in (0, 1):
        rec = make_record(f"hint-{mal}", language="bat", malicious=bool(mal))
        draft = annotate(backend, model, rec, 0.6, seed=5)
        assert isinstance(draft, AnnotationDraft)
        assert draft.malicious is bool(mal)
        assert draft.language == "bat"
        assert draft.label_probability is not None and draft.label_probability >= 0.93


def test_mock_label_flips_grow_with_temperature():
    backend = MockBackend()
    model = annotator_handle(flip=0.3)
    flips = {}
    for temp in (0.2, 1.6):
        count = 0
        for i in range(300):
            rec = make_record(f"fliptest-{i}", malicious=True)
            draft = annotate(backend, model, rec, temp, seed=1)
            assert isinstance(draft, AnnotationDraft)
            count += int(draft.malicious is False)
        flips[temp] = count
    assert flips[1.6] > flips[0.2] > 0


def test_mock_lowconf_injection_stays_under_point_nine():
    backend = MockBackend()
    model = annotator_handle(lowconf=1.0)
    rec = make_record("lowconf", malicious=False)
    draft = annotate(backend, model, rec, 0.6, seed=0)
    assert isinstance(draft, AnnotationDraft)
    assert 0.5 <= draft.label_probability < 0.9


def test_mock_summary_matches_label_and_judge_agrees():
    backend = MockBackend()
    model = annotator_handle()
    for i in range(40):
        rec = make_record(f"coh-{i}")
        draft = annotate(backend, model, rec, 0.6, seed=2)
        assert isinstance(draft, AnnotationDraft)
        assert marker_verdict(draft.summary) is draft.malicious


def test_mock_incoherent_injection_contradicts_label():
    backend = MockBackend()
    model = annotator_handle(incoherent=1.0)
    rec = make_record("incoh", malicious=True)
    draft = annotate(backend, model, rec, 0.6, seed=0)
    assert isinstance(draft, AnnotationDraft)
    assert marker_verdict(draft.summary) is not draft.malicious


def test_mock_judge_coherence_roundtrip():
    backend = MockBackend()
    judge = judge_handle()
    for malicious in (True, False):
        summary = summary_for(malicious, "roundtrip", malicious)
        prompt = render_prompt("judge_coherence", {"summary": summary})
        completion = backend.complete(judge, GenerationRequest(prompt=prompt, temperature=0.0))
        assert parse_judge_verdict(completion.text) is malicious


def test_mock_judge_fail_rate_yields_unparseable_verdicts():
    backend = MockBackend()
    judge = judge_handle(fail=1.0)
    prompt = render_prompt("judge_coherence", {"summary": summary_for(True, 1)})
    completion = backend.complete(judge, GenerationRequest(prompt=prompt, temperature=0.0))
    assert parse_judge_verdict(completion.text) is None
    # and the pure helper agrees
    assert mock_judge_verdict(summary_for(True, 1), fail=1.0, seed=0) is None


def test_mock_judge_pairwise_policies():
    backend = MockBackend()
    variables = {"script": "echo", "summary_a": "short", "summary_b": "a much longer summary text"}
    prompt = render_prompt("judge_pairwise", variables)
    first = backend.complete(judge_handle(policy="first"), GenerationRequest(prompt=prompt, temperature=0.0))
    assert parse_pairwise_verdict(first.text) == "A"
    longer = backend.complete(judge_handle(policy="longer"), GenerationRequest(prompt=prompt, temperature=0.0))
    assert parse_pairwise_verdict(longer.text) == "B"
    garbled = backend.complete(judge_handle(policy="first", garble=1.0), GenerationRequest(prompt=prompt, temperature=0.0))
    assert parse_pairwise_verdict(garbled.text) is None


# -- annotate and fan-out ------------------------------------------------------------


def test_annotate_requires_content():
    rec = make_record("nocontent", content=None)
    with pytest.raises(MissingContent):
        annotate(MockBackend(), annotator_handle(), rec, 0.6)


def test_annotate_probability_matches_logprob():
    backend = MockBackend()
    model = annotator_handle()
    rec = make_record("prob")
    completion = backend.complete(
        model,
        GenerationRequest(prompt=render_prompt("annotate_simple", {"content": rec.content}), temperature=0.6, seed=0),
    )
    draft = annotate(backend, model, rec, 0.6, seed=0)
    assert isinstance(draft, AnnotationDraft)
    assert draft.label_probability == pytest.approx(math.exp(completion.label_token_logprob))
    assert draft.raw_text == completion.text


def test_annotate_returns_parse_failures_not_exceptions():
    model = annotator_handle(empty=1.0)
    failure = annotate(MockBackend(), model, make_record("fail"), 0.6)
    assert isinstance(failure, ParseFailure)
    assert failure.kind == EMPTY


def test_annotate_corpus_is_order_deterministic_across_worker_counts():
    corpus = make_corpus(30)
    model = annotator_handle(flip=0.2, empty=0.1, truncated=0.05, malformed=0.05)
    temps = (0.4, 0.6, 0.8)
    serial = annotate_corpus(MockBackend(), model, corpus, temps, workers=1, seed=9)
    parallel = annotate_corpus(MockBackend(), model, corpus, temps, workers=8, seed=9)
    assert serial == parallel
    for temp in temps:
        annset = serial[temp]
        assert annset.input_count == len(corpus)
        assert list(annset.drafts) == [s for s in corpus.shas if s in annset.drafts]


def test_annotate_corpus_skip_and_callback():
    corpus = make_corpus(6)
    model = annotator_handle()
    skip = {(corpus.shas[0], 0.6), (corpus.shas[1], 0.6)}
    seen = []
    sets = annotate_corpus(
        MockBackend(), model, corpus, [0.6], workers=2, seed=0, skip=skip, on_result=lambda item: seen.append(item)
    )
    assert len(seen) == 4
    assert set(sets[0.6].drafts) | set(sets[0.6].failures) == set(corpus.shas[2:])


# -- HTTP backend ----------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    script: list[tuple[int, dict]] = []
    seen: list[dict] = []

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        type(self).seen.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        status, payload = type(self).script.pop(0) if type(self).script else (200, {})
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # silence
        pass


@pytest.fixture
def stub_server():
    _StubHandler.script = []
    _StubHandler.seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/completions", _StubHandler
    server.shutdown()
    thread.join(timeout=5)


def _completion_payload(text: str, with_logprobs: bool = True, finish: str = "stop") -> dict:
    choice: dict = {"text": text, "finish_reason": finish}
    if with_logprobs:
        offsets, tokens = [], []
        for i in range(0, len(text), 4):
            offsets.append(i)
            tokens.append(text[i : i + 4])
        choice["logprobs"] = {"tokens": tokens, "text_offset": offsets, "token_logprobs": [-0.25] * len(tokens)}
    return {"choices": [choice]}


def test_http_backend_success_extracts_logprobs(stub_server):
    url, handler = stub_server
    handler.script = [(200, _completion_payload(VALID_BODY))]
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    backend = HttpBackend(HttpOptions(max_retries=3), sleeper=lambda s: None)
    completion = backend.complete(model, GenerationRequest(prompt="p", temperature=0.5, seed=4))
    assert completion.text == VALID_BODY
    assert completion.label_token_logprob == -0.25
    assert completion.language_token_logprob == -0.25
    assert handler.seen[0]["body"]["model"] == "m"
    assert handler.seen[0]["body"]["seed"] == 4


def test_http_backend_retries_transient_then_succeeds(stub_server):
    url, handler = stub_server
    handler.script = [(500, {}), (429, {}), (200, _completion_payload(VALID_BODY))]
    delays = []
    backend = HttpBackend(HttpOptions(max_retries=3, backoff_base_ms=500), sleeper=delays.append)
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    completion = backend.complete(model, GenerationRequest(prompt="p", temperature=0.5))
    assert completion.text == VALID_BODY
    assert delays == [0.5, 1.0]  # exponential backoff from the 500ms base
    assert len(handler.seen) == 3


def test_http_backend_gives_up_after_max_retries(stub_server):
    url, handler = stub_server
    handler.script = [(503, {}), (503, {}), (503, {})]
    backend = HttpBackend(HttpOptions(max_retries=3), sleeper=lambda s: None)
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    with pytest.raises(Transport) as err:
        backend.complete(model, GenerationRequest(prompt="p", temperature=0.5))
    assert err.value.status == 503
    assert len(handler.seen) == 3


def test_http_backend_permanent_error_fails_fast(stub_server):
    url, handler = stub_server
    handler.script = [(400, {"error": "bad request"})]
    backend = HttpBackend(HttpOptions(max_retries=3), sleeper=lambda s: None)
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    with pytest.raises(Transport) as err:
        backend.complete(model, GenerationRequest(prompt="p", temperature=0.5))
    assert err.value.status == 400
    assert len(handler.seen) == 1


def test_http_backend_missing_logprobs_raises_protocol_error(stub_server):
    url, handler = stub_server
    handler.script = [(200, _completion_payload(VALID_BODY, with_logprobs=False))]
    backend = HttpBackend(HttpOptions(require_logprobs=True), sleeper=lambda s: None)
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    with pytest.raises(ProtocolMissingLogprobs):
        backend.complete(model, GenerationRequest(prompt="p", temperature=0.5))


def test_http_backend_judge_does_not_need_logprobs(stub_server):
    url, handler = stub_server
    handler.script = [(200, _completion_payload('{"malicious": true}', with_logprobs=False))]
    backend = HttpBackend(HttpOptions(require_logprobs=True), sleeper=lambda s: None)
    judge = ModelHandle(identifier="j", endpoint=url, role="judge")
    completion = backend.complete(judge, GenerationRequest(prompt="p", temperature=0.0))
    assert parse_judge_verdict(completion.text) is True


def test_http_backend_sends_bearer_token_from_env(stub_server, monkeypatch):
    url, handler = stub_server
    handler.script = [(200, _completion_payload(VALID_BODY))]
    monkeypatch.setenv("SCRIPTANNOT_TEST_TOKEN", "sekrit")
    backend = HttpBackend(HttpOptions(auth_token_env="SCRIPTANNOT_TEST_TOKEN"), sleeper=lambda s: None)
    model = ModelHandle(identifier="m", endpoint=url, role="annotator")
    backend.complete(model, GenerationRequest(prompt="p", temperature=0.5))
    assert handler.seen[0]["auth"] == "Bearer sekrit"


def test_make_backend_dispatch():
    assert isinstance(make_backend(annotator_handle()), MockBackend)
    assert isinstance(make_backend(ModelHandle(identifier="m", endpoint="http://example.invalid/v1", role="annotator")), HttpBackend)
    from scriptannot.errors import ConfigError

    with pytest.raises(ConfigError):
        make_backend(ModelHandle(identifier="m", endpoint="ftp://nope", role="annotator"))


def test_generate_uses_mock_for_mock_endpoints():
    completion = generate(annotator_handle(empty=1.0), GenerationRequest(prompt="x", temperature=0.4))
    assert completion.text == ""
