import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prefrec.errors import BackendError, DomainError, GenerationError, ProtocolError, TemplateError, ValidationError
from prefrec.textgen import (
    PS_JOINER,
    CachingBackend,
    GenerationConfig,
    GenerationRequest,
    MockExtractiveBackend,
    OpenAICompatibleBackend,
    PromptTemplate,
    Task,
    TemplateSet,
    TextKind,
    chunk_dialogue,
    generate_candidates,
    generate_rec_info,
    prompt_hash,
    render_prompt,
    summarize_dialogue,
)
from prefrec.textgen.templates import SLOT_RE

from .conftest import utt


def test_render_substitutes():
    t = PromptTemplate.from_body("p", "Summarize: {short_dialogue}")
    assert render_prompt(t, {"short_dialogue": "A: hi"}) == "Summarize: A: hi"


def test_render_missing_slot_names_it():
    t = PromptTemplate.from_body("p", "Summarize: {short_dialogue}")
    with pytest.raises(TemplateError) as info:
        render_prompt(t, {})
    assert info.value.slot == "short_dialogue"


def test_render_without_slots_is_identity():
    t = PromptTemplate.from_body("p", "no slots here")
    assert render_prompt(t, {}) == "no slots here"


def test_template_vars_must_match_slots():
    with pytest.raises(ValidationError):
        PromptTemplate("p", "{a} {b}", frozenset({"a"}))


def test_values_with_braces_are_not_reexpanded():
    t = PromptTemplate.from_body("p", "{x}|{y}")
    assert render_prompt(t, {"x": "{y}", "y": "1"}) == "{y}|1"


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.text(alphabet="xyz ", max_size=5),
                       min_size=3))
def test_render_leaves_no_slots(values):
    t = PromptTemplate.from_body("p", "[{a}] ({b}) {c}{a}")
    assert not SLOT_RE.search(render_prompt(t, values))


@pytest.mark.parametrize("corpus", ["tabidachi", "chatrec"])
def test_bundled_templates_load(corpus):
    ts = TemplateSet.load(corpus)
    assert ts.partial_summary.required_vars == {"short_dialogue"}
    assert ts.final_summary.required_vars == {"all_short_dialogue_summary"}
    assert ts.rec_info.required_vars == {"description"}
    assert ts.summary.required_vars == {"user", "dialogue"}


def test_template_override(tmp_path):
    (tmp_path / "rec_info.txt").write_text("Describe: {description}", encoding="utf-8")
    ts = TemplateSet.load("tabidachi", override_dir=tmp_path)
    assert ts.rec_info.body == "Describe: {description}"


def _history(n):
    return [utt("A" if i % 2 == 0 else "B", f"line {i}.") for i in range(n)]


def test_chunk_lengths():
    assert [len(c) for c in chunk_dialogue(_history(65), 30)] == [30, 30, 5]
    assert [len(c) for c in chunk_dialogue(_history(10), 30)] == [10]


def test_chunk_errors():
    with pytest.raises(DomainError):
        chunk_dialogue(_history(3), 0)
    with pytest.raises(DomainError):
        chunk_dialogue([], 5)


@given(n=st.integers(1, 200), size=st.integers(1, 50))
def test_chunk_flatten_property(n, size):
    hist = _history(n)
    chunks = chunk_dialogue(hist, size)
    assert [u for c in chunks for u in c] == hist
    assert len(chunks) == -(-n // size)
    assert all(len(c) == size for c in chunks[:-1])


def test_summarize_two_chunks():
    hist = [
        utt("A", "Hello, how can I help?"),
        utt("B", "I like onsen. The weather is nice."),
        utt("A", "Anything else?"),
        utt("B", "Maybe traveling alone."),
    ]
    backend = MockExtractiveBackend(extra_markers=("traveling",))
    partials, final = summarize_dialogue(hist, backend, GenerationConfig(chunk_size=2))
    assert [p.text for p in partials] == ["I like onsen", "Maybe traveling alone"]
    assert final.text == "I like onsen Maybe traveling alone"
    assert final.kind is TextKind.FINAL_SUMMARY
    assert all(p.kind is TextKind.PARTIAL_SUMMARY for p in partials)


def test_summarize_two_chunks_exact_phrases():
    hist = [utt("B", "I like onsen."), utt("B", "traveling alone.")]
    backend = MockExtractiveBackend(extra_markers=("traveling",))
    s = summarize_dialogue(hist, backend, GenerationConfig(chunk_size=1))
    assert [p.text for p in s.partials] == ["I like onsen", "traveling alone"]
    assert s.combined == PS_JOINER.join(["I like onsen", "traveling alone"])
    assert s.final.text == "I like onsen traveling alone"
    assert s.combined in s.final_prompt


def test_single_chunk_still_runs_final_pass():
    calls = []

    class Spy(MockExtractiveBackend):
        def generate(self, request):
            calls.append(request.task)
            return super().generate(request)

    summarize_dialogue([utt("B", "I want sushi.")], Spy(), GenerationConfig())
    assert calls == [Task.PARTIAL_SUMMARY, Task.FINAL_SUMMARY]


def test_operator_sentences_ignored_and_fallback():
    hist = [utt("A", "I like to help."), utt("B", "Okay.")]
    s = summarize_dialogue(hist, MockExtractiveBackend(), GenerationConfig())
    assert s.final.text == "No stated preferences."


def test_single_pass_mode():
    hist = [utt("A", "Hi."), utt("B", "We prefer quiet towns.")]
    s = summarize_dialogue(hist, MockExtractiveBackend(),
                           GenerationConfig(templates=TemplateSet.load("chatrec"), chunk_size=None))
    assert s.partials == []
    assert s.final.text == "We prefer quiet towns"


def test_summarize_empty_history():
    with pytest.raises(DomainError):
        summarize_dialogue([], MockExtractiveBackend(), GenerationConfig())


def test_summarize_deterministic():
    hist = [utt("B", "I like sea views. I want crab."), utt("A", "Sure."), utt("B", "I prefer inns.")]
    cfg = GenerationConfig(chunk_size=2, seed=4, temperature=0.8)
    a = summarize_dialogue(hist, MockExtractiveBackend(), cfg)
    b = summarize_dialogue(hist, MockExtractiveBackend(), cfg)
    assert a == b


class Broken:
    backend_id = "broken"

    def __init__(self, fail_on=None, text=""):
        self.fail_on = fail_on
        self.text = text

    def generate(self, request):
        if self.fail_on is None or request.task == self.fail_on:
            raise RuntimeError("boom")
        return "ok"


def test_backend_failure_carries_chunk_index():
    hist = _history(5)
    with pytest.raises(BackendError) as info:
        summarize_dialogue(hist, Broken(), GenerationConfig(chunk_size=2))
    assert info.value.index == 0
    with pytest.raises(BackendError) as info:
        summarize_dialogue(hist, Broken(fail_on=Task.FINAL_SUMMARY), GenerationConfig(chunk_size=2))
    assert info.value.index == 3


def test_empty_backend_output():
    class Empty:
        backend_id = "empty"

        def generate(self, request):
            return "   "

    with pytest.raises(GenerationError):
        summarize_dialogue(_history(2), Empty(), GenerationConfig())


def test_request_validation():
    with pytest.raises(DomainError):
        GenerationRequest("p", temperature=-0.1)
    with pytest.raises(DomainError):
        GenerationRequest("p", max_tokens=0)


def test_prompt_hash_stable():
    assert prompt_hash("abc") == prompt_hash("abc")
    assert prompt_hash("abc") != prompt_hash("abd")
    assert 0 <= prompt_hash("x") < 2**64


def _summary_request(text="B: I like a. I want b. I prefer c. I like d."):
    return GenerationRequest("prompt", temperature=0.8, task=Task.PARTIAL_SUMMARY,
                             variables={"short_dialogue": text})


def test_generate_candidates_seeds_and_determinism():
    backend = MockExtractiveBackend()
    a = generate_candidates(_summary_request(), 3, backend, base_seed=10)
    b = generate_candidates(_summary_request(), 3, backend, base_seed=10)
    assert [c.seed for c in a] == [10, 11, 12]
    assert [c.text for c in a] == [c.text for c in b]
    many = generate_candidates(_summary_request(), 8, backend, base_seed=0)
    assert len({c.text for c in many}) > 1


def test_generate_candidates_needs_two():
    with pytest.raises(DomainError):
        generate_candidates(_summary_request(), 1, MockExtractiveBackend(), 0)


def test_mock_is_pure_function_of_prompt_and_seed():
    backend = MockExtractiveBackend()
    req = _summary_request()
    assert backend.generate(req) == backend.generate(req)


def test_rec_info_mock_transform():
    out = generate_rec_info("Indoor dome. Events held.", MockExtractiveBackend(), GenerationConfig())
    assert out.text == "Indoor dome. Events held. Suitable for matching visitors."
    assert out.kind is TextKind.REC_INFO
    again = generate_rec_info("Indoor dome. Events held.", MockExtractiveBackend(), GenerationConfig())
    assert again == out


def test_rec_info_empty_description():
    with pytest.raises(DomainError):
        generate_rec_info("  ", MockExtractiveBackend(), GenerationConfig())


def _chat_response(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def test_remote_backend_payload_and_auth(monkeypatch):
    monkeypatch.setenv("PREFREC_API_KEY", "secret-token")
    seen = []

    def handler(request):
        seen.append((json.loads(request.content), request.headers.get("authorization")))
        return _chat_response(" summary text ")

    backend = OpenAICompatibleBackend(
        "http://llm.test/v1/chat/completions", "swallow-8b",
        client=httpx.Client(transport=httpx.MockTransport(handler)),
    )
    out = backend.generate(GenerationRequest("hello", seed=3, temperature=0.8, max_tokens=64))
    assert out == "summary text"
    body, auth = seen[0]
    assert body == {
        "model": "swallow-8b",
        "messages": [{"role": "user", "content": "hello"}],
        "temperature": 0.8,
        "seed": 3,
        "max_tokens": 64,
    }
    assert auth == "Bearer secret-token"


def test_remote_backend_retries_then_succeeds():
    statuses = iter([429, 500, 200])
    delays = []

    def handler(request):
        code = next(statuses)
        return _chat_response("fine") if code == 200 else httpx.Response(code)

    backend = OpenAICompatibleBackend(
        "http://llm.test", "m", api_key="", backoff=0.5, sleep=delays.append,
        client=httpx.Client(transport=httpx.MockTransport(handler)),
    )
    assert backend.generate(GenerationRequest("p")) == "fine"
    assert delays == [0.5, 1.0]


def test_remote_backend_gives_up():
    backend = OpenAICompatibleBackend(
        "http://llm.test", "m", api_key="", sleep=lambda s: None,
        client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503))),
    )
    with pytest.raises(BackendError):
        backend.generate(GenerationRequest("p"))


def test_remote_backend_bad_body():
    backend = OpenAICompatibleBackend(
        "http://llm.test", "m", api_key="",
        client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json={}))),
    )
    with pytest.raises(ProtocolError):
        backend.generate(GenerationRequest("p"))


def test_remote_timeout_on_candidate_two():
    def handler(request):
        if json.loads(request.content)["seed"] == 2:
            raise httpx.ReadTimeout("timed out", request=request)
        return _chat_response("text")

    backend = OpenAICompatibleBackend(
        "http://llm.test", "m", api_key="", sleep=lambda s: None,
        client=httpx.Client(transport=httpx.MockTransport(handler)),
    )
    with pytest.raises(BackendError) as info:
        generate_candidates(GenerationRequest("p", temperature=0.8), 4, backend, base_seed=0)
    assert info.value.index == 2


def test_parallel_generation_keeps_order():
    req = _summary_request()
    seq = generate_candidates(req, 6, MockExtractiveBackend(), 0, jobs=1)
    par = generate_candidates(req, 6, MockExtractiveBackend(), 0, jobs=4)
    assert seq == par


def test_caching_backend(tmp_path):
    calls = []

    class Counting(MockExtractiveBackend):
        def generate(self, request):
            calls.append(request.seed)
            return super().generate(request)

    path = tmp_path / "cache.jsonl"
    req = _summary_request()
    first = CachingBackend(Counting(), path).generate(req)
    second = CachingBackend(Counting(), path).generate(req)
    assert first == second
    assert calls == [0]
