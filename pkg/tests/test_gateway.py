import json
import os
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from rtlforge.cassette import CassetteEntry, append_entry, load_cassette, verify_cassette
from rtlforge.gateway import (
    AggregateFailure,
    AuthError,
    BackendError,
    CassetteRecorder,
    ChatMessage,
    HttpBackend,
    LlmRequest,
    LlmResponse,
    NamespacedBackend,
    RateLimitExhausted,
    ReplayBackend,
    ReplayMiss,
    RetryPolicy,
    SamplingParams,
    ShortResponse,
    TransientBackendError,
    complete,
    complete_fanout,
    request_digest,
    request_key,
)

FAST_RETRY = RetryPolicy(base_delay=0.001, factor=1.0, max_attempts=5)


def make_request(tag="rtl_gen/0", content="write a counter", n=1, **params):
    return LlmRequest(
        model_id="test-model",
        messages=(
            ChatMessage("system", "you are terse"),
            ChatMessage("user", content),
        ),
        params=SamplingParams(n_completions=n, **params),
        tag=tag,
    )


def record_entry(path, request, completions):
    digest = request_digest(request)
    append_entry(
        path,
        CassetteEntry(
            key=f"{request.tag}:{digest}",
            tag=request.tag,
            request_digest=digest,
            completions=tuple(completions),
            recorded_at="2026-01-01T00:00:00+00:00",
        ),
    )


class TestTypes:
    def test_empty_user_content_rejected(self):
        with pytest.raises(ValueError):
            ChatMessage("user", "")

    def test_system_only_at_position_zero(self):
        with pytest.raises(ValueError):
            LlmRequest(
                model_id="m",
                messages=(ChatMessage("user", "hi"), ChatMessage("system", "late")),
                params=SamplingParams(),
                tag="t",
            )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"temperature": 2.5},
            {"temperature": -0.1},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"n_completions": 0},
            {"n_completions": 65},
            {"max_tokens": 0},
        ],
    )
    def test_params_validation(self, kwargs):
        with pytest.raises(ValueError):
            SamplingParams(**kwargs)

    def test_empty_tag_rejected(self):
        with pytest.raises(ValueError):
            make_request(tag="")


class TestReplay:
    def test_replay_returns_recorded_entry(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        request = make_request(tag="rtl_gen/0")
        record_entry(cassette, request, ["module top_module(); endmodule"])
        backend = ReplayBackend(cassette)
        response = complete(request, backend)
        assert response.completions == ("module top_module(); endmodule",)

    def test_cardinality_contract(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        request = make_request(tag="sample", n=3)
        record_entry(cassette, request, ["a", "b", "c"])
        response = complete(request, ReplayBackend(cassette))
        assert response.completions == ("a", "b", "c")

    def test_short_entry_raises(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        request = make_request(tag="sample", n=3)
        record_entry(cassette, request, ["a", "b"])
        with pytest.raises(ShortResponse):
            complete(request, ReplayBackend(cassette))

    def test_miss_on_changed_prompt(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        record_entry(cassette, make_request(content="original prompt"), ["x"])
        backend = ReplayBackend(cassette)
        with pytest.raises(ReplayMiss):
            complete(make_request(content="edited prompt"), backend)

    def test_miss_on_changed_params(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        record_entry(cassette, make_request(temperature=0.0), ["x"])
        with pytest.raises(ReplayMiss):
            complete(make_request(temperature=0.85), ReplayBackend(cassette))

    def test_replay_deterministic_across_runs(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        requests = [make_request(tag=f"t/{i}", content=f"prompt {i}") for i in range(10)]
        for i, request in enumerate(requests):
            record_entry(cassette, request, [f"reply {i}"])

        def run():
            backend = ReplayBackend(cassette)
            return [complete(r, backend).completions for r in requests]

        assert run() == run()

    def test_model_id_excluded_from_key(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        request = make_request()
        record_entry(cassette, request, ["x"])
        renamed = LlmRequest(
            model_id="other-model",
            messages=request.messages,
            params=request.params,
            tag=request.tag,
        )
        assert complete(renamed, ReplayBackend(cassette)).completions == ("x",)


class _ScriptedTransport:
    """Minimal backend for gateway-level tests."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        outcome = self.outcomes.pop(0) if self.outcomes else self.outcomes
        if isinstance(outcome, Exception):
            raise outcome
        return LlmResponse(completions=tuple(outcome))


class TestRetry:
    def test_transient_then_success(self):
        backend = _ScriptedTransport(
            [TransientBackendError("429"), TransientBackendError("429"), ["ok"]]
        )
        response = complete(make_request(), backend, FAST_RETRY)
        assert response.attempts == 3
        assert response.completions == ("ok",)

    def test_exhaustion(self):
        backend = _ScriptedTransport([TransientBackendError("429")] * 10)
        with pytest.raises(RateLimitExhausted):
            complete(make_request(), backend, FAST_RETRY)
        assert backend.calls == FAST_RETRY.max_attempts

    def test_non_transient_not_retried(self):
        backend = _ScriptedTransport([BackendError("bad request"), ["never"]])
        with pytest.raises(BackendError):
            complete(make_request(), backend, FAST_RETRY)
        assert backend.calls == 1


class TestFanout:
    def test_degenerate_matches_complete(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        request = make_request(tag="solo", n=1)
        record_entry(cassette, request, ["only"])
        backend = ReplayBackend(cassette)
        assert (
            complete_fanout(request, backend, FAST_RETRY).completions
            == complete(request, backend, FAST_RETRY).completions
        )

    def test_counting_stub_returns_issue_order(self):
        lock = threading.Lock()
        counter = [0]

        class Counting:
            def complete(self, request):
                with lock:
                    value = counter[0]
                    counter[0] += 1
                return LlmResponse(completions=(str(value),))

        request = make_request(tag="fan", n=20)
        response = complete_fanout(request, Counting(), FAST_RETRY)
        assert len(response.completions) == 20
        assert sorted(int(c) for c in response.completions) == list(range(20))

    def test_subtags_are_indexed(self):
        seen = []

        class TagSpy:
            def complete(self, request):
                seen.append(request.tag)
                return LlmResponse(completions=("x",))

        complete_fanout(make_request(tag="fan", n=5), TagSpy(), FAST_RETRY)
        assert sorted(seen) == [f"fan.{i}" for i in range(5)]

    def test_partial_failure_names_index(self):
        class FailsAtThree:
            def complete(self, request):
                if request.tag.endswith(".3"):
                    raise BackendError("boom")
                return LlmResponse(completions=("x",))

        with pytest.raises(AggregateFailure) as err:
            complete_fanout(make_request(tag="fan", n=5), FailsAtThree(), FAST_RETRY)
        assert 3 in err.value.failures
        assert "3" in str(err.value)


class TestRecordReplay:
    def test_round_trip(self, tmp_path):
        cassette = tmp_path / "rec.jsonl"
        live = _ScriptedTransport([["alpha"], ["beta"]])
        recorder = CassetteRecorder(live, cassette)
        r1 = make_request(tag="a/0", content="first")
        r2 = make_request(tag="a/1", content="second")
        live_out = [complete(r1, recorder).completions, complete(r2, recorder).completions]
        replay = ReplayBackend(cassette)
        replay_out = [complete(r1, replay).completions, complete(r2, replay).completions]
        assert live_out == replay_out

    def test_namespacing_separates_runs(self, tmp_path):
        cassette = tmp_path / "rec.jsonl"
        request = make_request(tag="rtl_gen/init0")
        for run, text in enumerate(["first run", "second run"]):
            recorder = NamespacedBackend(
                CassetteRecorder(_ScriptedTransport([[text]]), cassette),
                f"task/run{run}/",
            )
            complete(request, recorder)
        for run, text in enumerate(["first run", "second run"]):
            replay = NamespacedBackend(ReplayBackend(cassette), f"task/run{run}/")
            assert complete(request, replay).completions == (text,)

    def test_recorder_skips_failed_calls(self, tmp_path):
        cassette = tmp_path / "rec.jsonl"
        recorder = CassetteRecorder(
            _ScriptedTransport([TransientBackendError("nope"), ["fine"]]), cassette
        )
        complete(make_request(), recorder, FAST_RETRY)
        assert len(load_cassette(cassette)) == 1


class TestKeying:
    @given(
        a=st.text(min_size=1, max_size=60),
        b=st.text(min_size=1, max_size=60),
    )
    def test_distinct_prompts_never_collide(self, a, b):
        ra, rb = make_request(content=a), make_request(content=b)
        if a != b:
            assert request_key(ra) != request_key(rb)
        else:
            assert request_key(ra) == request_key(rb)

    def test_tag_part_of_key(self):
        assert request_key(make_request(tag="x")) != request_key(make_request(tag="y"))


class TestCassetteVerify:
    def test_clean_cassette(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        record_entry(cassette, make_request(tag="a"), ["x"])
        record_entry(cassette, make_request(tag="b"), ["y"])
        assert verify_cassette(cassette) == []

    def test_bad_key_reported(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        append_entry(
            cassette,
            CassetteEntry(
                key="wrong", tag="t", request_digest="d", completions=("x",),
                recorded_at="now",
            ),
        )
        problems = verify_cassette(cassette)
        assert len(problems) == 1 and "does not match" in problems[0]

    def test_duplicates_reported(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        record_entry(cassette, make_request(tag="a"), ["x"])
        record_entry(cassette, make_request(tag="a"), ["y"])
        problems = verify_cassette(cassette)
        assert any("duplicate" in p for p in problems)

    def test_invalid_json_reported(self, tmp_path):
        cassette = tmp_path / "c.jsonl"
        cassette.write_text("not json\n", encoding="utf-8")
        assert any("invalid JSON" in p for p in verify_cassette(cassette))


# ---------------------------------------------------------------------------
# Live HTTP backend against a local stub endpoint


class _StubHandler(BaseHTTPRequestHandler):
    script = []
    requests = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        type(self).requests.append(
            {"body": body, "auth": self.headers.get("Authorization")}
        )
        code = type(self).script.pop(0) if type(self).script else 200
        if code != 200:
            self.send_response(code)
            self.end_headers()
            return
        n = body.get("n", 1)
        payload = {
            "choices": [
                {"index": i, "message": {"content": f"completion {i}"}} for i in range(n)
            ],
            "usage": {"prompt_tokens": 7, "completion_tokens": 13},
        }
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_endpoint():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.script = []
    _StubHandler.requests = []
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()


class TestHttpBackend:
    def test_missing_credential_env(self):
        os.environ.pop("RTLFORGE_TEST_KEY_MISSING", None)
        with pytest.raises(AuthError):
            HttpBackend("http://localhost:1", auth_env="RTLFORGE_TEST_KEY_MISSING")

    def test_429_twice_then_success(self, stub_endpoint, monkeypatch):
        monkeypatch.setenv("RTLFORGE_TEST_KEY", "sk-test")
        _StubHandler.script = [429, 429, 200]
        backend = HttpBackend(stub_endpoint, auth_env="RTLFORGE_TEST_KEY")
        response = complete(make_request(), backend, FAST_RETRY)
        assert response.attempts == 3
        assert response.completions == ("completion 0",)
        assert response.usage.prompt_tokens == 7

    def test_auth_rejected(self, stub_endpoint, monkeypatch):
        monkeypatch.setenv("RTLFORGE_TEST_KEY", "sk-test")
        _StubHandler.script = [401]
        backend = HttpBackend(stub_endpoint, auth_env="RTLFORGE_TEST_KEY")
        with pytest.raises(AuthError):
            complete(make_request(), backend, FAST_RETRY)

    def test_wire_shape(self, stub_endpoint, monkeypatch):
        monkeypatch.setenv("RTLFORGE_TEST_KEY", "sk-test")
        backend = HttpBackend(stub_endpoint, auth_env="RTLFORGE_TEST_KEY")
        complete(make_request(n=2, temperature=0.85, top_p=0.95), backend, FAST_RETRY)
        sent = _StubHandler.requests[-1]
        assert sent["auth"] == "Bearer sk-test"
        body = sent["body"]
        assert body["model"] == "test-model"
        assert body["temperature"] == 0.85
        assert body["top_p"] == 0.95
        assert body["n"] == 2
        assert body["messages"][0]["role"] == "system"
