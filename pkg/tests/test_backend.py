import json
import random
import threading

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrans.backend import (
    CompletionSpec,
    HttpBackend,
    MockBackend,
    Score,
    ScoreSpec,
    ServerError,
    TransportError,
    batch,
    prompt_digest,
)


def test_mock_completion_with_stop():
    mock = MockBackend(completions={"p": "Hello.\nMore"})
    out = mock.complete(CompletionSpec("p", 10, stop="\n"))
    assert (out.text, out.finish_reason) == ("Hello.", "stop")


def test_mock_completion_by_digest():
    mock = MockBackend(completions={prompt_digest("long prompt"): "ok"})
    assert mock.complete(CompletionSpec("long prompt", 5)).text == "ok"


def test_mock_truncates_to_length():
    out = MockBackend(completions={"p": "a b c d"}).complete(CompletionSpec("p", 2))
    assert (out.text, out.finish_reason) == ("a b", "length")


def test_mock_scores():
    mock = MockBackend(scores={("c", "Yes"): -1.0, ("c", "No"): -2.0}, default_logprob=-50.0)
    assert mock.score(ScoreSpec("c", "Yes")).total_logprob == -1.0
    assert mock.score(ScoreSpec("c", "Maybe")).total_logprob == -50.0


def test_specs_validate():
    with pytest.raises(ValueError):
        ScoreSpec("c", "")
    with pytest.raises(ValueError):
        CompletionSpec("p", 0)
    with pytest.raises(ValueError):
        CompletionSpec("p", 5, temperature=0.7)


def test_score_normalization():
    s = Score(-6.0, 3)
    assert s.normalized() == -6.0
    assert s.normalized("per_token") == -2.0
    with pytest.raises(ValueError):
        s.normalized("bogus")


def test_mock_from_file(tmp_path):
    path = tmp_path / "mock.json"
    path.write_text(json.dumps({"model": "m1", "completions": {"p": "x"}, "scores": [["c", " y", -3.5]]}))
    mock = MockBackend.from_file(path)
    assert mock.model_id == "m1"
    assert mock.score(ScoreSpec("c", " y")).total_logprob == -3.5


@settings(max_examples=100)
@given(st.text(), st.sampled_from(["\n", "\n\n", "###"]), st.integers(1, 20))
def test_stop_string_never_returned(text, stop, n):
    out = MockBackend(completions={"p": text}).complete(CompletionSpec("p", n, stop=stop))
    assert stop not in out.text


# --- wire protocol ------------------------------------------------------------


def _backend(handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return HttpBackend("http://model.test", "m", transport=httpx.MockTransport(handler), **kw)


def test_http_complete_payload():
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"text": "Hello.", "finish_reason": "stop"})

    out = _backend(handler).complete(CompletionSpec("p", 16, stop="\n"))
    assert out.text == "Hello."
    assert seen["path"] == "/v1/complete"
    assert seen["body"] == {"model": "m", "prompt": "p", "max_new_tokens": 16, "stop": "\n", "temperature": 0}


def test_http_strips_echoed_stop():
    handler = lambda r: httpx.Response(200, json={"text": "Hi.\nnext", "finish_reason": "stop"})
    assert _backend(handler).complete(CompletionSpec("p", 16, stop="\n")).text == "Hi."


def test_http_score():
    def handler(request):
        body = json.loads(request.content)
        assert request.url.path == "/v1/score"
        assert body == {"model": "m", "context": "c", "continuation": " Yes"}
        return httpx.Response(200, json={"total_logprob": -1.25, "token_count": 2})

    assert _backend(handler).score(ScoreSpec("c", " Yes")) == Score(-1.25, 2)


def test_http_retries_transport_errors_then_succeeds():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"total_logprob": -1.0, "token_count": 1})

    assert _backend(handler, sleep=sleeps.append).score(ScoreSpec("c", "x")).total_logprob == -1.0
    assert len(calls) == 3
    assert sleeps == [0.5, 1.0]


def test_http_gives_up_after_three_attempts():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("refused")

    with pytest.raises(TransportError) as info:
        _backend(handler).complete(CompletionSpec("p", 4))
    assert info.value.attempts == 3 and len(calls) == 3


def test_http_server_error_is_terminal():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, json={"error": "prompt too long"})

    with pytest.raises(ServerError, match="prompt too long"):
        _backend(handler).complete(CompletionSpec("p", 4))
    assert len(calls) == 1


@pytest.mark.parametrize(
    "body",
    [{"text": 3}, {"text": "x", "finish_reason": "eos"}, ["not", "an", "object"]],
)
def test_http_malformed_completion(body):
    handler = lambda r: httpx.Response(200, json=body)
    with pytest.raises(ServerError):
        _backend(handler).complete(CompletionSpec("p", 4))


def test_http_malformed_score():
    handler = lambda r: httpx.Response(200, json={"total_logprob": "nan?", "token_count": 1})
    with pytest.raises(ServerError):
        _backend(handler).score(ScoreSpec("c", "x"))


# --- batch --------------------------------------------------------------------


def test_batch_preserves_order():
    mock = MockBackend(scores={("c", str(i)): -float(i) for i in range(5)})
    out = batch(mock, [ScoreSpec("c", str(i)) for i in range(5)], parallelism=3)
    assert [s.total_logprob for s in out] == [0.0, -1.0, -2.0, -3.0, -4.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_batch_is_parallelism_independent(seed, parallelism):
    rng = random.Random(seed)
    delays = {str(i): rng.uniform(0, 0.002) for i in range(12)}
    mock = MockBackend(
        scores={("c", str(i)): rng.uniform(-10, 0) for i in range(12)},
        completions={str(i): f"out {i}" for i in range(12)},
        latency=lambda r: delays[getattr(r, "continuation", getattr(r, "prompt", "0"))],
    )
    reqs = [ScoreSpec("c", str(i)) if i % 2 else CompletionSpec(str(i), 5) for i in range(12)]
    assert batch(mock, reqs, parallelism) == batch(mock, reqs, 1)


def test_batch_error_aborts():
    class Flaky(MockBackend):
        def score(self, spec):
            if spec.continuation == "bad":
                raise ServerError("boom", 500)
            return super().score(spec)

    with pytest.raises(ServerError):
        batch(Flaky(), [ScoreSpec("c", x) for x in ["a", "bad", "b"]], parallelism=2)


def test_batch_rejects_bad_parallelism():
    with pytest.raises(ValueError):
        batch(MockBackend(), [], parallelism=0)


def test_mock_is_thread_safe_and_pure():
    mock = MockBackend(scores={("c", "x"): -2.0})
    results = []
    threads = [threading.Thread(target=lambda: results.append(mock.score(ScoreSpec("c", "x")))) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert set(results) == {Score(-2.0, 1)}
