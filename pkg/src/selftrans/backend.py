"""Model backends: greedy completion and continuation log-probability scoring.

Two implementations share one duck-typed surface (``complete``, ``score``,
``model_id``): :class:`HttpBackend` speaks the JSON wire protocol and
:class:`MockBackend` answers from lookup tables.

Wire protocol::

    POST /v1/complete {model, prompt, max_new_tokens, stop, temperature: 0}
         -> {text, finish_reason}
    POST /v1/score    {model, context, continuation}
         -> {total_logprob, token_count}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence, Union

import httpx

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
BACKOFF_BASE = 0.5


class BackendError(RuntimeError):
    """Terminal backend failure."""


class TransportError(BackendError):
    """Transport failed on every allowed attempt."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class ServerError(BackendError):
    """The server answered with an error; never retried."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class CompletionSpec:
    prompt: str
    max_new_tokens: int
    stop: str | None = None
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature != 0:
            raise ValueError("only greedy decoding (temperature 0) is supported")


@dataclass(frozen=True)
class ScoreSpec:
    context: str
    continuation: str

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("continuation must be non-empty")


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: str  # "stop" | "length"


@dataclass(frozen=True)
class Score:
    total_logprob: float
    token_count: int

    def normalized(self, mode: str = "none") -> float:
        if mode == "none":
            return self.total_logprob
        if mode == "per_token":
            return self.total_logprob / self.token_count
        raise ValueError(f"unknown normalization {mode!r}; use 'none' or 'per_token'")


Request = Union[CompletionSpec, ScoreSpec]
Response = Union[Completion, Score]


class Backend(Protocol):
    model_id: str

    def complete(self, spec: CompletionSpec) -> Completion: ...

    def score(self, spec: ScoreSpec) -> Score: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


_TOKEN = re.compile(r"\S+\s*")


def _apply_stop_and_length(text: str, stop: str | None, max_new_tokens: int) -> Completion:
    # Mock tokens are whitespace-delimited words (with their trailing space).
    if stop:
        cut = text.find(stop)
        if cut >= 0:
            text = text[:cut]
    leading = text[: len(text) - len(text.lstrip())]
    tokens = _TOKEN.findall(text[len(leading):])
    if len(tokens) <= max_new_tokens:
        return Completion(text, "stop")
    return Completion((leading + "".join(tokens[:max_new_tokens])).rstrip(), "length")


@dataclass
class MockBackend:
    """Table-driven backend; a pure function of its tables and inputs.

    ``completions`` maps a prompt (or the SHA-256 hex digest of a prompt) to
    the canned greedy output. ``scores`` maps ``(context, continuation)`` to a
    total log-probability. ``latency`` optionally sleeps per call, to shake
    out ordering bugs in concurrent callers.
    """

    completions: Mapping[str, str] = field(default_factory=dict)
    scores: Mapping[tuple[str, str], float] = field(default_factory=dict)
    default_logprob: float = -100.0
    default_completion: str = ""
    model_id: str = "mock"
    latency: Callable[[Request], float] | None = None
    calls: list[Request] = field(default_factory=list, repr=False)

    def _sleep(self, req: Request) -> None:
        self.calls.append(req)
        if self.latency is not None:
            time.sleep(self.latency(req))

    def complete(self, spec: CompletionSpec) -> Completion:
        self._sleep(spec)
        text = self.completions.get(spec.prompt)
        if text is None:
            text = self.completions.get(prompt_digest(spec.prompt), self.default_completion)
        return _apply_stop_and_length(text, spec.stop, spec.max_new_tokens)

    def score(self, spec: ScoreSpec) -> Score:
        self._sleep(spec)
        lp = self.scores.get((spec.context, spec.continuation), self.default_logprob)
        return Score(float(lp), max(1, len(spec.continuation.split())))

    @property
    def completion_calls(self) -> int:
        return sum(isinstance(c, CompletionSpec) for c in self.calls)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Build from JSON ``{model, completions: {prompt: text},
        scores: [[context, continuation, logprob], ...], default_logprob, default_completion}``."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            completions=dict(raw.get("completions", {})),
            scores={(c, k): float(v) for c, k, v in raw.get("scores", [])},
            default_logprob=float(raw.get("default_logprob", -100.0)),
            default_completion=raw.get("default_completion", ""),
            model_id=raw.get("model", "mock"),
        )


class HttpClient:
    """JSON-over-HTTP POST with retries on transport failures only."""

    def __init__(
        self,
        url: str,
        *,
        retries: int = DEFAULT_RETRIES,
        backoff: float = BACKOFF_BASE,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 1:
            raise ValueError("retries must be >= 1")
        self.url = url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = self._client.post(self.url + path, json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.warning("POST %s failed (attempt %d/%d): %s", path, attempt, self.retries, exc)
                if attempt < self.retries:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code >= 400:
                try:
                    msg = resp.json().get("error", resp.text)
                except (ValueError, AttributeError):
                    msg = resp.text
                raise ServerError(f"POST {path} -> HTTP {resp.status_code}: {msg}", resp.status_code)
            try:
                body = resp.json()
            except ValueError:
                raise ServerError(f"POST {path} returned non-JSON body") from None
            if not isinstance(body, dict):
                raise ServerError(f"POST {path} returned a non-object body")
            return body
        raise TransportError(f"POST {self.url}{path} failed: {last}", self.retries)

    def close(self) -> None:
        self._client.close()


def _field(body: dict[str, Any], key: str, kind: type | tuple[type, ...]) -> Any:
    value = body.get(key)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ServerError(f"malformed response: {key!r} missing or wrong type")
    return value


class HttpBackend:
    def __init__(self, url: str, model: str, **client_kwargs: Any):
        self.model_id = model
        self.client = HttpClient(url, **client_kwargs)

    def complete(self, spec: CompletionSpec) -> Completion:
        body = self.client.post(
            "/v1/complete",
            {
                "model": self.model_id,
                "prompt": spec.prompt,
                "max_new_tokens": spec.max_new_tokens,
                "stop": spec.stop,
                "temperature": 0,
            },
        )
        text = _field(body, "text", str)
        reason = body.get("finish_reason", "stop")
        if reason not in ("stop", "length"):
            raise ServerError(f"malformed response: finish_reason {reason!r}")
        # Servers that echo the stop string would break stop exclusivity.
        if spec.stop and spec.stop in text:
            text = text[: text.index(spec.stop)]
        return Completion(text, reason)

    def score(self, spec: ScoreSpec) -> Score:
        body = self.client.post(
            "/v1/score",
            {"model": self.model_id, "context": spec.context, "continuation": spec.continuation},
        )
        lp = float(_field(body, "total_logprob", (int, float)))
        if not math.isfinite(lp):
            raise ServerError(f"non-finite log-probability {lp!r}")
        return Score(lp, int(_field(body, "token_count", int)))


def _dispatch(backend: Backend, req: Request) -> Response:
    if isinstance(req, CompletionSpec):
        return backend.complete(req)
    if isinstance(req, ScoreSpec):
        return backend.score(req)
    raise TypeError(f"unsupported request {type(req).__name__}")


def batch(backend: Backend, requests: Sequence[Request], parallelism: int = 1) -> list[Response]:
    """Run requests with bounded concurrency; results come back in request order.

    Any terminal error aborts the whole batch and nothing is returned.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1 or len(requests) <= 1:
        return [_dispatch(backend, r) for r in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(_dispatch, backend, r) for r in requests]
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for fut in done:
            exc = fut.exception()
            if exc is not None:
                for p in pending:
                    p.cancel()
                raise exc
        return [f.result() for f in futures]
