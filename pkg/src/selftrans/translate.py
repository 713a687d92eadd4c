"""Translate instance fields into English and cache the results.

Three translators: ``identity`` (English inputs and test harnesses),
``self_model`` (few-shot prompting of the evaluated model) and
``external_mt`` (a separate MT system behind ``/v1/translate``).
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from . import backend as be
from .data import LanguageTag, ParallelSentencePair, TaskInstance, language, task_schema
from .prompting import build_translation_prompt, translation_fingerprint

log = logging.getLogger(__name__)

DEFAULT_MAX_NEW_TOKENS = 256


class TranslationError(RuntimeError):
    pass


class TranslatorKind(str, enum.Enum):
    IDENTITY = "identity"
    SELF_MODEL = "self_model"
    EXTERNAL_MT = "external_mt"


@dataclass(frozen=True)
class TranslationRecord:
    key: str
    model: str
    lang: str
    source_text: str
    english_text: str
    empty_output: bool
    created_at: str

    def __post_init__(self) -> None:
        if not self.english_text and not self.empty_output:
            raise TranslationError("empty translation without the empty_output flag")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def cache_key(model: str, lang: str, text: str, fingerprint: str, decode: Mapping[str, Any]) -> str:
    canonical = json.dumps(
        [model, lang, text, fingerprint, dict(sorted(decode.items()))],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TranslationCache:
    """Append-only JSONL store keyed by content digest.

    Reads are served from memory; appends are serialized by a lock and
    flushed per record. Unparseable lines are skipped with a warning.
    """

    FILENAME = "translations.jsonl"

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, TranslationRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None:
            if self.path.is_dir() or not self.path.suffix:
                self.path = self.path / self.FILENAME
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = TranslationRecord(**json.loads(line))
                except (ValueError, TypeError) as exc:
                    log.warning("%s:%d: skipping corrupt cache line (%s)", self.path, lineno, exc)
                    continue
                self._records[rec.key] = rec

    def get(self, key: str) -> TranslationRecord | None:
        return self._records.get(key)

    def put(self, record: TranslationRecord) -> None:
        with self._lock:
            if self._records.get(record.key) == record:
                return
            self._records[record.key] = record
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)


class MTAdapter(Protocol):
    model_id: str

    def translate(self, text: str, source_lang: str) -> str: ...


class HttpMT:
    """External MT over ``POST /v1/translate {text, source_lang, target_lang}``."""

    def __init__(self, url: str | None, model: str = "external-mt", **client_kwargs: Any):
        if not url:
            raise TranslationError("external MT endpoint is not configured")
        self.model_id = model
        self.client = be.HttpClient(url, **client_kwargs)

    def translate(self, text: str, source_lang: str) -> str:
        body = self.client.post(
            "/v1/translate", {"text": text, "source_lang": source_lang, "target_lang": "en"}
        )
        out = body.get("text")
        if not isinstance(out, str):
            raise be.ServerError("malformed response: 'text' missing")
        return out


@dataclass
class MockMT:
    table: Mapping[tuple[str, str], str] = field(default_factory=dict)
    model_id: str = "mock-mt"

    def translate(self, text: str, source_lang: str) -> str:
        return self.table.get((source_lang, text), "")


def external_mt_adapter(adapter: MTAdapter | None, text: str, source_lang: str) -> str:
    if adapter is None:
        raise TranslationError("translator kind external_mt needs a configured MT endpoint")
    return adapter.translate(text, source_lang)


@dataclass(frozen=True)
class TranslatedInstance:
    original: TaskInstance
    english_fields: Mapping[str, str]
    english_candidates: tuple[str, ...]
    provenance: TranslatorKind
    keys: tuple[str, ...] = ()
    empty_outputs: tuple[str, ...] = ()

    def as_english_instance(self) -> TaskInstance:
        fields = dict(self.original.fields)
        fields.update(self.english_fields)
        return self.original.with_text(fields, self.english_candidates)


@dataclass
class TranslationResult:
    text: str
    record: TranslationRecord | None
    cached: bool = False

    @property
    def empty_output(self) -> bool:
        return self.record is not None and self.record.empty_output


class Translator:
    """Field-level translator bound to one kind, one backend/adapter and one cache.

    ``shots`` maps a language code to the few-shot pairs used for that
    language's translation prompt (self_model only).
    """

    def __init__(
        self,
        kind: TranslatorKind | str,
        *,
        backend: be.Backend | None = None,
        mt: MTAdapter | None = None,
        shots: Mapping[str, Sequence[ParallelSentencePair]] | None = None,
        cache: TranslationCache | None = None,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        on_empty: str = "keep",
        allow_identity: bool = False,
        parallelism: int = 1,
    ):
        self.kind = TranslatorKind(kind)
        if on_empty not in ("keep", "fallback_source"):
            raise ValueError("on_empty must be 'keep' or 'fallback_source'")
        if self.kind is TranslatorKind.SELF_MODEL and backend is None:
            raise TranslationError("self_model translation needs a backend")
        if self.kind is TranslatorKind.EXTERNAL_MT and mt is None:
            raise TranslationError("translator kind external_mt needs a configured MT endpoint")
        self.backend = backend
        self.mt = mt
        self.shots = {k: tuple(v) for k, v in (shots or {}).items()}
        self.cache = cache if cache is not None else TranslationCache()
        self.max_new_tokens = max_new_tokens
        self.on_empty = on_empty
        self.allow_identity = allow_identity
        self.parallelism = parallelism
        self.fresh_calls = 0

    @property
    def model_id(self) -> str:
        if self.kind is TranslatorKind.SELF_MODEL:
            return self.backend.model_id
        if self.kind is TranslatorKind.EXTERNAL_MT:
            return self.mt.model_id
        return "identity"

    def _shots_for(self, lang: LanguageTag) -> tuple[ParallelSentencePair, ...]:
        if lang.code not in self.shots:
            raise TranslationError(f"no translation shots loaded for language {lang.code!r}")
        return self.shots[lang.code]

    def fingerprint(self, lang: LanguageTag) -> str:
        if self.kind is TranslatorKind.SELF_MODEL:
            return translation_fingerprint(self._shots_for(lang), lang)
        return self.kind.value

    def decode_params(self) -> dict[str, Any]:
        if self.kind is TranslatorKind.SELF_MODEL:
            return {"max_new_tokens": self.max_new_tokens, "stop": "\n", "temperature": 0}
        return {}

    def key(self, text: str, lang: LanguageTag) -> str:
        return cache_key(self.model_id, lang.code, text, self.fingerprint(lang), self.decode_params())

    def lookup(self, text: str, lang: str | LanguageTag) -> TranslationRecord | None:
        lang = language(lang)
        return self.cache.get(self.key(text, lang))

    def _check_identity(self, lang: LanguageTag) -> None:
        if not lang.is_english and not self.allow_identity:
            raise TranslationError(
                f"identity translator used on non-English language {lang.code!r}"
            )

    def _completion_spec(self, text: str, lang: LanguageTag) -> be.CompletionSpec:
        prompt = build_translation_prompt(self._shots_for(lang), text, lang)
        return be.CompletionSpec(prompt.rendered, self.max_new_tokens, stop=prompt.stop_sequence)

    def _record(self, key: str, text: str, lang: LanguageTag, output: str) -> TranslationRecord:
        english = output.strip()
        return TranslationRecord(
            key=key,
            model=self.model_id,
            lang=lang.code,
            source_text=text,
            english_text=english,
            empty_output=not english,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )

    def _result(self, text: str, record: TranslationRecord, cached: bool) -> TranslationResult:
        english = record.english_text
        if record.empty_output and self.on_empty == "fallback_source":
            english = text
        return TranslationResult(english, record, cached)

    def translate_field(self, text: str, lang: str | LanguageTag) -> TranslationResult:
        lang = language(lang)
        if self.kind is TranslatorKind.IDENTITY:
            self._check_identity(lang)
            return TranslationResult(text, None)
        if not text.strip():
            raise TranslationError("cannot translate an empty field")
        key = self.key(text, lang)
        hit = self.cache.get(key)
        if hit is not None:
            return self._result(text, hit, cached=True)
        if self.kind is TranslatorKind.SELF_MODEL:
            output = self.backend.complete(self._completion_spec(text, lang)).text
        else:
            output = external_mt_adapter(self.mt, text, lang.code)
        self.fresh_calls += 1
        record = self._record(key, text, lang, output)
        self.cache.put(record)
        return self._result(text, record, cached=False)

    def translate_many(self, texts: Sequence[str], lang: str | LanguageTag) -> list[TranslationResult]:
        """Translate a list of texts, deduplicated and batched through the backend."""
        lang = language(lang)
        if self.kind is TranslatorKind.IDENTITY:
            self._check_identity(lang)
            return [TranslationResult(t, None) for t in texts]
        keys = {t: self.key(t, lang) for t in texts if t.strip()}
        missing = [t for t in dict.fromkeys(keys) if self.cache.get(keys[t]) is None]
        if missing:
            if self.kind is TranslatorKind.SELF_MODEL:
                specs = [self._completion_spec(t, lang) for t in missing]
                outputs = [r.text for r in be.batch(self.backend, specs, self.parallelism)]
            else:
                outputs = [external_mt_adapter(self.mt, t, lang.code) for t in missing]
            self.fresh_calls += len(missing)
            for t, out in zip(missing, outputs):
                self.cache.put(self._record(keys[t], t, lang, out))
        fresh = set(missing)
        results = []
        for t in texts:
            if not t.strip():
                results.append(TranslationResult(t, None))
            else:
                results.append(self._result(t, self.cache.get(keys[t]), cached=t not in fresh))
        return results

    def translate_instance(self, instance: TaskInstance) -> TranslatedInstance:
        """Translate every translatable field and, for identity-verbalizer
        tasks, every candidate, each on its own."""
        names, texts = translatable_texts(instance)
        results = [
            TranslationResult(t, None) if not t.strip() else self.translate_field(t, instance.language)
            for t in texts
        ]
        return assemble(instance, names, results, self.kind)


def translatable_texts(instance: TaskInstance) -> tuple[list[str], list[str]]:
    """Names and texts to translate; candidates are named ``candidate:<i>``."""
    schema = task_schema(instance.task)
    names = list(schema.translatable)
    texts = [instance.fields[n] for n in names]
    if schema.candidate_keys:
        for i, cand in enumerate(instance.candidates):
            names.append(f"candidate:{i}")
            texts.append(cand)
    return names, texts


def assemble(
    instance: TaskInstance,
    names: Sequence[str],
    results: Sequence[TranslationResult],
    kind: TranslatorKind,
) -> TranslatedInstance:
    fields: dict[str, str] = {}
    candidates = list(instance.candidates)
    for name, res in zip(names, results):
        if name.startswith("candidate:"):
            candidates[int(name.split(":", 1)[1])] = res.text
        else:
            fields[name] = res.text
    # keep the instance's field order
    ordered = {n: fields[n] for n in instance.fields if n in fields}
    return TranslatedInstance(
        original=instance,
        english_fields=ordered,
        english_candidates=tuple(candidates),
        provenance=kind,
        keys=tuple(r.record.key for r in results if r.record is not None),
        empty_outputs=tuple(n for n, r in zip(names, results) if r.empty_output),
    )
