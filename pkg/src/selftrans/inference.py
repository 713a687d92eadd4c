"""Direct, self-translate and external-MT inference over task instances."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import __version__
from . import backend as be
from .data import FewShotExemplar, TaskInstance, TaskKind
from .prompting import (
    PromptRegistry,
    PromptTemplate,
    render_choices,
    render_generative,
)
from .translate import (
    TranslatedInstance,
    Translator,
    TranslatorKind,
    assemble,
    translatable_texts,
)

GENERATION_STOP = "\n\n"
GENERATION_MAX_NEW_TOKENS = 400


class InferenceError(RuntimeError):
    pass


class Method(str, enum.Enum):
    DIRECT = "direct"
    SELF_TRANSLATE = "self_translate"
    EXTERNAL_MT = "external_mt"

    @classmethod
    def parse(cls, name: str | "Method") -> "Method":
        if isinstance(name, Method):
            return name
        aliases = {"self": cls.SELF_TRANSLATE, "mt": cls.EXTERNAL_MT}
        return aliases.get(name) or cls(name)


# Last number in the text: optional sign, optional currency symbol,
# digits with optional thousands commas, optional decimal part.
NUMBER_PATTERN = re.compile(r"(?<![\w.])([-+]?)[$€£¥₹]?(\d+(?:,\d{3})*(?:\.\d+)?|\d+(?:\.\d+)?)")


def normalize_number(text: str) -> str:
    """Canonical string form used to compare answers.

    Drops thousands separators, currency symbols, a leading ``+`` and a
    trailing period; strips a fractional part made only of zeros.
    """
    s = text.strip().rstrip(".")
    s = s.replace(",", "").lstrip("$€£¥₹")
    if s.startswith("+"):
        s = s[1:]
    elif s.startswith("-"):
        s = "-" + s[1:].lstrip("$€£¥₹")
    s = re.sub(r"\.0*$", "", s)
    if s in ("-0", ""):
        return "0" if s else ""
    return s


def extract_answer(generation: str, pattern: re.Pattern[str] = NUMBER_PATTERN) -> str:
    """Normalized last number in a generation, or ``""`` if there is none."""
    matches = pattern.findall(generation)
    if not matches:
        return ""
    sign, digits = matches[-1]
    return normalize_number(("-" if sign == "-" else "") + digits)


def answers_match(prediction: str, gold: str) -> bool:
    return bool(prediction) and normalize_number(prediction) == normalize_number(gold)


@dataclass(frozen=True)
class ResultRecord:
    task_id: str
    task: str
    method: str
    language: str
    model: str
    prediction: int | str
    gold: int | str
    correct: bool
    candidate_scores: list[float] = field(default_factory=list)
    generation: str | None = None
    translations_used: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "ResultRecord":
        return cls(**raw)


def _argmax(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _english_view(instance: TaskInstance, translated: TranslatedInstance | None, method: Method) -> TaskInstance:
    if method is Method.DIRECT:
        return instance
    if translated is None:
        raise InferenceError(f"{instance.task_id}: {method.value} needs a translated instance")
    return translated.as_english_instance()


def score_requests(instance: TaskInstance, template: PromptTemplate) -> list[be.ScoreSpec]:
    return [be.ScoreSpec(c.context, c.continuation) for c in render_choices(instance, template)]


def record_from_scores(
    instance: TaskInstance,
    method: Method,
    model: str,
    scores: Sequence[be.Score],
    normalize: str,
    keys: Sequence[str] = (),
) -> ResultRecord:
    values = [s.normalized(normalize) for s in scores]
    if not all(math.isfinite(v) for v in values):
        raise InferenceError(f"{instance.task_id}: non-finite candidate score in {values}")
    pred = _argmax(values)
    return ResultRecord(
        task_id=instance.task_id,
        task=instance.task,
        method=method.value,
        language=instance.language.code,
        model=model,
        prediction=pred,
        gold=instance.gold,
        correct=pred == instance.gold,
        candidate_scores=values,
        translations_used=list(keys),
    )


def record_from_generation(
    instance: TaskInstance, method: Method, model: str, generation: str, keys: Sequence[str] = ()
) -> ResultRecord:
    pred = extract_answer(generation)
    return ResultRecord(
        task_id=instance.task_id,
        task=instance.task,
        method=method.value,
        language=instance.language.code,
        model=model,
        prediction=pred,
        gold=instance.gold,
        correct=answers_match(pred, str(instance.gold)),
        generation=generation,
        translations_used=list(keys),
    )


def infer_multiple_choice(
    instance: TaskInstance,
    method: Method | str,
    template: PromptTemplate,
    backend: be.Backend,
    *,
    translated: TranslatedInstance | None = None,
    normalize: str = "none",
) -> ResultRecord:
    """Score every candidate and pick the highest; ties go to the lowest index."""
    method = Method.parse(method)
    view = _english_view(instance, translated, method)
    scores = [backend.score(spec) for spec in score_requests(view, template)]
    keys = translated.keys if translated is not None else ()
    return record_from_scores(instance, method, backend.model_id, scores, normalize, keys)


def generation_request(
    instance: TaskInstance,
    template: PromptTemplate,
    exemplars: Sequence[FewShotExemplar],
    max_new_tokens: int = GENERATION_MAX_NEW_TOKENS,
) -> be.CompletionSpec:
    prompt = render_generative(instance, template, exemplars)
    return be.CompletionSpec(prompt, max_new_tokens, stop=GENERATION_STOP)


def infer_generative(
    instance: TaskInstance,
    method: Method | str,
    template: PromptTemplate,
    exemplars: Sequence[FewShotExemplar],
    backend: be.Backend,
    *,
    translated: TranslatedInstance | None = None,
    max_new_tokens: int = GENERATION_MAX_NEW_TOKENS,
) -> ResultRecord:
    method = Method.parse(method)
    view = _english_view(instance, translated, method)
    out = backend.complete(generation_request(view, template, exemplars, max_new_tokens))
    keys = translated.keys if translated is not None else ()
    return record_from_generation(instance, method, backend.model_id, out.text, keys)


@dataclass(frozen=True)
class EvalConfig:
    normalize: str = "none"
    parallelism: int = 1
    max_new_tokens: int = GENERATION_MAX_NEW_TOKENS


def translate_all(instances: Sequence[TaskInstance], translator: Translator) -> list[TranslatedInstance]:
    """Translate every field of every instance, deduplicating repeated texts."""
    if not instances:
        return []
    lang = instances[0].language
    per_instance = [translatable_texts(inst) for inst in instances]
    flat = [t for _, texts in per_instance for t in texts]
    results = iter(translator.translate_many(flat, lang))
    out = []
    for inst, (names, texts) in zip(instances, per_instance):
        out.append(assemble(inst, names, [next(results) for _ in texts], translator.kind))
    return out


def results_filename(task: str, lang: str, method: Method | str, model: str) -> str:
    safe_model = re.sub(r"[^A-Za-z0-9._-]+", "_", model)
    return f"{task}.{lang}.{Method.parse(method).value}.{safe_model}.results.jsonl"


def dumps_record(rec: ResultRecord) -> str:
    return json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True)


def write_results(path: str | Path, records: Iterable[ResultRecord]) -> Path:
    """Stream records to a temporary file, then move it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(dumps_record(rec) + "\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def read_results(path: str | Path) -> list[ResultRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ResultRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def run_evaluation(
    instances: Sequence[TaskInstance],
    method: Method | str,
    backend: be.Backend,
    registry: PromptRegistry,
    *,
    config: EvalConfig = EvalConfig(),
    translator: Translator | None = None,
    exemplars: Mapping[str, Sequence[FewShotExemplar]] | None = None,
    out_dir: str | Path | None = None,
    manifest: Mapping[str, Any] | None = None,
) -> list[ResultRecord]:
    """Evaluate one task/language slice; returns records in input order.

    For translated methods every field is translated (through the cache)
    before any scoring request is sent. With ``out_dir`` the records are
    written to ``<task>.<lang>.<method>.<model>.results.jsonl`` next to a
    ``.manifest.json`` sidecar.
    """
    method = Method.parse(method)
    if not instances:
        raise InferenceError("no instances to evaluate")
    task, lang = instances[0].task, instances[0].language
    for inst in instances:
        if inst.task != task or inst.language != lang:
            raise InferenceError("all instances must share one task and language")

    translated: list[TranslatedInstance | None]
    if method is Method.DIRECT:
        template = registry.get(task, lang)
        translated = [None] * len(instances)
        prompt_lang = lang.code
    else:
        if translator is None:
            raise InferenceError(f"method {method.value} needs a translator")
        expected = TranslatorKind.EXTERNAL_MT if method is Method.EXTERNAL_MT else None
        if expected is not None and translator.kind is not expected:
            raise InferenceError("external_mt method needs an external_mt translator")
        if method is Method.SELF_TRANSLATE and translator.kind is TranslatorKind.EXTERNAL_MT:
            raise InferenceError("self_translate cannot use an external_mt translator")
        template = registry.get(task, "en")
        translated = list(translate_all(instances, translator))
        prompt_lang = "en"
    views = [_english_view(i, t, method) for i, t in zip(instances, translated)]

    kind = instances[0].kind
    if kind is TaskKind.MULTIPLE_CHOICE:
        per_instance = [score_requests(v, template) for v in views]
        flat = [r for reqs in per_instance for r in reqs]
        responses = iter(be.batch(backend, flat, config.parallelism))
        records = []
        for inst, tr, reqs in zip(instances, translated, per_instance):
            scores = [next(responses) for _ in reqs]
            keys = tr.keys if tr is not None else ()
            records.append(record_from_scores(inst, method, backend.model_id, scores, config.normalize, keys))
    else:
        shots = (exemplars or {}).get(prompt_lang)
        if shots is None:
            raise InferenceError(f"no MGSM exemplars loaded for language {prompt_lang!r}")
        reqs = [generation_request(v, template, shots, config.max_new_tokens) for v in views]
        outs = be.batch(backend, reqs, config.parallelism)
        records = [
            record_from_generation(inst, method, backend.model_id, out.text, tr.keys if tr else ())
            for inst, tr, out in zip(instances, translated, outs)
        ]

    if out_dir is not None:
        path = Path(out_dir) / results_filename(task, lang.code, method, backend.model_id)
        write_results(path, records)
        sidecar = dict(manifest or {})
        sidecar.update(
            {
                "tool_version": __version__,
                "task": task,
                "language": lang.code,
                "method": method.value,
                "model": backend.model_id,
                "prompt_fingerprints": {"task_template": template.fingerprint()},
                "n_records": len(records),
            }
        )
        if translator is not None and translator.kind is TranslatorKind.SELF_MODEL:
            sidecar["prompt_fingerprints"]["translation"] = translator.fingerprint(lang)
            sidecar["shot_positions"] = [p.position for p in translator.shots.get(lang.code, ())]
        write_manifest(path.with_name(path.name[: -len(".results.jsonl")] + ".manifest.json"), sidecar)
    return records


def config_digest(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(path: Path, manifest: Mapping[str, Any]) -> Path:
    text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False, default=str) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path
