"""Task datasets, parallel dev data and language metadata.

Every loader returns immutable values in file order. Dataset files are JSON
lines with one fixed schema per task; parallel dev data is a pair of aligned
plain-text files, one sentence per line.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

__all__ = [
    "DataError",
    "FewShotExemplar",
    "LanguageTag",
    "ParallelSentencePair",
    "ShotSelection",
    "TASKS",
    "TaskInstance",
    "TaskKind",
    "language",
    "load_exemplars",
    "load_parallel_dev",
    "load_task",
    "resource_class_of",
    "select_translation_shots",
]


class DataError(ValueError):
    """A dataset, parallel file or language table failed validation."""


class TaskKind(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    GENERATIVE = "generative"


@dataclass(frozen=True)
class LanguageTag:
    code: str
    display_name: str

    def __post_init__(self) -> None:
        if not self.code or not self.code.isascii() or self.code != self.code.lower():
            raise DataError(f"language code must be non-empty lowercase ASCII, got {self.code!r}")
        if not self.display_name or not self.display_name[0].isupper():
            raise DataError(f"display name for {self.code!r} must be capitalized, got {self.display_name!r}")

    @property
    def resource_class(self) -> str:
        return resource_class_of(self)

    @property
    def is_english(self) -> bool:
        return self.code == "en"

    def __str__(self) -> str:
        return self.code


def _read_table(name: str) -> list[list[str]]:
    text = resources.files("selftrans").joinpath("resources", name).read_text(encoding="utf-8")
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split(None, 1) if "\t" not in line else line.split("\t"))
    return rows


@lru_cache(maxsize=None)
def _display_names() -> dict[str, str]:
    return {code: name.strip() for code, name in _read_table("languages.tsv")}


@lru_cache(maxsize=None)
def _resource_classes() -> dict[str, str]:
    table = {}
    for code, cls in _read_table("resource_classes.txt"):
        cls = cls.strip()
        if cls not in ("high", "low"):
            raise DataError(f"resource class for {code!r} must be 'high' or 'low', got {cls!r}")
        table[code] = cls
    return table


def language(code: str | LanguageTag) -> LanguageTag:
    """Look up a language by code in the shipped name table."""
    if isinstance(code, LanguageTag):
        return code
    names = _display_names()
    if code not in names:
        raise DataError(
            f"unknown language code {code!r}; add it to selftrans/resources/languages.tsv"
        )
    return LanguageTag(code, names[code])


def resource_class_of(lang: str | LanguageTag) -> str:
    """Return ``"high"`` or ``"low"`` (low and ex-low merged)."""
    code = lang.code if isinstance(lang, LanguageTag) else lang
    table = _resource_classes()
    if code not in table:
        raise DataError(
            f"no resource class registered for {code!r}; "
            "extend selftrans/resources/resource_classes.txt"
        )
    return table[code]


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    task: str
    kind: TaskKind
    language: LanguageTag
    fields: Mapping[str, str]
    candidates: tuple[str, ...]
    gold: int | str
    degenerate_fields: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        validate_instance(self)

    def with_text(self, fields: Mapping[str, str], candidates: Sequence[str]) -> "TaskInstance":
        """Copy of this instance with replaced field and candidate texts."""
        return TaskInstance(
            task_id=self.task_id,
            task=self.task,
            kind=self.kind,
            language=self.language,
            fields=dict(fields),
            candidates=tuple(candidates),
            gold=self.gold,
            degenerate_fields=tuple(
                name for name, text in fields.items() if not text.strip()
            ),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "task": self.task,
            "kind": self.kind.value,
            "language": self.language.code,
            "fields": dict(self.fields),
            "candidates": list(self.candidates),
            "gold": self.gold,
            "degenerate_fields": list(self.degenerate_fields),
        }


def validate_instance(inst: TaskInstance) -> None:
    if inst.kind is TaskKind.MULTIPLE_CHOICE:
        if len(inst.candidates) < 2:
            raise DataError(f"{inst.task_id}: multiple-choice instance needs >= 2 candidates")
        if not isinstance(inst.gold, int) or not 0 <= inst.gold < len(inst.candidates):
            raise DataError(f"{inst.task_id}: gold label {inst.gold!r} out of range")
    else:
        if inst.candidates:
            raise DataError(f"{inst.task_id}: generative instance must not have candidates")
        if not isinstance(inst.gold, str) or not inst.gold.strip():
            raise DataError(f"{inst.task_id}: generative instance needs a non-empty gold answer")
    for name, text in inst.fields.items():
        if not text.strip() and name not in inst.degenerate_fields:
            raise DataError(f"{inst.task_id}: field {name!r} is empty")


@dataclass(frozen=True)
class TaskSchema:
    name: str
    kind: TaskKind
    required: tuple[str, ...]
    # (output field name, source key) in output order
    field_map: tuple[tuple[str, str], ...]
    labels: tuple[str, ...] = ()
    # source keys holding candidate texts; empty means candidates are `labels`
    candidate_keys: tuple[str, ...] = ()
    # fields sent through translation (candidates are handled separately)
    translatable: tuple[str, ...] = ()
    # canonical column order of the benchmark's languages
    languages: tuple[str, ...] = ()


TASKS: dict[str, TaskSchema] = {
    "xnli": TaskSchema(
        "xnli",
        TaskKind.MULTIPLE_CHOICE,
        required=("premise", "hypothesis", "label"),
        field_map=(("sentence1", "premise"), ("sentence2", "hypothesis")),
        labels=("entailment", "neutral", "contradiction"),
        translatable=("sentence1", "sentence2"),
        languages=tuple("ar bg de el en es fr hi ru sw th tr ur vi zh".split()),
    ),
    "pawsx": TaskSchema(
        "pawsx",
        TaskKind.MULTIPLE_CHOICE,
        required=("sentence1", "sentence2", "label"),
        field_map=(("sentence1", "sentence1"), ("sentence2", "sentence2")),
        labels=("false", "true"),
        translatable=("sentence1", "sentence2"),
        languages=tuple("de en es fr ja ko zh".split()),
    ),
    "xcopa": TaskSchema(
        "xcopa",
        TaskKind.MULTIPLE_CHOICE,
        required=("premise", "choice1", "choice2", "question", "label"),
        field_map=(("premise", "premise"), ("question_type", "question")),
        candidate_keys=("choice1", "choice2"),
        translatable=("premise",),
        languages=tuple("et ht id it qu sw ta th tr vi zh".split()),
    ),
    "xstorycloze": TaskSchema(
        "xstorycloze",
        TaskKind.MULTIPLE_CHOICE,
        required=(
            "input_sentence_1",
            "input_sentence_2",
            "input_sentence_3",
            "input_sentence_4",
            "sentence_quiz1",
            "sentence_quiz2",
            "answer_right_ending",
        ),
        field_map=tuple((f"input_sentence_{i}", f"input_sentence_{i}") for i in range(1, 5)),
        candidate_keys=("sentence_quiz1", "sentence_quiz2"),
        translatable=tuple(f"input_sentence_{i}" for i in range(1, 5)),
        languages=tuple("ar en es eu hi id my ru sw te zh".split()),
    ),
    "mgsm": TaskSchema(
        "mgsm",
        TaskKind.GENERATIVE,
        required=("question", "answer_number"),
        field_map=(("question", "question"),),
        translatable=("question",),
        languages=tuple("bn de en es fr ja ru sw te th zh".split()),
    ),
}


def task_schema(task_name: str) -> TaskSchema:
    try:
        return TASKS[task_name]
    except KeyError:
        raise DataError(
            f"unknown task {task_name!r}; supported tasks: {', '.join(sorted(TASKS))}"
        ) from None


def _gold(schema: TaskSchema, rec: dict[str, Any], lineno: int) -> int | str:
    where = f"line {lineno}"
    if schema.name == "mgsm":
        value = rec["answer_number"]
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise DataError(f"{where}: answer_number must be a number")
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        return str(value)
    if schema.name == "xstorycloze":
        value = rec["answer_right_ending"]
        if value not in (1, 2):
            raise DataError(f"{where}: answer_right_ending must be 1 or 2, got {value!r}")
        return value - 1
    value = rec["label"]
    arity = len(schema.labels) if schema.labels else len(schema.candidate_keys)
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < arity:
        raise DataError(f"{where}: label must be an integer in [0, {arity}), got {value!r}")
    return value


def _parse_record(
    schema: TaskSchema, rec: Any, lineno: int, lang: LanguageTag
) -> TaskInstance:
    if not isinstance(rec, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    for key in schema.required:
        if key not in rec:
            raise DataError(f"line {lineno}: missing field {key}")
    fields = {}
    for out_name, key in schema.field_map:
        value = rec[key]
        if not isinstance(value, str):
            raise DataError(f"line {lineno}: field {key} must be a string")
        fields[out_name] = value
    if schema.name == "xcopa" and fields["question_type"] not in ("cause", "effect"):
        raise DataError(
            f"line {lineno}: question must be 'cause' or 'effect', got {fields['question_type']!r}"
        )
    if schema.candidate_keys:
        candidates = []
        for key in schema.candidate_keys:
            if not isinstance(rec[key], str):
                raise DataError(f"line {lineno}: field {key} must be a string")
            candidates.append(rec[key])
    else:
        candidates = list(schema.labels)
    return TaskInstance(
        task_id=f"{schema.name}/{lang.code}/{lineno}",
        task=schema.name,
        kind=schema.kind,
        language=lang,
        fields=fields,
        candidates=tuple(candidates),
        gold=_gold(schema, rec, lineno),
        degenerate_fields=tuple(n for n, t in fields.items() if not t.strip()),
    )


def load_task(path: str | Path, task_name: str, lang: str | LanguageTag) -> list[TaskInstance]:
    """Load one task/language file; ``task_id`` is ``<task>/<lang>/<line>``.

    Empty field texts are not an error: they are listed in the instance's
    ``degenerate_fields`` so downstream steps can see them.
    """
    schema = task_schema(task_name)
    lang = language(lang)
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            instances.append(_parse_record(schema, rec, lineno, lang))
    return instances


@dataclass(frozen=True)
class ParallelSentencePair:
    source_text: str
    english_text: str
    language: LanguageTag
    position: int


def _read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_parallel_dev(
    source_path: str | Path, english_path: str | Path, lang: str | LanguageTag
) -> list[ParallelSentencePair]:
    """Read aligned source/English dev files into positioned pairs."""
    lang = language(lang)
    src = _read_lines(source_path)
    eng = _read_lines(english_path)
    if len(src) != len(eng):
        raise DataError(
            f"misaligned parallel files: {len(src)} source lines vs {len(eng)} English lines"
        )
    pairs = []
    for pos, (s, e) in enumerate(zip(src, eng)):
        if not s.strip() or not e.strip():
            raise DataError(f"parallel line {pos + 1} has an empty side")
        pairs.append(ParallelSentencePair(s, e, lang, pos))
    return pairs


@dataclass(frozen=True)
class ShotSelection:
    pairs: tuple[ParallelSentencePair, ...]
    shortfall: bool

    @property
    def positions(self) -> list[int]:
        return [p.position for p in self.pairs]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def select_translation_shots(
    pairs: Iterable[ParallelSentencePair], k: int = 4, max_chars: int = 100
) -> ShotSelection:
    """First ``k`` pairs (by position) whose source side has at most ``max_chars`` characters."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if max_chars <= 0:
        raise ValueError("max_chars must be > 0")
    chosen: list[ParallelSentencePair] = []
    if k:
        for pair in sorted(pairs, key=lambda p: p.position):
            if len(pair.source_text) <= max_chars:
                chosen.append(pair)
                if len(chosen) == k:
                    break
    return ShotSelection(tuple(chosen), shortfall=len(chosen) < k)


@dataclass(frozen=True)
class FewShotExemplar:
    question: str
    chain_of_thought_answer: str
    language: LanguageTag = field(compare=True)

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise DataError("exemplar question is empty")
        if not any(ch.isdigit() for ch in self.chain_of_thought_answer):
            raise DataError("exemplar answer must contain a number")


def load_exemplars(path: str | Path, lang: str | LanguageTag) -> list[FewShotExemplar]:
    """Read MGSM chain-of-thought exemplars: JSON lines ``{question, answer}``."""
    lang = language(lang)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("question", "answer"):
                if not isinstance(rec.get(key), str):
                    raise DataError(f"line {lineno}: missing field {key}")
            out.append(FewShotExemplar(rec["question"], rec["answer"], lang))
    return out
