"""Accuracy, corpus BLEU, COMET (remote) and table aggregation."""

from __future__ import annotations

import enum
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from . import backend as be
from .data import resource_class_of

EPSILON = 1e-9
NGRAM_ORDER = 4
# Tasks averaged when grouping by resource class (the ones with most languages).
RESOURCE_TASKS = ("xstorycloze", "xcopa", "xnli")


class MetricError(ValueError):
    pass


def round1(x: float) -> float:
    """Half-up rounding to one decimal on the value's shortest repr."""
    return float(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


class Cell(Protocol):
    task: str
    language: str
    method: str
    model: str

    @property
    def value(self) -> float: ...


@dataclass(frozen=True)
class AccuracyCell:
    task: str
    language: str
    method: str
    model: str
    correct_count: int
    total_count: int
    source: str | None = None

    def __post_init__(self) -> None:
        if self.total_count <= 0:
            raise MetricError("accuracy needs at least one record")
        if not 0 <= self.correct_count <= self.total_count:
            raise MetricError("correct_count out of range")

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.total_count

    @property
    def value(self) -> float:
        return self.accuracy


@dataclass(frozen=True)
class MetricCell:
    """A single already-computed value (replayed tables, metric files)."""

    task: str
    language: str
    method: str
    model: str
    value: float
    metric: str = "accuracy"
    source: str | None = None


def accuracy(records: Sequence[Any]) -> AccuracyCell:
    if not records:
        raise MetricError("accuracy of an empty record list")
    first = records[0]
    key = (first.task, first.language, first.method, first.model)
    for r in records:
        if (r.task, r.language, r.method, r.model) != key:
            raise MetricError(
                f"records mix (task, language, method, model): {key} vs "
                f"{(r.task, r.language, r.method, r.model)}"
            )
    return AccuracyCell(*key, sum(bool(r.correct) for r in records), len(records))


# --- BLEU -----------------------------------------------------------------


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading and trailing punctuation/symbol
    characters (Unicode categories P* and S*) off into one-char tokens.
    Case is preserved."""
    tokens: list[str] = []
    for word in text.split():
        i, j = 0, len(word)
        while i < j and _is_punct(word[i]):
            i += 1
        while j > i and _is_punct(word[j - 1]):
            j -= 1
        tokens.extend(word[:i])
        if i < j:
            tokens.append(word[i:j])
        tokens.extend(word[j:])
    return tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: tuple[int, ...] = ()
    totals: tuple[int, ...] = ()
    tokenizer: str = "ws-punct"


def bleu_from_counts(
    matches: Sequence[int], totals: Sequence[int], hyp_len: int, ref_len: int, epsilon: float = EPSILON
) -> BleuScore:
    """BLEU from corpus-level clipped match counts.

    An order with zero matches gets precision ``epsilon``. An order with no
    hypothesis n-grams at all inherits the precision of the previous order,
    so identical short corpora still score 100.
    """
    precisions: list[float] = []
    for m, t in zip(matches, totals):
        if t == 0:
            p = precisions[-1] if precisions else epsilon
        elif m == 0:
            p = epsilon
        else:
            p = m / t
        precisions.append(p)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1 - ref_len / hyp_len)
    if bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    return BleuScore(score, tuple(precisions), bp, hyp_len, ref_len, tuple(matches), tuple(totals))


def corpus_bleu(
    hypotheses: Sequence[str], references: Sequence[str], epsilon: float = EPSILON
) -> BleuScore:
    if len(hypotheses) != len(references):
        raise MetricError(
            f"corpus size mismatch: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise MetricError("BLEU needs at least one sentence pair")
    matches = [0] * NGRAM_ORDER
    totals = [0] * NGRAM_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = tokenize(hyp), tokenize(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, NGRAM_ORDER + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    return bleu_from_counts(matches, totals, hyp_len, ref_len, epsilon)


# --- COMET ----------------------------------------------------------------


@dataclass(frozen=True)
class CometScore:
    score: float
    scorer_model_id: str


class CometClient:
    """Remote COMET scorer: ``POST /v1/comet {triples: [{src, hyp, ref}]} -> {score, model_id}``."""

    def __init__(self, url: str, **client_kwargs: Any):
        self.client = be.HttpClient(url, **client_kwargs)

    def score(self, triples: list[dict[str, str]]) -> CometScore:
        body = self.client.post("/v1/comet", {"triples": triples})
        score, model_id = body.get("score"), body.get("model_id")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not isinstance(model_id, str):
            raise be.ServerError("malformed COMET response")
        return CometScore(float(score), model_id)


def comet_score(
    sources: Sequence[str],
    hypotheses: Sequence[str],
    references: Sequence[str],
    scorer: CometClient | str | None,
) -> CometScore | None:
    """Corpus COMET from the remote scorer; ``None`` means unavailable."""
    if not len(sources) == len(hypotheses) == len(references):
        raise MetricError(
            f"COMET inputs differ in length: {len(sources)}/{len(hypotheses)}/{len(references)}"
        )
    if not scorer:
        return None
    if isinstance(scorer, str):
        scorer = CometClient(scorer)
    triples = [{"src": s, "hyp": h, "ref": r} for s, h, r in zip(sources, hypotheses, references)]
    try:
        return scorer.score(triples)
    except be.TransportError:
        return None


# --- aggregation ----------------------------------------------------------


class Grouping(str, enum.Enum):
    BY_TASK_AVG = "by_task_avg"
    BY_LANGUAGE_AVG_EXCL_EN = "by_language_avg_excl_en"
    RESOURCE_CLASS = "resource_class"


@dataclass(frozen=True)
class AggregateRow:
    model: str
    method: str
    group: str
    value: float
    n: int


def _mean(values: Sequence[float], what: str) -> float:
    if not values:
        raise MetricError(f"empty group: {what}")
    return sum(values) / len(values)


def _task_value(cells: Sequence[Cell], what: str) -> float:
    non_en = [c.value for c in cells if c.language != "en"]
    return _mean(non_en or [c.value for c in cells], what)


def _by_row(cells: Iterable[Cell]) -> dict[tuple[str, str], list[Cell]]:
    rows: dict[tuple[str, str], list[Cell]] = {}
    for c in cells:
        rows.setdefault((c.model, c.method), []).append(c)
    return rows


def _by_task(cells: Iterable[Cell]) -> dict[str, list[Cell]]:
    tasks: dict[str, list[Cell]] = {}
    for c in cells:
        tasks.setdefault(c.task, []).append(c)
    return tasks


def aggregate(
    cells: Iterable[Cell],
    grouping: Grouping | str,
    *,
    resource_tasks: Sequence[str] = RESOURCE_TASKS,
) -> list[AggregateRow]:
    """Unweighted means, one row per (model, method[, group]).

    ``by_task_avg``: mean over tasks of each task's value, where a task's
    value is its mean over non-English languages (English only if that is
    all there is). ``by_language_avg_excl_en``: per task, mean over
    languages other than English. ``resource_class``: per class, mean over
    ``resource_tasks`` of each task's mean over that class's non-English
    languages.
    """
    grouping = Grouping(grouping)
    cells = list(cells)
    if not cells:
        raise MetricError("nothing to aggregate")
    out: list[AggregateRow] = []
    for (model, method), row in _by_row(cells).items():
        tasks = _by_task(row)
        if grouping is Grouping.BY_TASK_AVG:
            vals = [_task_value(tc, f"{model}/{method}/{t}") for t, tc in tasks.items()]
            out.append(AggregateRow(model, method, "avg", _mean(vals, f"{model}/{method}"), len(vals)))
        elif grouping is Grouping.BY_LANGUAGE_AVG_EXCL_EN:
            for task, tc in tasks.items():
                vals = [c.value for c in tc if c.language != "en"]
                out.append(AggregateRow(model, method, task, _mean(vals, f"{model}/{method}/{task} (excluding en)"), len(vals)))
        else:
            per_class: dict[str, list[float]] = {}
            for task in resource_tasks:
                by_cls: dict[str, list[float]] = {}
                for c in tasks.get(task, ()):
                    if c.language != "en":
                        by_cls.setdefault(resource_class_of(c.language), []).append(c.value)
                for cls, vals in by_cls.items():
                    per_class.setdefault(cls, []).append(_mean(vals, f"{task}/{cls}"))
            if not per_class:
                raise MetricError(f"empty group: {model}/{method} has no cells in {list(resource_tasks)}")
            for cls in ("high", "low"):
                if cls in per_class:
                    out.append(AggregateRow(model, method, cls, _mean(per_class[cls], cls), len(per_class[cls])))
    return out


# --- metric files ---------------------------------------------------------


def metric_line(
    task: str, lang: str, method: str, model: str, metric: str, value: float | str, details: Mapping[str, Any] | None = None
) -> str:
    return json.dumps(
        {
            "task": task,
            "lang": lang,
            "method": method,
            "model": model,
            "metric": metric,
            "value": value,
            "details": dict(details or {}),
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def read_metric_cells(path: str | Path) -> list[MetricCell]:
    """Numeric cells of a metric JSONL file; ``"unavailable"`` values are skipped."""
    cells = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            if isinstance(raw["value"], (int, float)):
                cells.append(
                    MetricCell(raw["task"], raw["lang"], raw["method"], raw["model"], float(raw["value"]), raw["metric"], str(path))
                )
    return cells
