"""Render result and metric files into method-comparison, per-language and
scale tables (markdown and CSV)."""

from __future__ import annotations

import csv
import dataclasses
import glob
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .data import TASKS
from .inference import read_results
from .metrics import (
    RESOURCE_TASKS,
    AccuracyCell,
    Cell,
    Grouping,
    MetricCell,
    accuracy,
    aggregate,
    read_metric_cells,
    round1,
)

TASK_ORDER = ("xstorycloze", "xcopa", "xnli", "pawsx", "mgsm")
TASK_TITLES = {
    "xstorycloze": "XStoryC",
    "xcopa": "XCOPA",
    "xnli": "XNLI",
    "pawsx": "PAWS-X",
    "mgsm": "MGSM",
}
METHOD_TITLES = {"direct": "Direct", "self_translate": "Self-translate", "external_mt": "MT"}

_SIZE = re.compile(r"(?<![A-Za-z0-9.])(\d+(?:\.\d+)?)\s*([MmBb])(?![A-Za-z])")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportSpec:
    inputs: Sequence[str] = ()
    methods: Sequence[str] = ("direct", "self_translate")
    formats: Sequence[str] = ("markdown",)
    languages: Sequence[str] | None = None
    # results hold fractions; tables show percentages
    scale: float = 100.0


def split_model(model: str) -> tuple[str, str, float]:
    """``(family, size label, parameter count)`` from a model name like ``XGLM 0.6B``."""
    m = None
    for m in _SIZE.finditer(model):
        pass
    if m is None:
        raise ReportError(f"cannot find a model size label (e.g. 7B, 564M) in {model!r}")
    size = m.group(1) + m.group(2).upper()
    params = float(m.group(1)) * (1e9 if m.group(2) in "Bb" else 1e6)
    family = (model[: m.start()] + model[m.end() :]).strip(" -_/")
    return family or model, size, params


def load_cells(paths: Iterable[str | Path]) -> list[Cell]:
    """Cells from ``*.results.jsonl`` (one accuracy cell per file slice) and
    metric JSONL files (accuracy lines only)."""
    cells: list[Cell] = []
    for path in paths:
        path = Path(path)
        if path.name.endswith(".results.jsonl"):
            groups: dict[tuple, list] = {}
            for rec in read_results(path):
                groups.setdefault((rec.task, rec.language, rec.method, rec.model), []).append(rec)
            for recs in groups.values():
                cells.append(dataclasses.replace(accuracy(recs), source=str(path)))
        else:
            cells.extend(c for c in read_metric_cells(path) if c.metric == "accuracy")
    return cells


def expand_inputs(patterns: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for pat in patterns:
        matched = sorted(glob.glob(pat))
        if not matched:
            raise ReportError(f"input pattern {pat!r} matched no files")
        paths.extend(Path(p) for p in matched)
    if not paths:
        raise ReportError("no input files given")
    return paths


def _source(c: Cell) -> str:
    return getattr(c, "source", None) or ""


def _task_cells(cells: Sequence[Cell]) -> dict[tuple[str, str, str], list[Cell]]:
    out: dict[tuple[str, str, str], list[Cell]] = {}
    for c in cells:
        out.setdefault((c.model, c.method, c.task), []).append(c)
    return out


def _task_mean(cells: Sequence[Cell]) -> float:
    vals = [c.value for c in cells if c.language != "en"] or [c.value for c in cells]
    return sum(vals) / len(vals)


def format_delta(delta: float) -> str:
    r = round1(delta)
    return f"(+{abs(r):.1f})" if r >= 0 else f"({r:.1f})"


@dataclass
class ComparisonRow:
    model: str
    size: str
    method: str
    values: dict[str, float]
    avg: float
    deltas: dict[str, float] = field(default_factory=dict)
    avg_delta: float | None = None
    bold: dict[str, bool] = field(default_factory=dict)
    sources: dict[str, list[str]] = field(default_factory=dict)

    def rounded(self, task: str) -> float:
        return round1(self.avg if task == "avg" else self.values[task])


def _ordered_models(cells: Sequence[Cell]) -> list[tuple[str, str, str]]:
    entries = {c.model: split_model(c.model) for c in cells}
    # family name, then parameter count: independent of input order
    ordered = sorted(entries.items(), key=lambda kv: (kv[1][0].casefold(), kv[1][0], kv[1][2], kv[0]))
    return [(model, fam, size) for model, (fam, size, _) in ordered]


def build_comparison(cells: Sequence[Cell], spec: ReportSpec = ReportSpec()) -> list[ComparisonRow]:
    """Rows ordered model family, size, method; non-baseline rows carry deltas
    against the first method in ``spec.methods``."""
    methods = list(spec.methods)
    cells = [c for c in cells if c.method in methods]
    if not cells:
        raise ReportError("no cells for the requested methods")
    by_key = _task_cells(cells)
    tasks = [t for t in TASK_ORDER if any(k[2] == t for k in by_key)]
    tasks += sorted({k[2] for k in by_key} - set(tasks))
    missing = [
        f"{model}/{method}/{task}"
        for model in dict.fromkeys(c.model for c in cells)
        for task in tasks
        if any((model, m, task) in by_key for m in methods)
        for method in methods
        if (model, method, task) not in by_key
    ]
    if missing:
        raise ReportError("missing counterpart cells: " + ", ".join(missing))
    averages = {(r.model, r.method): r.value for r in aggregate(cells, Grouping.BY_TASK_AVG)}
    rows: list[ComparisonRow] = []
    for model, family, size in _ordered_models(cells):
        model_rows = []
        for method in methods:
            present = [t for t in tasks if (model, method, t) in by_key]
            if not present:
                continue
            row = ComparisonRow(
                model=family,
                size=size,
                method=method,
                values={t: _task_mean(by_key[(model, method, t)]) * spec.scale for t in present},
                avg=averages[(model, method)] * spec.scale,
                sources={t: sorted({_source(c) for c in by_key[(model, method, t)]} - {""}) for t in present},
            )
            model_rows.append(row)
        base = model_rows[0]
        for row in model_rows[1:]:
            row.deltas = {t: row.values[t] - base.values[t] for t in row.values if t in base.values}
            row.avg_delta = row.avg - base.avg
        for col in [*tasks, "avg"]:
            have = [r for r in model_rows if col == "avg" or col in r.values]
            if not have:
                continue
            best = max(r.rounded(col) for r in have)
            for r in have:
                r.bold[col] = r.rounded(col) == best
        rows.extend(model_rows)
    return rows


def _cell_text(row: ComparisonRow, col: str) -> str:
    if col != "avg" and col not in row.values:
        return "-"
    text = f"{row.rounded(col):.1f}"
    delta = row.avg_delta if col == "avg" else row.deltas.get(col)
    if delta is not None:
        text += " " + format_delta(delta)
    return f"**{text}**" if row.bold.get(col) else text


def comparison_tasks(rows: Sequence[ComparisonRow]) -> list[str]:
    present = {t for r in rows for t in r.values}
    return [t for t in TASK_ORDER if t in present] + sorted(present - set(TASK_ORDER))


def render_comparison_markdown(rows: Sequence[ComparisonRow]) -> str:
    tasks = comparison_tasks(rows)
    head = ["Model", "Size", "Method", *(TASK_TITLES.get(t, t) for t in tasks), "Avg"]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    last_model = None
    for r in rows:
        model = r.model if r.model != last_model else ""
        last_model = r.model
        cells = [model, r.size, METHOD_TITLES.get(r.method, r.method)]
        cells += [_cell_text(r, t) for t in tasks] + [_cell_text(r, "avg")]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "size", "method", "column", "value", "rounded", "delta", "delta_rounded", "bold", "sources"])
    for r in rows:
        for col in [*comparison_tasks([r]), "avg"]:
            value = r.avg if col == "avg" else r.values[col]
            delta = r.avg_delta if col == "avg" else r.deltas.get(col)
            srcs = sorted({s for v in r.sources.values() for s in v}) if col == "avg" else r.sources.get(col, [])
            w.writerow(
                [
                    r.model,
                    r.size,
                    r.method,
                    col,
                    repr(value),
                    f"{round1(value):.1f}",
                    "" if delta is None else repr(delta),
                    "" if delta is None else format_delta(delta)[1:-1],
                    int(r.bold.get(col, False)),
                    ";".join(srcs),
                ]
            )
    return buf.getvalue()


@dataclass
class LanguageRow:
    model: str
    size: str
    method: str
    values: dict[str, float]
    avg: float
    sources: dict[str, str] = field(default_factory=dict)


@dataclass
class LanguageTable:
    task: str
    languages: list[str]
    rows: list[LanguageRow]


def build_language_table(cells: Sequence[Cell], task: str, spec: ReportSpec = ReportSpec()) -> LanguageTable:
    """Per-language values for one task; English shown but left out of ``avg``."""
    cells = [c for c in cells if c.task == task and c.method in spec.methods]
    if not cells:
        raise ReportError(f"no cells for task {task!r}")
    present = {c.language for c in cells}
    expected = list(spec.languages) if spec.languages else sorted(present)
    canonical = list(TASKS[task].languages) if task in TASKS else []
    langs = [l for l in canonical if l in expected] + sorted(set(expected) - set(canonical))
    averages = {
        (r.model, r.method): r.value
        for r in aggregate(cells, Grouping.BY_LANGUAGE_AVG_EXCL_EN)
    }
    rows = []
    for model, family, size in _ordered_models(cells):
        for method in spec.methods:
            mine = {c.language: c for c in cells if c.model == model and c.method == method}
            if not mine:
                continue
            absent = [l for l in langs if l not in mine and l != "en"]
            if absent:
                raise ReportError(
                    f"{model}/{method}/{task}: missing results for language(s) {', '.join(absent)}"
                )
            rows.append(
                LanguageRow(
                    family,
                    size,
                    method,
                    {l: mine[l].value * spec.scale for l in langs if l in mine},
                    averages[(model, method)] * spec.scale,
                    {l: _source(mine[l]) for l in langs if l in mine},
                )
            )
    return LanguageTable(task, langs, rows)


def render_language_markdown(table: LanguageTable) -> str:
    head = ["Model", "Size", "Method", *table.languages, "avg"]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    for r in table.rows:
        vals = [f"{round1(r.values[l]):.1f}" if l in r.values else "-" for l in table.languages]
        lines.append(
            "| " + " | ".join([r.model, r.size, METHOD_TITLES.get(r.method, r.method), *vals, f"{round1(r.avg):.1f}"]) + " |"
        )
    return "\n".join(lines) + "\n"


def render_language_csv(table: LanguageTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "model", "size", "method", "language", "value", "rounded", "source"])
    for r in table.rows:
        for l in [*table.languages, "avg"]:
            if l == "avg":
                value, src = r.avg, ""
            elif l in r.values:
                value, src = r.values[l], r.sources.get(l, "")
            else:
                continue
            w.writerow([table.task, r.model, r.size, r.method, l, repr(value), f"{round1(value):.1f}", src])
    return buf.getvalue()


@dataclass(frozen=True)
class SeriesPoint:
    model: str
    size: str
    params: float
    method: str
    group: str
    value: float


def build_scale_curve(
    cells: Sequence[Cell], spec: ReportSpec = ReportSpec()
) -> tuple[list[SeriesPoint], list[str]]:
    """Unrounded ``(size, method, group, value)`` points for plotting.

    Groups: ``avg`` (mean over all tasks) and ``high``/``low`` (resource
    classes over the XStoryCloze/XCOPA/XNLI subset). Returns the points and
    notes about series that had to be left out.
    """
    cells = [c for c in cells if c.method in spec.methods]
    if not cells:
        raise ReportError("no cells for the requested methods")
    sizes = {c.model: split_model(c.model) for c in cells}
    points: list[SeriesPoint] = []
    notes: list[str] = []
    avg = {(r.model, r.method): r.value for r in aggregate(cells, Grouping.BY_TASK_AVG)}
    res_cells = [c for c in cells if c.task in RESOURCE_TASKS]
    by_class = {}
    if res_cells:
        by_class = {(r.model, r.method, r.group): r.value for r in aggregate(res_cells, Grouping.RESOURCE_CLASS)}
    else:
        notes.append("no XStoryCloze/XCOPA/XNLI cells: resource-class series omitted")
    for cls in ("high", "low"):
        if res_cells and not any(k[2] == cls for k in by_class):
            notes.append(f"no {cls}-resource languages present: {cls} series omitted")
    for model, family, size in _ordered_models(cells):
        params = sizes[model][2]
        for method in spec.methods:
            if (model, method) not in avg:
                continue
            points.append(SeriesPoint(family, size, params, method, "avg", avg[(model, method)] * spec.scale))
            for cls in ("high", "low"):
                if (model, method, cls) in by_class:
                    points.append(SeriesPoint(family, size, params, method, cls, by_class[(model, method, cls)] * spec.scale))
    return points, notes


def render_scale_csv(points: Sequence[SeriesPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "size", "params", "method", "group", "value"])
    for p in points:
        w.writerow([p.model, p.size, repr(p.params), p.method, p.group, repr(p.value)])
    return buf.getvalue()
