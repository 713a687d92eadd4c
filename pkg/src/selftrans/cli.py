"""``selftrans`` command line: translate, eval, report and mt-metrics.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 when the
backend or the pipeline fails at runtime.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import backend as be
from .data import (
    TASKS,
    DataError,
    TaskKind,
    language,
    load_exemplars,
    load_parallel_dev,
    load_task,
    select_translation_shots,
    task_schema,
)
from .inference import EvalConfig, InferenceError, Method, config_digest, results_filename, run_evaluation
from .metrics import MetricError, comet_score, corpus_bleu, metric_line
from .prompting import PromptError, load_prompt_registry
from .report import (
    ReportError,
    ReportSpec,
    build_comparison,
    build_language_table,
    build_scale_curve,
    expand_inputs,
    load_cells,
    render_comparison_csv,
    render_comparison_markdown,
    render_language_csv,
    render_language_markdown,
    render_scale_csv,
)
from .translate import (
    MockMT,
    HttpMT,
    TranslationCache,
    TranslationError,
    Translator,
    TranslatorKind,
    translatable_texts,
)

log = logging.getLogger("selftrans")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
URL_ENV = "SELFTRANS_BACKEND_URL"


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one invocation; embedded in every manifest."""

    task: str | None = None
    langs: tuple[str, ...] = ()
    method: str = "direct"
    backend_url: str | None = None
    model: str | None = None
    mock: str | None = None
    shots: int = 4
    max_shot_chars: int = 100
    translation_max_new_tokens: int = 256
    max_new_tokens: int = 400
    normalize: str = "none"
    translator: str = "self_model"
    mt_url: str | None = None
    comet_url: str | None = None
    cache_dir: str = ".selftrans-cache"
    prompts: str | None = None
    data: str | None = None
    flores: str | None = None
    exemplars: str | None = None
    out: str = "out"
    parallelism: int = 1

    def to_json(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @property
    def digest(self) -> str:
        return config_digest(self.to_json())


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        unknown = set(raw) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(raw)
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if not values.get("backend_url") and os.environ.get(URL_ENV):
        values["backend_url"] = os.environ[URL_ENV]
    if "langs" in values:
        values["langs"] = tuple(values["langs"])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
    if cfg.task is not None and cfg.task not in TASKS:
        raise UsageError(f"unknown task {cfg.task!r}; supported: {', '.join(TASKS)}")
    try:
        Method.parse(cfg.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for code in cfg.langs:
        language(code)
    if cfg.shots < 0 or cfg.max_shot_chars <= 0 or cfg.parallelism < 1:
        raise ConfigError("--shots must be >= 0, --max-shot-chars > 0, --parallelism >= 1")
    return cfg


# --- wiring ---------------------------------------------------------------


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        flags = ", ".join("--lang" if n == "langs" else "--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"missing required setting(s): {flags}")


def make_backend(cfg: RunConfig) -> be.Backend:
    if cfg.mock:
        mock = be.MockBackend.from_file(cfg.mock)
        if cfg.model:
            mock.model_id = cfg.model
        return mock
    if not cfg.backend_url:
        raise ConfigError(f"no backend: pass --backend-url, set {URL_ENV}, or use --mock")
    if not cfg.model:
        raise ConfigError("--model is required with an HTTP backend")
    return be.HttpBackend(cfg.backend_url, cfg.model)


def _mock_mt(path: str) -> MockMT:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return MockMT({(l, s): e for l, s, e in raw.get("translations", [])}, raw.get("mt_model", "mock-mt"))


def task_file(cfg: RunConfig, lang: str) -> Path:
    path = Path(cfg.data) / cfg.task / f"{lang}.jsonl"
    if not path.exists():
        raise ConfigError(f"task data not found: {path}")
    return path


def load_shots(cfg: RunConfig, lang: str):
    _require(cfg, "flores")
    root = Path(cfg.flores)
    src, eng = root / f"{lang}.dev", root / "en.dev"
    for p in (src, eng):
        if not p.exists():
            raise ConfigError(f"parallel dev file not found: {p}")
    selection = select_translation_shots(load_parallel_dev(src, eng, lang), cfg.shots, cfg.max_shot_chars)
    if selection.shortfall:
        log.warning("%s: only %d of %d translation shots fit within %d characters",
                    lang, len(selection), cfg.shots, cfg.max_shot_chars)
    return selection.pairs


def make_translator(cfg: RunConfig, backend: be.Backend, method: Method) -> Translator:
    cache = TranslationCache(cfg.cache_dir)
    if method is Method.EXTERNAL_MT:
        mt = HttpMT(cfg.mt_url) if cfg.mt_url else (_mock_mt(cfg.mock) if cfg.mock else None)
        if mt is None:
            raise ConfigError("method mt needs --mt-url (or a mock file with translations)")
        return Translator(TranslatorKind.EXTERNAL_MT, mt=mt, cache=cache)
    kind = TranslatorKind(cfg.translator)
    if kind is TranslatorKind.IDENTITY:
        return Translator(kind, cache=cache)
    if kind is not TranslatorKind.SELF_MODEL:
        raise ConfigError("--translator must be self_model or identity for method self")
    shots = {l: load_shots(cfg, l) for l in cfg.langs if l != "en"}
    return Translator(
        kind,
        backend=backend,
        shots=shots,
        cache=cache,
        max_new_tokens=cfg.translation_max_new_tokens,
        parallelism=cfg.parallelism,
    )


# --- subcommands ----------------------------------------------------------


def cmd_translate(cfg: RunConfig) -> dict[str, int]:
    """Fill the translation cache for every field of the selected slices."""
    _require(cfg, "task", "langs", "data")
    method = Method.parse(cfg.method)
    if method is Method.DIRECT:
        method = Method.SELF_TRANSLATE
    backend = make_backend(cfg) if method is Method.SELF_TRANSLATE else None
    translator = make_translator(cfg, backend, method)
    counts = {"fresh": 0, "cached": 0, "empty": 0}
    for lang in cfg.langs:
        if lang == "en":
            continue
        instances = load_task(task_file(cfg, lang), cfg.task, lang)
        texts = [t for inst in instances for t in translatable_texts(inst)[1] if t.strip()]
        before = translator.fresh_calls
        results = translator.translate_many(texts, lang)
        counts["fresh"] += translator.fresh_calls - before
        unique = {r.record.key: r for r in results if r.record is not None}
        counts["cached"] += sum(r.cached for r in unique.values())
        counts["empty"] += sum(r.record.empty_output for r in unique.values())
    print(f"translations: {counts['fresh']} fresh, {counts['cached']} cached, {counts['empty']} empty")
    return counts


def cmd_eval(cfg: RunConfig) -> list[Path]:
    _require(cfg, "task", "langs", "data")
    method = Method.parse(cfg.method)
    backend = make_backend(cfg)
    registry = load_prompt_registry(cfg.prompts)
    translator = make_translator(cfg, backend, method) if method is not Method.DIRECT else None
    exemplars = None
    if task_schema(cfg.task).kind is TaskKind.GENERATIVE:
        _require(cfg, "exemplars")
        wanted = {"en"} if method is not Method.DIRECT else set(cfg.langs)
        exemplars = {}
        for l in sorted(wanted):
            p = Path(cfg.exemplars) / f"{l}.jsonl"
            if not p.exists():
                raise ConfigError(f"exemplar file not found: {p}")
            exemplars[l] = load_exemplars(p, l)
    eval_cfg = EvalConfig(cfg.normalize, cfg.parallelism, cfg.max_new_tokens)
    manifest = {"config": cfg.to_json(), "config_digest": cfg.digest}
    paths = []
    for lang in cfg.langs:
        instances = load_task(task_file(cfg, lang), cfg.task, lang)
        run_evaluation(
            instances,
            method,
            backend,
            registry,
            config=eval_cfg,
            translator=translator,
            exemplars=exemplars,
            out_dir=cfg.out,
            manifest=manifest,
        )
        path = Path(cfg.out) / results_filename(cfg.task, lang, method, backend.model_id)
        print(path)
        paths.append(path)
    return paths


_EXT = {"md": "md", "markdown": "md", "csv": "csv"}


def cmd_report(inputs: Sequence[str], kind: str, formats: Sequence[str], out: str, methods: Sequence[str], task: str | None) -> list[Path]:
    spec = ReportSpec(inputs=tuple(inputs), methods=tuple(methods), formats=tuple(formats))
    cells = load_cells(expand_inputs(inputs))
    rendered: dict[str, str] = {}
    if kind == "comparison":
        rows = build_comparison(cells, spec)
        rendered = {"md": render_comparison_markdown(rows), "csv": render_comparison_csv(rows)}
        stem = "comparison"
    elif kind == "language":
        if not task:
            raise UsageError("report --kind language needs --task")
        table = build_language_table(cells, task, spec)
        rendered = {"md": render_language_markdown(table), "csv": render_language_csv(table)}
        stem = f"languages.{task}"
    else:
        points, notes = build_scale_curve(cells, spec)
        for n in notes:
            print(f"note: {n}", file=sys.stderr)
        rendered = {"csv": render_scale_csv(points)}
        stem = "scale"
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in dict.fromkeys(_EXT[f] for f in formats):
        if fmt not in rendered:
            raise UsageError(f"report kind {kind} has no {fmt} output")
        path = out_dir / f"{stem}.{fmt}"
        path.write_text(rendered[fmt], encoding="utf-8")
        print(path)
        paths.append(path)
    return paths


def _lines(path: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def cmd_mt_metrics(hyp: str, ref: str, src: str | None, cfg: RunConfig, label: dict[str, str]) -> Path:
    hyps, refs = _lines(hyp), _lines(ref)
    srcs = _lines(src) if src else None
    bleu = corpus_bleu(hyps, refs)
    comet = comet_score(srcs, hyps, refs, cfg.comet_url) if srcs is not None else None
    if srcs is None and cfg.comet_url:
        log.warning("COMET needs --src; reporting it as unavailable")
    details = {
        "precisions": list(bleu.precisions),
        "brevity_penalty": bleu.brevity_penalty,
        "hyp_len": bleu.hyp_len,
        "ref_len": bleu.ref_len,
        "tokenizer": bleu.tokenizer,
    }
    lines = [
        metric_line(label["task"], label["lang"], label["method"], label["model"], "bleu", bleu.score, details),
        metric_line(
            label["task"],
            label["lang"],
            label["method"],
            label["model"],
            "comet",
            comet.score if comet else "unavailable",
            {"scorer_model_id": comet.scorer_model_id} if comet else {},
        ),
    ]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"mt_metrics.{label['lang']}.{label['model']}.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"BLEU {bleu.score:.2f}  COMET {comet.score if comet else 'unavailable'}")
    print(path)
    return path


# --- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--task")
    p.add_argument("--lang", dest="langs", action="append", help="language code (repeatable)")
    p.add_argument("--method", help="direct | self | mt")
    p.add_argument("--backend-url", dest="backend_url")
    p.add_argument("--model")
    p.add_argument("--mock", help="JSON table for the offline mock backend")
    p.add_argument("--shots", type=int)
    p.add_argument("--max-shot-chars", dest="max_shot_chars", type=int)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--normalize", choices=("none", "per_token"))
    p.add_argument("--translator", choices=("self_model", "identity"))
    p.add_argument("--mt-url", dest="mt_url")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--prompts", help="prompt registry directory")
    p.add_argument("--data", help="task data root: <data>/<task>/<lang>.jsonl")
    p.add_argument("--flores", help="parallel dev root: <flores>/<lang>.dev")
    p.add_argument("--exemplars", help="MGSM exemplars root: <exemplars>/<lang>.jsonl")
    p.add_argument("--out")
    p.add_argument("--parallelism", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selftrans", description="Self-translate evaluation harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _run_flags(sub.add_parser("translate", help="populate the translation cache"))
    _run_flags(sub.add_parser("eval", help="evaluate one method and write result files"))

    rep = sub.add_parser("report", help="render result files into tables")
    rep.add_argument("inputs", nargs="+", help="result or metric file globs")
    rep.add_argument("--kind", choices=("comparison", "language", "scale"), default="comparison")
    rep.add_argument("--format", dest="formats", action="append", choices=("md", "markdown", "csv"))
    rep.add_argument("--methods", default="direct,self_translate", help="comma-separated; first is the baseline")
    rep.add_argument("--task")
    rep.add_argument("--out", default="reports")

    mt = sub.add_parser("mt-metrics", help="corpus BLEU and (remote) COMET")
    mt.add_argument("--hyp", required=True)
    mt.add_argument("--ref", required=True)
    mt.add_argument("--src")
    mt.add_argument("--comet-url", dest="comet_url")
    mt.add_argument("--task", default="flores")
    mt.add_argument("--lang", dest="langs", action="append")
    mt.add_argument("--method", default="self_translate")
    mt.add_argument("--model", default="unknown")
    mt.add_argument("--out")
    mt.add_argument("--config")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "report":
        methods = [Method.parse(m).value for m in args.methods.split(",") if m]
        cmd_report(args.inputs, args.kind, args.formats or ["md"], args.out, methods, args.task)
        return
    if args.command == "mt-metrics":
        langs = args.langs or ["xx"]
        # --task here labels the metric line; it is not a downstream task.
        label = {"task": args.task, "lang": langs[0], "method": args.method, "model": args.model}
        args.task = args.langs = None
        cfg = resolve_config(args)
        cmd_mt_metrics(args.hyp, args.ref, args.src, cfg, label)
        return
    cfg = resolve_config(args)
    if args.command == "translate":
        cmd_translate(cfg)
    else:
        cmd_eval(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
        )
        _dispatch(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, PromptError, ReportError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (be.BackendError, TranslationError, InferenceError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
