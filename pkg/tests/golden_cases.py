"""Fixed instances behind the golden prompt snapshots in data/golden/prompts.json."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from helpers import write_jsonl
from selftrans.backend import Completion, CompletionSpec, Score, ScoreSpec
from selftrans.data import FewShotExemplar, ParallelSentencePair, language, load_task
from selftrans.inference import run_evaluation
from selftrans.prompting import load_prompt_registry
from selftrans.translate import MockMT, TranslationCache, Translator

GOLDEN = Path(__file__).parent / "data" / "golden" / "prompts.json"

ROWS = {
    ("xnli", "es"): [{"premise": "Un hombre está aquí", "hypothesis": "Alguien está aquí", "label": 0}],
    ("pawsx", "de"): [{"sentence1": "Der Hund schläft", "sentence2": "Der Hund ruht.", "label": 1}],
    ("xcopa", "it"): [
        {"premise": "Il pavimento era bagnato", "choice1": "Ha piovuto", "choice2": "Il sole splendeva", "question": "cause", "label": 0},
        {"premise": "Ho lasciato cadere il vaso", "choice1": "Si è rotto", "choice2": "Ha cantato", "question": "effect", "label": 0},
    ],
    ("xstorycloze", "es"): [
        {
            "input_sentence_1": "Ana fue al mercado.",
            "input_sentence_2": "Compró manzanas.",
            "input_sentence_3": "Volvió a casa.",
            "input_sentence_4": "Hizo una tarta.",
            "sentence_quiz1": "La tarta estaba rica.",
            "sentence_quiz2": "Ana odia las manzanas.",
            "answer_right_ending": 1,
        }
    ],
    ("mgsm", "es"): [{"question": "Juan tiene 3 perros. ¿Cuántos?", "answer_number": 3}],
}

ENGLISH = {
    "Un hombre está aquí": "A man is here",
    "Alguien está aquí": "Someone is here",
    "Der Hund schläft": "The dog sleeps",
    "Der Hund ruht.": "The dog rests.",
    "Il pavimento era bagnato": "The floor was wet",
    "Ha piovuto": "It rained",
    "Il sole splendeva": "The sun was shining",
    "Ho lasciato cadere il vaso": "I dropped the vase",
    "Si è rotto": "It broke",
    "Ha cantato": "It sang",
    "Ana fue al mercado.": "Ana went to the market.",
    "Compró manzanas.": "She bought apples.",
    "Volvió a casa.": "She went home.",
    "Hizo una tarta.": "She baked a pie.",
    "La tarta estaba rica.": "The pie was tasty.",
    "Ana odia las manzanas.": "Ana hates apples.",
    "Juan tiene 3 perros. ¿Cuántos?": "Juan has 3 dogs. How many?",
}

SHOTS = [("Hola.", "Hello."), ("Gracias.", "Thank you.")]

CASES = [
    ("xnli", "direct", "es"),
    ("xnli", "self_translate", "es"),
    ("xnli", "external_mt", "es"),
    ("pawsx", "direct", "de"),
    ("pawsx", "self_translate", "de"),
    ("xcopa", "direct", "it"),
    ("xcopa", "self_translate", "it"),
    ("xstorycloze", "direct", "es"),
    ("xstorycloze", "self_translate", "es"),
    ("mgsm", "direct", "es"),
    ("mgsm", "self_translate", "es"),
]

_QUERY = re.compile(r"(?:^|\n\n)[^\n:]+: (.*)\nEnglish:$")


@dataclass
class RecordingBackend:
    """Answers translation prompts from ``ENGLISH`` and records every other request."""

    model_id: str = "golden"
    task_calls: list = field(default_factory=list)
    translation_prompts: list = field(default_factory=list)

    def complete(self, spec: CompletionSpec) -> Completion:
        m = _QUERY.search(spec.prompt)
        if spec.stop == "\n" and m:
            self.translation_prompts.append(spec.prompt)
            return Completion(" " + ENGLISH[m.group(1)], "stop")
        self.task_calls.append(spec.prompt)
        return Completion(" The answer is 3.", "stop")

    def score(self, spec: ScoreSpec) -> Score:
        self.task_calls.append([spec.context, spec.continuation])
        return Score(-1.0, 1)


def exemplar_set(lang: str) -> list[FewShotExemplar]:
    q, a = ("q", "a") if lang == "en" else ("p", "r")
    return [FewShotExemplar(f"{q}{i}", f"{a} {i}", language(lang)) for i in range(1, 9)]


def shot_pairs(lang: str) -> list[ParallelSentencePair]:
    return [ParallelSentencePair(s, e, language(lang), i) for i, (s, e) in enumerate(SHOTS)]


def capture(task: str, method: str, lang: str, tmp_path: Path):
    path = write_jsonl(tmp_path / f"{task}.{lang}.jsonl", ROWS[(task, lang)])
    instances = load_task(path, task, lang)
    backend = RecordingBackend()
    translator = None
    if method == "self_translate":
        translator = Translator("self_model", backend=backend, shots={lang: shot_pairs(lang)}, cache=TranslationCache())
    elif method == "external_mt":
        table = {(lang, src): en for src, en in ENGLISH.items()}
        translator = Translator("external_mt", mt=MockMT(table), cache=TranslationCache())
    run_evaluation(
        instances,
        method,
        backend,
        load_prompt_registry(),
        translator=translator,
        exemplars={"en": exemplar_set("en"), lang: exemplar_set(lang)},
    )
    if task == "mgsm":
        (prompt,) = backend.task_calls
        return prompt
    return backend.task_calls


def load_golden() -> dict:
    return json.loads(GOLDEN.read_text(encoding="utf-8"))
