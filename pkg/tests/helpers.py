"""Fixture builders shared by the test modules."""

from __future__ import annotations

import json
import random
from pathlib import Path

from selftrans.backend import MockBackend
from selftrans.data import FewShotExemplar, language, load_task
from selftrans.prompting import render_choices

NOUNS = "cat dog teacher river city child farmer window storm letter".split()
VERBS = "sleeps runs waits sings falls writes opens breaks grows leaves".split()


def sentence(rng: random.Random) -> str:
    return f"The {rng.choice(NOUNS)} {rng.choice(VERBS)} near the {rng.choice(NOUNS)}."


def write_jsonl(path: Path, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
    return path


def task_rows(task: str, n: int, seed: int = 0) -> list[dict]:
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        if task == "xnli":
            rows.append({"premise": sentence(rng), "hypothesis": sentence(rng), "label": rng.randrange(3)})
        elif task == "pawsx":
            rows.append({"sentence1": sentence(rng), "sentence2": sentence(rng), "label": rng.randrange(2)})
        elif task == "xcopa":
            rows.append(
                {
                    "premise": sentence(rng),
                    "choice1": sentence(rng),
                    "choice2": sentence(rng),
                    "question": rng.choice(["cause", "effect"]),
                    "label": rng.randrange(2),
                }
            )
        elif task == "xstorycloze":
            row = {f"input_sentence_{k}": sentence(rng) for k in range(1, 5)}
            row.update(
                sentence_quiz1=sentence(rng), sentence_quiz2=sentence(rng), answer_right_ending=rng.choice([1, 2])
            )
            rows.append(row)
        elif task == "mgsm":
            a, b = rng.randrange(1, 50), rng.randrange(1, 50)
            rows.append({"question": f"Ann has {a} apples and buys {b} more. How many apples? ({i})", "answer_number": a + b})
        else:
            raise ValueError(task)
    return rows


def make_instances(tmp_path: Path, task: str, lang: str, n: int, seed: int = 0):
    path = write_jsonl(tmp_path / "data" / task / f"{lang}.jsonl", task_rows(task, n, seed))
    return load_task(path, task, lang)


def random_score_mock(instances, template, seed: int = 0, model_id: str = "mock") -> MockBackend:
    """Mock with a random log-probability for every rendered choice."""
    rng = random.Random(seed)
    scores = {}
    for inst in instances:
        for ch in render_choices(inst, template):
            scores[(ch.context, ch.continuation)] = round(-rng.uniform(0.1, 20.0), 3)
    return MockBackend(scores=scores, model_id=model_id)


def exemplars(lang: str = "en") -> list[FewShotExemplar]:
    return [
        FewShotExemplar(
            f"Tom has {i} marbles and finds {i + 1} more. How many does he have?",
            f"Tom starts with {i}. He finds {i + 1}. {i} + {i + 1} = {2 * i + 1}. The answer is {2 * i + 1}.",
            language(lang),
        )
        for i in range(1, 9)
    ]


def write_parallel(root: Path, lang: str, source: list[str], english: list[str]) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{lang}.dev").write_text("\n".join(source) + "\n", encoding="utf-8")
    (root / "en.dev").write_text("\n".join(english) + "\n", encoding="utf-8")
