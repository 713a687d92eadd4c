"""Byte-exact prompt rendering.

Template files are UTF-8 text. Header lines come first::

    verbalizer: entailment=Yes; neutral=Also; contradiction=No
    selector: question_type            (optional)

and the remaining lines are the template body, with ``{field}`` slots and a
single ``[MASK]`` marker. With a selector, each body line is
``<variant>: <template>`` and the instance's selector field picks the line.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .data import (
    FewShotExemplar,
    LanguageTag,
    ParallelSentencePair,
    TaskInstance,
    TaskKind,
    language,
)

MASK = "[MASK]"
IDENTITY = "identity"
MGSM_SHOTS = 8

_SLOT = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    task_name: str
    language: LanguageTag
    # variant name -> body; a template without a selector has the single key ""
    bodies: Mapping[str, str]
    # label -> word, IDENTITY, or None (generative)
    verbalizer: Mapping[str, str] | str | None
    variant_selector: str | None = None
    source: str = "<memory>"

    def __post_init__(self) -> None:
        for variant, body in self.bodies.items():
            where = f"{self.source}" + (f" [{variant}]" if variant else "")
            if body.count(MASK) != 1:
                raise PromptError(f"{where}: template must contain exactly one {MASK}")
            slots = _SLOT.findall(body)
            if len(slots) != len(set(slots)):
                raise PromptError(f"{where}: a slot is referenced more than once")
            if not body.endswith(MASK) and self.verbalizer is None:
                raise PromptError(f"{where}: generative template must end with {MASK}")
            if not body.split(MASK)[0].endswith(" ") and body.index(MASK) > 0:
                raise PromptError(f"{where}: {MASK} must be preceded by a single space")

    @property
    def is_identity(self) -> bool:
        return self.verbalizer == IDENTITY

    def body_for(self, instance: TaskInstance) -> str:
        if self.variant_selector is None:
            return self.bodies[""]
        key = instance.fields.get(self.variant_selector)
        if key not in self.bodies:
            raise PromptError(
                f"{instance.task_id}: no template variant for "
                f"{self.variant_selector}={key!r} in {self.source}"
            )
        return self.bodies[key]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.task_name, self.language.code, sorted(self.bodies.items()))).encode())
        verb = self.verbalizer if not isinstance(self.verbalizer, Mapping) else sorted(self.verbalizer.items())
        h.update(repr((verb, self.variant_selector)).encode())
        return h.hexdigest()[:16]


def parse_template(text: str, task_name: str, lang: str | LanguageTag, source: str = "<memory>") -> PromptTemplate:
    verbalizer: Mapping[str, str] | str | None = None
    seen_verbalizer = False
    selector = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        head, sep, rest = lines[i].partition(":")
        if not sep or head.strip() not in ("verbalizer", "selector"):
            break
        rest = rest.strip()
        if head.strip() == "selector":
            selector = rest
        else:
            seen_verbalizer = True
            if rest == IDENTITY:
                verbalizer = IDENTITY
            elif rest == "none":
                verbalizer = None
            else:
                mapping = {}
                for item in rest.split(";"):
                    label, eq, word = item.partition("=")
                    if not eq or not label.strip() or not word.strip():
                        raise PromptError(f"{source}: bad verbalizer entry {item!r}")
                    mapping[label.strip()] = word.strip()
                verbalizer = mapping
        i += 1
    if not seen_verbalizer:
        raise PromptError(f"{source}: missing 'verbalizer:' header line")
    body_lines = lines[i:]
    while body_lines and not body_lines[-1].strip():
        body_lines.pop()
    if not body_lines:
        raise PromptError(f"{source}: empty template body")
    if selector is None:
        bodies = {"": "\n".join(body_lines)}
    else:
        bodies = {}
        for line in body_lines:
            variant, sep, body = line.partition(":")
            if not sep:
                raise PromptError(f"{source}: variant line must look like '<name>: <template>'")
            bodies[variant.strip()] = body.strip()
    return PromptTemplate(task_name, language(lang), bodies, verbalizer, selector, source)


def load_template(path: str | Path, task_name: str, lang: str | LanguageTag) -> PromptTemplate:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), task_name, lang, source=str(path))


class PromptRegistry:
    """(task, language) -> template lookup with no cross-language fallback."""

    def __init__(self, templates: Mapping[tuple[str, str], PromptTemplate]):
        self._templates = dict(templates)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def keys(self):
        return self._templates.keys()

    def get(self, task: str, lang: str | LanguageTag) -> PromptTemplate:
        code = lang.code if isinstance(lang, LanguageTag) else lang
        try:
            return self._templates[(task, code)]
        except KeyError:
            raise PromptError(
                f"no {task} prompt for language {code!r}; add {task}/{code}.txt to the registry"
            ) from None

    def __getitem__(self, key: tuple[str, str]) -> PromptTemplate:
        return self.get(*key)


def load_prompt_registry(path: str | Path | None = None) -> PromptRegistry:
    """Load ``<dir>/<task>/<lang>.txt`` files; ``None`` loads the shipped registry."""
    if path is None:
        root = resources.files("selftrans").joinpath("resources", "prompts")
        with resources.as_file(root) as real:
            return load_prompt_registry(real)
    root = Path(path)
    if not root.is_dir():
        raise PromptError(f"prompt registry {root} is not a directory")
    templates = {}
    for file in sorted(root.glob("*/*.txt")):
        task, code = file.parent.name, file.stem
        templates[(task, code)] = load_template(file, task, code)
    return PromptRegistry(templates)


def _substitute(body: str, values: Mapping[str, str], task_id: str) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise PromptError(f"{task_id}: missing value for slot {{{name}}}")
        return values[name]

    return _SLOT.sub(repl, body)


@dataclass(frozen=True)
class RenderedChoice:
    context: str
    continuation: str


def render_choices(instance: TaskInstance, template: PromptTemplate) -> list[RenderedChoice]:
    """One (context, continuation) pair per candidate, in candidate order.

    The context is everything before the mask without its separating space;
    the continuation starts with that space, then the verbalized candidate and
    any template tail.
    """
    if instance.kind is not TaskKind.MULTIPLE_CHOICE:
        raise PromptError(f"{instance.task_id}: render_choices needs a multiple-choice instance")
    if template.task_name != instance.task:
        raise PromptError(f"template for {template.task_name} used on {instance.task} instance")
    if template.verbalizer is None:
        raise PromptError(f"{template.source}: multiple-choice template needs a verbalizer")
    if isinstance(template.verbalizer, Mapping) and len(template.verbalizer) != len(instance.candidates):
        raise PromptError(
            f"{instance.task_id}: {len(instance.candidates)} candidates but verbalizer "
            f"has {len(template.verbalizer)} entries"
        )
    body = template.body_for(instance)
    head, tail = body.split(MASK)
    context = _substitute(head, instance.fields, instance.task_id)[:-1]
    tail = _substitute(tail, instance.fields, instance.task_id)
    choices = []
    for cand in instance.candidates:
        if template.is_identity:
            word = cand
        else:
            try:
                word = template.verbalizer[cand]
            except KeyError:
                raise PromptError(f"{template.source}: no verbalizer word for label {cand!r}") from None
        choices.append(RenderedChoice(context, " " + word + tail))
    return choices


def render_generative(
    instance: TaskInstance, template: PromptTemplate, exemplars: Sequence[FewShotExemplar]
) -> str:
    """Eight solved exemplar blocks then the query block, separated by blank lines."""
    if instance.kind is not TaskKind.GENERATIVE:
        raise PromptError(f"{instance.task_id}: render_generative needs a generative instance")
    if len(exemplars) != MGSM_SHOTS:
        raise PromptError(f"expected {MGSM_SHOTS} exemplars, got {len(exemplars)}")
    for ex in exemplars:
        if ex.language != template.language:
            raise PromptError(
                f"exemplar language {ex.language.code} does not match template language "
                f"{template.language.code}"
            )
    body = template.body_for(instance)
    blocks = []
    for ex in exemplars:
        filled = _substitute(body, {"question": ex.question}, "exemplar")
        blocks.append(filled.replace(MASK, ex.chain_of_thought_answer))
    query = _substitute(body, instance.fields, instance.task_id)
    blocks.append(query[: -len(MASK) - 1])
    return "\n\n".join(blocks)


@dataclass(frozen=True)
class TranslationPrompt:
    shots: tuple[tuple[str, str], ...]
    query_source: str
    rendered: str
    stop_sequence: str = "\n"


def render_shot_block(shots: Sequence[ParallelSentencePair], lang: LanguageTag) -> str:
    return "".join(
        f"{lang.display_name}: {s.source_text}\nEnglish: {s.english_text}\n\n" for s in shots
    )


def build_translation_prompt(
    shots: Sequence[ParallelSentencePair], query: str, lang: str | LanguageTag
) -> TranslationPrompt:
    lang = language(lang)
    if not query or not query.strip():
        raise PromptError("translation query is empty")
    rendered = render_shot_block(shots, lang) + f"{lang.display_name}: {query}\nEnglish:"
    return TranslationPrompt(
        shots=tuple((s.source_text, s.english_text) for s in shots),
        query_source=query,
        rendered=rendered,
    )


def translation_fingerprint(shots: Sequence[ParallelSentencePair], lang: str | LanguageTag) -> str:
    """Digest of the translation prompt layout and shots for one language."""
    lang = language(lang)
    layout = render_shot_block(shots, lang) + f"{lang.display_name}: {{query}}\nEnglish:"
    return hashlib.sha256(layout.encode("utf-8")).hexdigest()[:16]
