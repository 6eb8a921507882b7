"""Prompt rendering: generation prompts (option-focused / option-free) and
few-shot reader prompts for each supported chat family.

Templates are plain-text assets with mustache-style slots:

    {{slot_name}}                substitution (error if unfilled)
    {{#shots}} ... {{/shots}}    block repeated once per shot example

Section tags that sit alone on a line consume the whole line, so templates can
lay blocks out readably without leaking blank lines into the render. Template
assets live under assets/templates/<family>/<purpose>.tmpl and shot fixtures
under assets/shots/<benchmark>/<pair-id>.json; both can be overridden with an
explicit directory for custom prompt sets.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .corpus import OPTION_LETTERS, BenchmarkRecord
from .errors import ConfigError, DataError

FAMILIES = ("zephyr", "llama2-chat", "llama3-instruct", "phi3", "plain")

VIEW_OPTION_FOCUSED = "option-focused"
VIEW_OPTION_FREE = "option-free"

# How each family writes an option line and a worked shot answer.
_OPTION_STYLE = {
    "zephyr": "paren",
    "llama2-chat": "paren",
    "llama3-instruct": "dot",
    "phi3": "dot",
    "plain": "dot",
}
_ANSWER_STYLE = {
    "zephyr": "paren_text_period",
    "llama2-chat": "paren_text_period",
    "llama3-instruct": "dot_text_period",
    "phi3": "letter",
    "plain": "dot_text",
}

_TAG_RE = re.compile(r"\{\{([#/]?)([A-Za-z0-9_]+)\}\}")


def _assets_root(assets_dir: Optional[Union[str, Path]]) -> Path:
    if assets_dir is not None:
        return Path(assets_dir)
    return Path(str(resources.files("ctxgenie") / "assets"))


@dataclass(frozen=True)
class ShotExample:
    """One in-context demonstration: a question, optionally its option set,
    a supporting context, and the gold option index."""

    question: str
    options: Optional[tuple[str, ...]] = None
    context: Optional[str] = None
    answer_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.options is not None and self.answer_index is not None:
            if not (0 <= self.answer_index < len(self.options)):
                raise DataError(
                    f"shot answer_index {self.answer_index} out of range "
                    f"for {len(self.options)} options"
                )


@dataclass(frozen=True)
class ShotSet:
    pair_id: str
    benchmark: str
    shots: tuple[ShotExample, ...]


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    family: str
    k_contexts: int
    n_shots: int

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def load_template(family: str, purpose: str, assets_dir: Optional[Union[str, Path]] = None) -> PromptTemplate:
    path = _assets_root(assets_dir) / "templates" / family / f"{purpose}.tmpl"
    if not path.exists():
        raise ConfigError(f"template not found: {family}/{purpose} (looked at {path})")
    return PromptTemplate(template_id=f"{family}/{purpose}", text=path.read_text(encoding="utf-8"))


def _shot_from_dict(obj: dict, where: str, index: int) -> ShotExample:
    if "question" not in obj:
        raise DataError(f"{where}: shot {index} missing field 'question'")
    options = obj.get("options")
    return ShotExample(
        question=str(obj["question"]),
        options=tuple(str(o) for o in options) if options is not None else None,
        context=(str(obj["context"]) if obj.get("context") is not None else None),
        answer_index=(int(obj["answer_index"]) if obj.get("answer_index") is not None else None),
    )


def load_shots(benchmark: str, pair_id: str, assets_dir: Optional[Union[str, Path]] = None) -> ShotSet:
    path = _assets_root(assets_dir) / "shots" / benchmark / f"{pair_id}.json"
    if not path.exists():
        raise ConfigError(f"shot set not found: {benchmark}/{pair_id} (looked at {path})")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from exc
    for field in ("pair_id", "benchmark", "shots"):
        if field not in obj:
            raise DataError(f"{path}: missing field {field!r}")
    shots = tuple(_shot_from_dict(s, str(path), i) for i, s in enumerate(obj["shots"]))
    return ShotSet(pair_id=str(obj["pair_id"]), benchmark=str(obj["benchmark"]), shots=shots)


# Best-performing shot pair per (benchmark, family); families absent from the
# sweep default to the long single-shot pair (large-window models) or H.
_DEFAULT_PAIRS = {
    ("medqa", "zephyr"): "H",
    ("medqa", "llama2-chat"): "A1",
    ("medmcqa", "zephyr"): "A2",
    ("medmcqa", "llama2-chat"): "A1",
    ("mmlu", "zephyr"): "A1",
    ("mmlu", "llama2-chat"): "A2",
}
_LONG_SHOT_FAMILIES = ("llama3-instruct", "phi3")


def benchmark_base(dataset_tag: str) -> str:
    """Collapse a dataset tag to the shot-directory family it draws from."""
    tag = dataset_tag.lower()
    if tag.startswith("medqa"):
        return "medqa"
    if tag.startswith("medmcqa"):
        return "medmcqa"
    if tag.startswith("mmlu"):
        return "mmlu"
    return "medqa"


def shots_directory(dataset_tag: str) -> str:
    """The mmlu exemplars are the medmcqa ones; everything else maps 1:1."""
    base = benchmark_base(dataset_tag)
    return "medmcqa" if base == "mmlu" else base


def default_pair(dataset_tag: str, family: str) -> str:
    base = benchmark_base(dataset_tag)
    if (base, family) in _DEFAULT_PAIRS:
        return _DEFAULT_PAIRS[(base, family)]
    if family in _LONG_SHOT_FAMILIES and base == "medqa":
        return "long"
    return "H"


def letter_menu(n_options: int) -> str:
    """Human enumeration of the live letters: 'A, B, C or D' for four options."""
    letters = list(OPTION_LETTERS[:n_options])
    if len(letters) < 2:
        raise DataError("letter menu needs at least two options")
    return ", ".join(letters[:-1]) + " or " + letters[-1]


def format_option_set(options: Sequence[str], style: str) -> str:
    if style == "paren":
        lines = [f"({OPTION_LETTERS[i]}) {text}" for i, text in enumerate(options)]
    elif style == "dot":
        lines = [f"{OPTION_LETTERS[i]}. {text}" for i, text in enumerate(options)]
    elif style == "dash":
        lines = [f"- {text}" for text in options]
    else:
        raise ConfigError(f"unknown option style {style!r}")
    return "\n".join(lines)


def format_shot_answer(shot: ShotExample, style: str) -> str:
    if shot.options is None or shot.answer_index is None:
        raise DataError("reader shots need both 'options' and 'answer_index'")
    letter = OPTION_LETTERS[shot.answer_index]
    text = shot.options[shot.answer_index]
    if style == "paren_text_period":
        return f"({letter}) {text}."
    if style == "dot_text_period":
        return f"{letter}. {text}."
    if style == "dot_text":
        return f"{letter}. {text}"
    if style == "letter":
        return letter
    raise ConfigError(f"unknown answer style {style!r}")


def _widen_standalone(text: str, start: int, end: int) -> tuple[int, int]:
    """Expand a tag span to swallow its whole line when the tag stands alone."""
    line_start = text.rfind("\n", 0, start) + 1
    nl = text.find("\n", end)
    line_end = len(text) if nl == -1 else nl + 1
    before = text[line_start:start]
    after = text[end:line_end]
    if before.strip() == "" and after.strip() == "":
        return line_start, line_end
    return start, end


def _expand_sections(template: PromptTemplate, text: str, sections: dict[str, list[dict]]) -> str:
    out = []
    pos = 0
    while True:
        match = re.search(r"\{\{#([A-Za-z0-9_]+)\}\}", text[pos:])
        if match is None:
            out.append(text[pos:])
            break
        name = match.group(1)
        open_start, open_end = pos + match.start(), pos + match.end()
        close_tag = "{{/" + name + "}}"
        close_start = text.find(close_tag, open_end)
        if close_start == -1:
            raise ConfigError(f"template {template.template_id}: unclosed section {name!r}")
        close_end = close_start + len(close_tag)

        o_start, o_end = _widen_standalone(text, open_start, open_end)
        c_start, c_end = _widen_standalone(text, close_start, close_end)
        block = text[o_end:c_start]

        if name not in sections:
            raise ConfigError(f"template {template.template_id}: no data for section {name!r}")
        rendered_items = []
        for item in sections[name]:
            rendered_items.append(_substitute(template, block, item, partial=True))
        out.append(text[pos:o_start])
        out.append("".join(rendered_items))
        pos = c_end
    return "".join(out)


def _substitute(template: PromptTemplate, text: str, values: dict, partial: bool = False) -> str:
    def repl(match: re.Match) -> str:
        kind, name = match.group(1), match.group(2)
        if kind:
            raise ConfigError(
                f"template {template.template_id}: nested section tag {match.group(0)!r}"
            )
        if name in values:
            return str(values[name])
        if partial:
            return match.group(0)
        raise ConfigError(f"template {template.template_id}: unresolved slot {name!r}")

    return _TAG_RE.sub(repl, text)


def render_template(template: PromptTemplate, values: dict, sections: Optional[dict[str, list[dict]]] = None) -> str:
    text = _expand_sections(template, template.text, sections or {})
    return _substitute(template, text, values, partial=False)


def _generation_shot_items(shots: Sequence[ShotExample], with_options: bool) -> list[dict]:
    items = []
    for i, shot in enumerate(shots):
        if shot.context is None:
            raise DataError(f"generation shot {i} missing field 'context'")
        item = {"shot_question": shot.question, "shot_context": shot.context}
        if with_options:
            if shot.options is None:
                raise DataError(f"generation shot {i} missing field 'options'")
            item["shot_options"] = format_option_set(shot.options, "dash")
        items.append(item)
    return items


def render_option_focused(
    record: BenchmarkRecord,
    shots: Sequence[ShotExample],
    template: Optional[PromptTemplate] = None,
    assets_dir: Optional[Union[str, Path]] = None,
) -> str:
    """Generation prompt conditioned on the question and its option set.

    Options render as "- text" lines in positional order and the prompt ends
    with the "### Context:" cue the generator completes from.
    """
    template = template or load_template("plain", "option_focused", assets_dir)
    text = render_template(
        template,
        values={
            "new_question": record.question,
            "new_option_set": format_option_set(record.options, "dash"),
        },
        sections={"shots": _generation_shot_items(shots, with_options=True)},
    )
    if not text.rstrip("\n").endswith("### Context:"):
        raise ConfigError(
            f"template {template.template_id}: option-focused prompt must end "
            "with the '### Context:' cue"
        )
    return text


def render_option_free(
    record: BenchmarkRecord,
    shots: Sequence[ShotExample],
    template: Optional[PromptTemplate] = None,
    assets_dir: Optional[Union[str, Path]] = None,
) -> str:
    """Generation prompt conditioned on the question alone: no option text
    anywhere, so the resulting context cannot lean on the candidate answers."""
    template = template or load_template("plain", "option_free", assets_dir)
    text = render_template(
        template,
        values={"new_question": record.question},
        sections={"shots": _generation_shot_items(shots, with_options=False)},
    )
    if not text.rstrip("\n").endswith("### Context:"):
        raise ConfigError(
            f"template {template.template_id}: option-free prompt must end "
            "with the '### Context:' cue"
        )
    return text


def _context_view(ctx) -> Optional[str]:
    return getattr(ctx, "view", None)


def _context_text(ctx) -> str:
    return ctx if isinstance(ctx, str) else ctx.text


def _check_context_order(views: Sequence[Optional[str]]) -> None:
    seen_free = False
    for view in views:
        if view == VIEW_OPTION_FREE:
            seen_free = True
        elif view == VIEW_OPTION_FOCUSED and seen_free:
            raise DataError(
                "grounding order violation: an option-focused context appears "
                "after an option-free one"
            )


def render_reader_prompt(
    record: BenchmarkRecord,
    contexts: Sequence,
    family: str,
    shots: Sequence[ShotExample],
    k_contexts: int,
    template: Optional[PromptTemplate] = None,
    context_separator: str = "\n",
    assets_dir: Optional[Union[str, Path]] = None,
) -> RenderedPrompt:
    """Few-shot reader prompt for one record.

    The first `k_contexts` grounding texts are concatenated (newline-separated
    by default) into the context block; option-focused contexts must precede
    option-free ones within that prefix. k_contexts == 0 selects the family's
    no-grounding template. Contexts may be plain strings or objects with
    .text / .view attributes.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown prompt family {family!r} (expected one of {FAMILIES})")
    if k_contexts < 0:
        raise ConfigError("k_contexts must be >= 0")
    if k_contexts > len(contexts):
        raise DataError(
            f"record {record.id!r}: asked for {k_contexts} contexts but grounding has {len(contexts)}"
        )
    selected = list(contexts[:k_contexts])
    _check_context_order([_context_view(c) for c in selected])

    purpose = "reader_grounded" if k_contexts > 0 else "reader_plain"
    template = template or load_template(family, purpose, assets_dir)
    option_style = _OPTION_STYLE[family]
    answer_style = _ANSWER_STYLE[family]

    shot_items = []
    for i, shot in enumerate(shots):
        if shot.options is None or shot.answer_index is None:
            raise DataError(f"reader shot {i} missing field 'options' or 'answer_index'")
        item = {
            "shot_number": str(i + 1),
            "shot_question": shot.question,
            "shot_options": format_option_set(shot.options, option_style),
            "shot_answer": format_shot_answer(shot, answer_style),
            "shot_letter_menu": letter_menu(len(shot.options)),
        }
        if k_contexts > 0:
            if shot.context is None:
                raise DataError(f"reader shot {i} missing field 'context' (grounded prompt)")
            item["shot_context"] = shot.context
        elif shot.context is not None:
            item["shot_context"] = shot.context
        shot_items.append(item)

    values = {
        "new_question": record.question,
        "new_option_set": format_option_set(record.options, option_style),
        "letter_menu": letter_menu(len(record.options)),
    }
    if k_contexts > 0:
        values["new_context"] = context_separator.join(_context_text(c) for c in selected)

    text = render_template(template, values, sections={"shots": shot_items})
    return RenderedPrompt(text=text, family=family, k_contexts=k_contexts, n_shots=len(shots))
