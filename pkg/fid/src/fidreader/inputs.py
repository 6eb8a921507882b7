"""Input assembly: one record plus its contexts become independent pairs.

Each ``<context, question, options>`` tuple is rendered as one flat string —

    ``context: {c} [SEP] question: {q} [SEP] options: {A}``

— tokenized on its own, and truncated to a per-pair token budget.  The pair
strings never see each other: the encoder processes each independently and
only the encoder states are fused downstream.  ``[SEP]`` is this package's
documented separator token (see :mod:`fidreader.tokenizer`).

Pair order matters and is fixed: option-focused contexts always come before
option-free ones.  At most :data:`MAX_PAIRS` pairs are assembled.

Token budgets: long-form exam stems (MedQA-style) fit comfortably in
:data:`BUDGET_LONG` = 1024 tokens per pair; short single-sentence stems
(MedMCQA-style) use :data:`BUDGET_SHORT` = 600.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .errors import InputError
from .tokenizer import OPTION_LETTERS, HashTokenizer

#: Per-pair token budgets.
BUDGET_LONG = 1024
BUDGET_SHORT = 600

#: Hard ceiling on independently encoded pairs.
MAX_PAIRS = 5

PAIR_TEMPLATE = "context: {context} [SEP] question: {question} [SEP] options: {options}"

VIEW_OPTION_FOCUSED = "option-focused"
VIEW_OPTION_FREE = "option-free"


def format_option_block(options: Sequence[str]) -> str:
    """Render options as lettered lines: ``A. first\\nB. second`` ..."""
    if not 1 <= len(options) <= len(OPTION_LETTERS):
        raise InputError(f"expected 1..{len(OPTION_LETTERS)} options, got {len(options)}")
    return "\n".join(f"{OPTION_LETTERS[i]}. {text}" for i, text in enumerate(options))


@dataclass(frozen=True)
class FidPair:
    """One independently encoded ``<context, question, options>`` pair."""

    text: str
    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class FidInput:
    """The assembled reader input: up to :data:`MAX_PAIRS` independent pairs."""

    question: str
    option_block: str
    pairs: tuple[FidPair, ...]
    budget: int
    n_options: int

    def __post_init__(self) -> None:
        if not 1 <= len(self.pairs) <= MAX_PAIRS:
            raise InputError(f"expected 1..{MAX_PAIRS} pairs, got {len(self.pairs)}")
        for i, pair in enumerate(self.pairs):
            if len(pair.token_ids) > self.budget:
                raise InputError(
                    f"pair {i} holds {len(pair.token_ids)} tokens, budget is {self.budget}"
                )
        if not 1 <= self.n_options <= len(OPTION_LETTERS):
            raise InputError(f"n_options must be in 1..{len(OPTION_LETTERS)}")

    @property
    def letters(self) -> tuple[str, ...]:
        """The option letters this input can answer with."""
        return tuple(OPTION_LETTERS[: self.n_options])


def build_input(
    question: str,
    options: Sequence[str],
    contexts: Sequence[str],
    *,
    tokenizer: HashTokenizer,
    budget: int = BUDGET_LONG,
) -> FidInput:
    """Assemble pairs from pre-ordered context strings.

    An empty context list degenerates to a single pair with an empty context
    field, so a context-free question is still a valid (k=1) input.  Each
    pair is tokenized independently and truncated to exactly ``budget`` tokens
    when longer.
    """
    if budget < 1:
        raise InputError(f"budget must be >= 1, got {budget}")
    if len(contexts) > MAX_PAIRS:
        raise InputError(f"expected at most {MAX_PAIRS} contexts, got {len(contexts)}")
    option_block = format_option_block(options)
    texts = list(contexts) if contexts else [""]
    pairs = []
    for context in texts:
        text = PAIR_TEMPLATE.format(context=context, question=question, options=option_block)
        ids = tuple(tokenizer.encode(text)[:budget])
        pairs.append(FidPair(text=text, token_ids=ids))
    return FidInput(
        question=question,
        option_block=option_block,
        pairs=tuple(pairs),
        budget=budget,
        n_options=len(options),
    )


def ordered_context_texts(bundle: Mapping[str, Any] | Sequence[Any], k: int) -> list[str]:
    """Pick ``k`` context texts, option-focused ones first.

    ``bundle`` is either a mapping with a ``contexts`` list of
    ``{"text", "view"}`` entries (the bundle artifact layout) or a plain
    sequence of such entries / bare strings.  Bare strings are treated as
    already ordered.  Relative order within each view is preserved.
    """
    if isinstance(bundle, Mapping):
        entries = bundle.get("contexts")
        if not isinstance(entries, Sequence) or isinstance(entries, str):
            raise InputError("bundle has no 'contexts' list")
    else:
        entries = bundle
    focused: list[str] = []
    free: list[str] = []
    for entry in entries:
        if isinstance(entry, str):
            # Bare strings carry no view tag: keep them in given order, ahead
            # of any tagged option-free entries.
            focused.append(entry)
        elif isinstance(entry, Mapping):
            text = entry.get("text")
            if not isinstance(text, str):
                raise InputError("bundle context entry has no 'text'")
            view = entry.get("view", VIEW_OPTION_FOCUSED)
            (focused if view == VIEW_OPTION_FOCUSED else free).append(text)
        else:
            raise InputError(f"unsupported bundle context entry: {type(entry).__name__}")
    ordered = focused + free
    if k > len(ordered):
        raise InputError(f"bundle holds {len(ordered)} contexts, need k={k}")
    return ordered[:k]


def assemble(
    record: Mapping[str, Any],
    bundle: Mapping[str, Any] | Sequence[Any],
    k: int,
    *,
    tokenizer: HashTokenizer,
    budget: int = BUDGET_LONG,
) -> FidInput:
    """Assemble the input for one benchmark record and its context bundle.

    ``record`` needs ``question`` and ``options`` keys (the benchmark record
    layout).  ``k`` of the bundle's contexts are used, option-focused first.
    """
    if not 1 <= k <= MAX_PAIRS:
        raise InputError(f"k must be in 1..{MAX_PAIRS}, got {k}")
    question = record.get("question")
    options = record.get("options")
    if not isinstance(question, str) or not isinstance(options, Sequence):
        raise InputError("record needs 'question' and 'options'")
    contexts = ordered_context_texts(bundle, k)
    return build_input(question, options, contexts, tokenizer=tokenizer, budget=budget)
