"""Multiple-choice reading: prompt the reader endpoint and grade replies.

The reader is greedy by construction (temperature 0, single completion) so
repeated runs produce identical predictions.  Replies are graded by scanning
for the chosen letter:

1. an explicit verdict — "The answer is (X)" or "The answer is X";
2. a leading marker — the reply starts with "(X)", "X." or "X)";
3. otherwise the first standalone capital A–E in the first line.

The first matching rule decides.  A letter outside the record's option range
counts as unparseable, and unparseable replies are graded incorrect while
feeding the parse-failure rate.

A prompt that overflows the reader's context window is retried once with one
fewer grounding context; the prediction is flagged.  Predictions carry no
timing data — wall-clock measurements go to a separate sidecar so the
canonical log is byte-stable across runs.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .corpus import OPTION_LETTERS, BenchmarkRecord
from .errors import ContextWindowExceeded, DataError
from .evalsuite.metrics import VIEW_OPTION_FOCUSED, VIEW_OPTION_FREE, TrialPassage
from .gateway import GenerationRequest, LlmGateway
from .prompts import ShotExample, render_reader_prompt
from .retrieval import rerank_order

_VERDICT = re.compile(r"[Tt]he answer is\s*:?\s*\(?([A-E])\b\)?")
_LEADING = re.compile(r"^\s*(?:\(([A-E])\)|([A-E])[.)])")
_STANDALONE = re.compile(r"\b([A-E])\b")


def extract_choice(reply: str, n_options: int) -> Optional[str]:
    """Extract the chosen option letter from a reader reply.

    Rules 1 and 2 accept any capital A–E and return ``None`` when the matched
    letter is outside the record's option range (the first matching rule is
    final).  Rule 3 scans the first line for the first standalone letter that
    is *within* range, since a stray out-of-range capital there carries no
    verdict.
    """
    if not 1 <= n_options <= len(OPTION_LETTERS):
        raise DataError(f"n_options must be in 1..{len(OPTION_LETTERS)}")
    match = _VERDICT.search(reply)
    if match:
        letter = match.group(1)
        return letter if OPTION_LETTERS.index(letter) < n_options else None
    match = _LEADING.match(reply)
    if match:
        letter = match.group(1) or match.group(2)
        return letter if OPTION_LETTERS.index(letter) < n_options else None
    first_line = reply.strip().split("\n", 1)[0]
    for match in _STANDALONE.finditer(first_line):
        if OPTION_LETTERS.index(match.group(1)) < n_options:
            return match.group(1)
    return None


#: Grounding mode labels carried by predictions.
GROUNDING_NONE = "none"
GROUNDING_GENERATED = "generated"
GROUNDING_RETRIEVED = "retrieved"
GROUNDING_MIXED = "mixed"
GROUNDING_MODES = (
    GROUNDING_NONE,
    GROUNDING_GENERATED,
    GROUNDING_RETRIEVED,
    GROUNDING_MIXED,
)


@dataclass(frozen=True)
class Prediction:
    """One graded reader reply.

    ``correct`` is ``None`` exactly when the reply was unparseable
    (``extracted_letter`` is ``None``); accuracy grades those incorrect while
    the parse-failure rate tracks them separately.  ``latency`` is wall-clock
    seconds and deliberately excluded from :meth:`to_dict` so the canonical
    prediction log stays byte-stable; timings go to a sidecar.
    """

    record_id: str
    extracted_letter: Optional[str]
    predicted_index: Optional[int]
    gold_index: int
    gold_letter: str
    correct: Optional[bool]
    grounding: str
    k_contexts: int
    overflow_retried: bool
    reply_text: str
    prompt_fingerprint: str
    latency: float = 0.0

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "extracted_letter": self.extracted_letter,
            "predicted_index": self.predicted_index,
            "gold_index": self.gold_index,
            "gold_letter": self.gold_letter,
            "correct": self.correct,
            "grounding": self.grounding,
            "k_contexts": self.k_contexts,
            "overflow_retried": self.overflow_retried,
            "reply_text": self.reply_text,
            "prompt_fingerprint": self.prompt_fingerprint,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Prediction":
        correct = obj.get("correct")
        return cls(
            record_id=str(obj["record_id"]),
            extracted_letter=obj.get("extracted_letter"),
            predicted_index=obj.get("predicted_index"),
            gold_index=int(obj["gold_index"]),
            gold_letter=str(obj["gold_letter"]),
            correct=None if correct is None else bool(correct),
            grounding=str(obj.get("grounding", GROUNDING_NONE)),
            k_contexts=int(obj["k_contexts"]),
            overflow_retried=bool(obj.get("overflow_retried", False)),
            reply_text=str(obj.get("reply_text", "")),
            prompt_fingerprint=str(obj.get("prompt_fingerprint", "")),
        )


class Reader:
    """Answers benchmark records over the reader endpoint."""

    def __init__(
        self,
        gateway: LlmGateway,
        family: str,
        shots: Sequence[ShotExample],
        k_contexts: int = 5,
        max_new_tokens: int = 128,
        context_separator: str = "\n",
        seed: Optional[int] = 0,
        role: str = "reader",
        assets_dir: Optional[Union[str, Path]] = None,
    ) -> None:
        self.gateway = gateway
        self.family = family
        self.shots = list(shots)
        self.k_contexts = k_contexts
        self.max_new_tokens = max_new_tokens
        self.context_separator = context_separator
        self.seed = seed
        self.role = role
        self.assets_dir = assets_dir

    def _ask(self, record: BenchmarkRecord, contexts: Sequence, k: int) -> tuple[str, str]:
        prompt = render_reader_prompt(
            record,
            contexts,
            family=self.family,
            shots=self.shots,
            k_contexts=k,
            context_separator=self.context_separator,
            assets_dir=self.assets_dir,
        )
        request = GenerationRequest(
            prompt=prompt.text,
            temperature=0.0,
            n=1,
            max_new_tokens=self.max_new_tokens,
            seed=self.seed,
        )
        assert request.greedy
        completions = self.gateway.complete(request, role=self.role)
        return completions[0].text, prompt.fingerprint

    def answer(
        self,
        record: BenchmarkRecord,
        contexts: Sequence = (),
        k_contexts: Optional[int] = None,
        grounding_label: Optional[str] = None,
    ) -> Prediction:
        """Answer one record grounded on the first ``k_contexts`` contexts.

        On a context-window overflow the call is retried once with one fewer
        context and the prediction is flagged ``overflow_retried``.  The
        ``grounding_label`` defaults to "generated" for grounded prompts and
        "none" for ungrounded ones.
        """
        k = self.k_contexts if k_contexts is None else k_contexts
        if grounding_label is None:
            grounding_label = (
                GROUNDING_GENERATED if k > 0 and len(contexts) > 0 else GROUNDING_NONE
            )
        if grounding_label not in GROUNDING_MODES:
            raise DataError(f"unknown grounding label {grounding_label!r}")
        started = time.perf_counter()
        overflow_retried = False
        try:
            reply, fingerprint = self._ask(record, contexts, k)
        except ContextWindowExceeded:
            if k == 0:
                raise
            overflow_retried = True
            k = k - 1
            reply, fingerprint = self._ask(record, contexts, k)
        latency = time.perf_counter() - started
        letter = extract_choice(reply, len(record.options))
        predicted_index = OPTION_LETTERS.index(letter) if letter is not None else None
        correct = None if letter is None else predicted_index == record.gold_index
        return Prediction(
            record_id=record.id,
            extracted_letter=letter,
            predicted_index=predicted_index,
            gold_index=record.gold_index,
            gold_letter=record.gold_letter,
            correct=correct,
            grounding=grounding_label,
            k_contexts=k,
            overflow_retried=overflow_retried,
            reply_text=reply,
            prompt_fingerprint=fingerprint,
            latency=latency,
        )

    def answer_all(
        self,
        records: Sequence[BenchmarkRecord],
        grounding: Optional[Mapping[str, Sequence]] = None,
        k_contexts: Optional[int] = None,
        grounding_label: Optional[str] = None,
    ) -> tuple[list[Prediction], list[float]]:
        """Answer records in input order; returns predictions and wall times.

        ``grounding`` maps record id to its ordered context list; records
        missing from the map are an error unless answering ungrounded.
        Timings are reported separately so callers can keep them out of the
        canonical prediction log.
        """
        k = self.k_contexts if k_contexts is None else k_contexts
        predictions = []
        for record in records:
            if grounding is None:
                contexts: Sequence = ()
            else:
                if record.id not in grounding and k > 0:
                    raise DataError(f"record {record.id!r} has no grounding contexts")
                contexts = grounding.get(record.id, ())
            predictions.append(
                self.answer(record, contexts, k_contexts=k, grounding_label=grounding_label)
            )
        return predictions, [p.latency for p in predictions]


def mixed_selection(
    generated: Sequence[TrialPassage],
    retrieved: Sequence[TrialPassage],
    rerank_fn,
    query: str,
    k_keep: int = 5,
) -> list[TrialPassage]:
    """Select reader grounding from the union of generated and retrieved
    passages.

    The pool (generated first, then retrieved, both in their native order) is
    reranked as one list; the best ``k_keep`` survive and are then reordered
    into the canonical grounding order — option-focused, option-free,
    retrieved — keeping rerank order within each class.
    """
    pool = list(generated) + list(retrieved)
    if not pool:
        raise DataError("mixed selection needs at least one passage")
    scores = [float(s) for s in rerank_fn(query, [p.text for p in pool])]
    if len(scores) != len(pool):
        raise DataError(f"reranker returned {len(scores)} scores for {len(pool)} passages")
    kept = [pool[i] for i in rerank_order(scores)[:k_keep]]
    priority = {VIEW_OPTION_FOCUSED: 0, VIEW_OPTION_FREE: 1, None: 2}
    kept.sort(key=lambda p: priority.get(p.view, 2))
    return kept


# ---------------------------------------------------------------------------
# Prediction log persistence
# ---------------------------------------------------------------------------


def write_predictions(predictions: Sequence[Prediction], path: Union[str, Path]) -> None:
    """JSONL log in record order with sorted keys; byte-stable across runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for prediction in predictions:
            fh.write(json.dumps(prediction.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def load_predictions(path: Union[str, Path]) -> list[Prediction]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"prediction log not found: {path}")
    predictions = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                predictions.append(Prediction.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: corrupt prediction line ({exc})")
    return predictions


def write_timings(
    record_ids: Sequence[str], seconds: Sequence[float], path: Union[str, Path]
) -> None:
    """Wall-clock sidecar; deliberately separate from the prediction log."""
    if len(record_ids) != len(seconds):
        raise DataError("timings and record ids differ in length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record_id, value in zip(record_ids, seconds):
            fh.write(
                json.dumps(
                    {"record_id": record_id, "seconds": value}, sort_keys=True
                )
                + "\n"
            )
