"""Pure metric functions.

Everything here is deterministic arithmetic over already-collected inputs
(prediction records, reranker trials, judge verdicts); no I/O, no endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from ..errors import DataError

SOURCE_GENERATED = "generated"
SOURCE_RETRIEVED = "retrieved"
VIEW_OPTION_FOCUSED = "option-focused"
VIEW_OPTION_FREE = "option-free"

#: Shape of one reranker-preference trial: 5 generated + 10 retrieved passages.
TRIAL_GENERATED = 5
TRIAL_RETRIEVED = 10
TRIAL_SIZE = TRIAL_GENERATED + TRIAL_RETRIEVED


@dataclass(frozen=True)
class TrialPassage:
    """One candidate passage inside a reranker trial."""

    text: str
    source: str  # "generated" | "retrieved"
    view: Optional[str] = None  # "option-focused" | "option-free" for generated ones

    def __post_init__(self) -> None:
        if self.source not in (SOURCE_GENERATED, SOURCE_RETRIEVED):
            raise ValueError(f"unknown passage source {self.source!r}")
        if self.view not in (None, VIEW_OPTION_FOCUSED, VIEW_OPTION_FREE):
            raise ValueError(f"unknown passage view {self.view!r}")


@dataclass(frozen=True)
class RerankTrial:
    """One question's candidate pool with reranker scores, in input order."""

    record_id: str
    passages: tuple[TrialPassage, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.passages) != len(self.scores):
            raise ValueError(
                f"trial {self.record_id!r}: {len(self.passages)} passages vs "
                f"{len(self.scores)} scores"
            )

    def ranking(self) -> list[int]:
        """Indices sorted by score descending; ties keep input order."""
        return sorted(range(len(self.scores)), key=lambda i: (-self.scores[i], i))


def _is_relevant(passage: TrialPassage, subset: str) -> bool:
    if subset == "generated":
        return passage.source == SOURCE_GENERATED
    if subset == "option-free":
        return passage.source == SOURCE_GENERATED and passage.view == VIEW_OPTION_FREE
    raise ValueError(f"unknown relevance subset {subset!r}")


def _validate_trial(trial: RerankTrial) -> None:
    n_generated = sum(1 for p in trial.passages if p.source == SOURCE_GENERATED)
    n_retrieved = len(trial.passages) - n_generated
    if n_generated != TRIAL_GENERATED or n_retrieved != TRIAL_RETRIEVED:
        raise DataError(
            f"trial {trial.record_id!r} has {n_generated} generated and "
            f"{n_retrieved} retrieved passages; expected "
            f"{TRIAL_GENERATED}+{TRIAL_RETRIEVED}"
        )


def recall_at_k(trials: Sequence[RerankTrial], k: int, subset: str = "generated") -> float:
    """Mean fraction of the top-k occupied by the relevant subset, as a percentage.

    Each trial must hold exactly 15 passages (5 generated + 10 retrieved).
    The denominator is k itself (not the subset size), so with 5 relevant
    passages the curve tops out at 100% for k <= 5 and decays like 5/k beyond.
    """
    if not 1 <= k <= TRIAL_SIZE:
        raise DataError(f"k must be in 1..{TRIAL_SIZE}")
    if not trials:
        raise DataError("recall_at_k needs at least one trial")
    total = 0.0
    for trial in trials:
        _validate_trial(trial)
        top = trial.ranking()[:k]
        hits = sum(1 for i in top if _is_relevant(trial.passages[i], subset))
        total += hits / k
    return 100.0 * total / len(trials)


def recall_curve(
    trials: Sequence[RerankTrial],
    ks: Sequence[int] = (1, 3, 5, 8),
    subsets: Sequence[str] = ("generated", "option-free"),
) -> dict[str, dict[int, float]]:
    return {subset: {k: recall_at_k(trials, k, subset) for k in ks} for subset in subsets}


@dataclass(frozen=True)
class AccuracyReport:
    n: int
    n_correct: int
    accuracy: float
    parse_failures: int
    parse_failure_rate: float
    per_subject: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "parse_failures": self.parse_failures,
            "parse_failure_rate": self.parse_failure_rate,
            "per_subject": {k: dict(v) for k, v in sorted(self.per_subject.items())},
        }


def accuracy(
    predictions: Sequence,
    subjects: Optional[Mapping[str, Optional[str]]] = None,
) -> AccuracyReport:
    """Exact accuracy over prediction records.

    A record with no extractable letter counts as incorrect and contributes to
    the parse-failure rate. `subjects` maps record id -> subject for the
    per-subject breakdown; records whose subject is unknown are grouped under
    the per-subject key only if a subject is present.
    """
    if not predictions:
        raise DataError("accuracy needs at least one prediction")
    n = len(predictions)
    n_correct = sum(1 for p in predictions if p.correct)
    failures = sum(1 for p in predictions if p.extracted_letter is None)
    by_subject: dict[str, list] = {}
    if subjects is not None:
        for p in predictions:
            subj = subjects.get(p.record_id)
            if subj is not None:
                by_subject.setdefault(subj, []).append(p)
    per_subject = {
        subj: {
            "n": len(group),
            "n_correct": sum(1 for p in group if p.correct),
            "accuracy": sum(1 for p in group if p.correct) / len(group),
        }
        for subj, group in by_subject.items()
    }
    return AccuracyReport(
        n=n,
        n_correct=n_correct,
        accuracy=n_correct / n,
        parse_failures=failures,
        parse_failure_rate=failures / n,
        per_subject=per_subject,
    )


def _as_binary(verdicts: Iterable) -> list[int]:
    out = []
    for v in verdicts:
        if isinstance(v, bool):
            out.append(int(v))
        elif v in (0, 1):
            out.append(int(v))
        else:
            raise ValueError(f"verdict must be boolean or 0/1, got {v!r}")
    return out


def context_recall(sentence_verdicts: Sequence) -> float:
    """Fraction of ground-truth answer sentences attributable to the context."""
    verdicts = _as_binary(sentence_verdicts)
    if not verdicts:
        raise DataError("context_recall needs at least one sentence verdict")
    return sum(verdicts) / len(verdicts)


def context_precision(rank_verdicts: Sequence) -> float:
    """Rank-weighted precision of a retrieved/generated context list.

    With per-rank relevance verdicts v_1..v_K (input order = rank order):

        sum_k (precision@k * v_k) / sum_k v_k

    where precision@k counts relevant items in the top k. All-irrelevant
    input (or an empty list) scores 0 by definition, and appending irrelevant
    items after the last relevant one never changes the value.
    """
    verdicts = _as_binary(rank_verdicts)
    total_relevant = sum(verdicts)
    if total_relevant == 0:
        return 0.0
    acc = 0.0
    seen_relevant = 0
    for k, v in enumerate(verdicts, start=1):
        seen_relevant += v
        if v:
            acc += seen_relevant / k
    return acc / total_relevant


def faithfulness(claim_verdicts: Sequence) -> float:
    """Fraction of answer claims implied by the context.

    Zero-claim answers are undefined here; callers exclude them from means and
    report how many were excluded.
    """
    verdicts = _as_binary(claim_verdicts)
    if not verdicts:
        raise DataError("faithfulness is undefined for zero extracted claims")
    return sum(verdicts) / len(verdicts)
