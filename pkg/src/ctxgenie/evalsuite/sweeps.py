"""Robustness sweeps: option-order shuffles and context-count curves.

The shuffle sweep re-answers the benchmark under deterministic option
permutations (one per seed) and, for each variant, tests the predicted
letter histogram against the gold histogram with the chi-square position
bias test.  The context-count sweep re-answers at increasing grounding sizes
``k`` and tabulates the accuracy curve.

Both sweeps are driven by caller-supplied closures, so they stay decoupled
from any particular reader or transport.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from ..corpus import OPTION_LETTERS, BenchmarkRecord, shuffle_options
from ..errors import DataError
from .bias import BiasResult, chi_square_bias
from .metrics import accuracy as accuracy_report

#: Option-permutation seeds used by the robustness sweep.
DEFAULT_SHUFFLE_SEEDS = (4, 11, 13, 40, 41, 42, 43, 45, 47, 50)


def letter_histograms(
    predictions: Sequence, records: Sequence[BenchmarkRecord]
) -> tuple[list[int], list[int]]:
    """Aligned per-letter counts (A..E) of predicted and gold answers.

    Only parsed predictions contribute, to either histogram, so both sum to
    the same total and the bias test compares like with like.
    """
    gold_by_id = {r.id: r.gold_letter for r in records}
    predicted = [0] * len(OPTION_LETTERS)
    gold = [0] * len(OPTION_LETTERS)
    for prediction in predictions:
        letter = prediction.extracted_letter
        if letter is None:
            continue
        if letter not in OPTION_LETTERS:
            raise DataError(f"prediction letter {letter!r} is outside {OPTION_LETTERS!r}")
        record_gold = gold_by_id.get(prediction.record_id)
        if record_gold is None:
            raise DataError(f"prediction for unknown record {prediction.record_id!r}")
        predicted[OPTION_LETTERS.index(letter)] += 1
        gold[OPTION_LETTERS.index(record_gold)] += 1
    return predicted, gold


@dataclass(frozen=True)
class ShuffleRow:
    """One shuffle variant: seed None is the unshuffled base ordering."""

    seed: Optional[int]
    n: int
    accuracy: float
    parse_failures: int
    predicted_counts: tuple[int, ...]
    gold_counts: tuple[int, ...]
    bias: Optional[BiasResult]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "accuracy": self.accuracy,
            "parse_failures": self.parse_failures,
            "predicted_counts": list(self.predicted_counts),
            "gold_counts": list(self.gold_counts),
            "bias": self.bias.to_dict() if self.bias is not None else None,
        }


def shuffle_sweep(
    run_fn: Callable[[Sequence[BenchmarkRecord]], Sequence],
    records: Sequence[BenchmarkRecord],
    seeds: Sequence[int] = DEFAULT_SHUFFLE_SEEDS,
    include_base: bool = True,
) -> list[ShuffleRow]:
    """Answer the benchmark under each option permutation and test for bias.

    ``run_fn`` answers one record sequence and returns prediction objects
    (``record_id`` / ``extracted_letter`` / ``correct``).  Rows appear in run
    order: the unshuffled base first (when requested), then one per seed.
    A variant whose gold histogram collapses onto a single letter cannot be
    chi-square tested; its row carries ``bias=None``.
    """
    if not records:
        raise DataError("shuffle_sweep needs at least one record")
    variants: list[tuple[Optional[int], list[BenchmarkRecord]]] = []
    if include_base:
        variants.append((None, list(records)))
    for seed in seeds:
        variants.append((seed, [shuffle_options(r, seed) for r in records]))

    rows = []
    for seed, variant in variants:
        predictions = list(run_fn(variant))
        report = accuracy_report(predictions)
        predicted, gold = letter_histograms(predictions, variant)
        try:
            bias = chi_square_bias(predicted, gold)
        except DataError:
            bias = None
        rows.append(
            ShuffleRow(
                seed=seed,
                n=report.n,
                accuracy=report.accuracy,
                parse_failures=report.parse_failures,
                predicted_counts=tuple(predicted),
                gold_counts=tuple(gold),
                bias=bias,
            )
        )
    return rows


def shuffle_summary(rows: Sequence[ShuffleRow]) -> dict:
    """Aggregate accuracy spread across shuffle variants."""
    if not rows:
        raise DataError("shuffle_summary needs at least one row")
    values = [row.accuracy for row in rows]
    return {
        "n_variants": len(rows),
        "mean_accuracy": sum(values) / len(values),
        "min_accuracy": min(values),
        "max_accuracy": max(values),
        "stdev_accuracy": statistics.pstdev(values) if len(values) > 1 else 0.0,
    }


@dataclass(frozen=True)
class ContextCountRow:
    """Accuracy at one grounding size ``k``."""

    k: int
    n: int
    accuracy: float
    parse_failures: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "accuracy": self.accuracy,
            "parse_failures": self.parse_failures,
        }


def context_count_sweep(
    run_fn: Callable[[int], object],
    ks: Sequence[int] = (0, 1, 2, 3, 4, 5),
) -> list[ContextCountRow]:
    """Evaluate at each ``k`` in order; ``run_fn(k)`` returns an accuracy
    report (``n`` / ``accuracy`` / ``parse_failures``)."""
    if not ks:
        raise DataError("context_count_sweep needs at least one k")
    rows = []
    for k in ks:
        if k < 0:
            raise DataError("context counts must be >= 0")
        report = run_fn(k)
        rows.append(
            ContextCountRow(
                k=k,
                n=report.n,  # type: ignore[attr-defined]
                accuracy=report.accuracy,  # type: ignore[attr-defined]
                parse_failures=report.parse_failures,  # type: ignore[attr-defined]
            )
        )
    return rows
