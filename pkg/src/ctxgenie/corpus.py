"""Benchmark records: loading, validation, deterministic option shuffling, stats.

Canonical on-disk form is JSON-lines, one object per record:

    {"id": "q1", "question": "...", "options": ["...", ...],
     "gold": 0, "subject": "optional"}

Adapters translate the three common public layouts into that shape:

    fmt="medqa"    JSONL with an options dict {"A": ..} and an "answer_idx" letter
    fmt="medmcqa"  JSONL with opa/opb/opc/opd columns and a 1-based "cop" index
    fmt="mmlu"     headerless CSV rows: question, 4 option columns, answer letter
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

MIN_OPTIONS = 2
MAX_OPTIONS = 5
OPTION_LETTERS = "ABCDE"


def _norm_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class BenchmarkRecord:
    """One multiple-choice question.

    gold_index is 0-based and always refers to a position in `options`; when
    options are shuffled the index moves with the gold text.
    """

    id: str
    question: str
    options: tuple[str, ...]
    gold_index: int
    dataset_tag: str
    subject: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("record id must be non-empty")
        if not (MIN_OPTIONS <= len(self.options) <= MAX_OPTIONS):
            raise DataError(
                f"record {self.id!r}: expected {MIN_OPTIONS}..{MAX_OPTIONS} options, "
                f"got {len(self.options)}"
            )
        if not (0 <= self.gold_index < len(self.options)):
            raise DataError(
                f"record {self.id!r}: gold_index {self.gold_index} out of range "
                f"for {len(self.options)} options"
            )
        normed = [_norm_ws(o) for o in self.options]
        if len(set(normed)) != len(normed):
            raise DataError(f"record {self.id!r}: options are not pairwise distinct")

    @property
    def gold_text(self) -> str:
        return self.options[self.gold_index]

    @property
    def gold_letter(self) -> str:
        return OPTION_LETTERS[self.gold_index]

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "question": self.question,
            "options": list(self.options),
            "gold": self.gold_index,
        }
        if self.subject is not None:
            out["subject"] = self.subject
        return out


@dataclass(frozen=True)
class DatasetSummary:
    n_records: int
    arity_counts: dict[int, int]
    mean_question_words: float
    max_question_words: int
    subject_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "arity_counts": {str(k): v for k, v in sorted(self.arity_counts.items())},
            "mean_question_words": self.mean_question_words,
            "max_question_words": self.max_question_words,
            "subject_counts": dict(sorted(self.subject_counts.items())),
        }


def _record_from_canonical(obj: dict, dataset_tag: str, where: str) -> BenchmarkRecord:
    try:
        return BenchmarkRecord(
            id=str(obj["id"]),
            question=str(obj["question"]),
            options=tuple(str(o) for o in obj["options"]),
            gold_index=int(obj["gold"]),
            dataset_tag=dataset_tag,
            subject=(str(obj["subject"]) if obj.get("subject") is not None else None),
        )
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]!r}") from exc


def _record_from_medqa(obj: dict, dataset_tag: str, where: str, ordinal: int) -> BenchmarkRecord:
    try:
        options_map = obj["options"]
        letters = sorted(options_map)
        options = tuple(str(options_map[letter]) for letter in letters)
        gold_letter = str(obj["answer_idx"]).strip()
        gold_index = letters.index(gold_letter)
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise DataError(f"{where}: answer_idx not among option letters") from exc
    return BenchmarkRecord(
        id=str(obj.get("id", f"q{ordinal}")),
        question=str(obj["question"]),
        options=options,
        gold_index=gold_index,
        dataset_tag=dataset_tag,
        subject=(str(obj["meta_info"]) if obj.get("meta_info") is not None else None),
    )


def _record_from_medmcqa(obj: dict, dataset_tag: str, where: str, ordinal: int) -> BenchmarkRecord:
    try:
        options = tuple(str(obj[k]) for k in ("opa", "opb", "opc", "opd"))
        gold_index = int(obj["cop"]) - 1
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]!r}") from exc
    return BenchmarkRecord(
        id=str(obj.get("id", f"q{ordinal}")),
        question=str(obj["question"]),
        options=options,
        gold_index=gold_index,
        dataset_tag=dataset_tag,
        subject=(str(obj["subject_name"]) if obj.get("subject_name") is not None else None),
    )


def _records_from_mmlu_csv(path: Path, dataset_tag: str, subject: Optional[str]) -> list[BenchmarkRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) < 6:
                raise DataError(f"{where}: expected 6 columns (question, 4 options, answer)")
            question = row[0]
            options = row[1:5]
            answer = row[5].strip()
            if answer not in OPTION_LETTERS[:4]:
                raise DataError(f"{where}: answer letter {answer!r} not in A..D")
            records.append(
                BenchmarkRecord(
                    id=f"q{lineno}",
                    question=question,
                    options=tuple(options),
                    gold_index=OPTION_LETTERS.index(answer),
                    dataset_tag=dataset_tag,
                    subject=subject,
                )
            )
    return records


def load_benchmark(
    path: str | Path,
    fmt: str = "canonical",
    dataset_tag: Optional[str] = None,
    subject: Optional[str] = None,
) -> list[BenchmarkRecord]:
    """Load a benchmark file into validated records.

    Blank lines are skipped; every parse or validation error names the file and
    line. Duplicate record ids are an error. `subject` applies only to the
    mmlu CSV adapter, whose files carry no subject column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"benchmark file not found: {path}")
    tag = dataset_tag or path.stem

    if fmt == "mmlu":
        records = _records_from_mmlu_csv(path, tag, subject)
    elif fmt in ("canonical", "medqa", "medmcqa"):
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
                if not isinstance(obj, dict):
                    raise DataError(f"{where}: expected a JSON object")
                if fmt == "canonical":
                    records.append(_record_from_canonical(obj, tag, where))
                elif fmt == "medqa":
                    records.append(_record_from_medqa(obj, tag, where, lineno))
                else:
                    records.append(_record_from_medmcqa(obj, tag, where, lineno))
    else:
        raise DataError(f"unknown benchmark format {fmt!r}")

    seen: dict[str, int] = {}
    for i, rec in enumerate(records):
        if rec.id in seen:
            raise DataError(f"duplicate record id {rec.id!r} (records {seen[rec.id]} and {i})")
        seen[rec.id] = i
    return records


def save_benchmark(records: Sequence[BenchmarkRecord], path: str | Path) -> None:
    """Write records in the canonical JSONL layout (UTF-8, one object per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def record_rng(record_id: str, seed: int) -> np.random.Generator:
    """Per-record PRNG stream: PCG64 seeded with the low 128 bits of
    SHA-256(f"{seed}:{record_id}"). Independent of record order in the file.
    """
    digest = hashlib.sha256(f"{seed}:{record_id}".encode("utf-8")).digest()
    state = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.PCG64(state))


def shuffle_options(record: BenchmarkRecord, seed: int) -> BenchmarkRecord:
    """Return a copy with options permuted; the gold index follows the gold text.

    The permutation depends only on (record.id, seed), so shuffling is stable
    across runs, platforms, and record ordering.
    """
    rng = record_rng(record.id, seed)
    perm = rng.permutation(len(record.options))
    new_options = tuple(record.options[i] for i in perm)
    new_gold = int(np.where(perm == record.gold_index)[0][0])
    shuffled = replace(record, options=new_options, gold_index=new_gold)
    assert shuffled.gold_text == record.gold_text
    return shuffled


def summarize(records: Iterable[BenchmarkRecord]) -> DatasetSummary:
    """Dataset statistics; question length is whitespace-delimited word count."""
    arity: dict[int, int] = {}
    subjects: dict[str, int] = {}
    word_counts = []
    n = 0
    for rec in records:
        n += 1
        arity[len(rec.options)] = arity.get(len(rec.options), 0) + 1
        word_counts.append(len(rec.question.split()))
        if rec.subject is not None:
            subjects[rec.subject] = subjects.get(rec.subject, 0) + 1
    mean_words = float(sum(word_counts) / n) if n else 0.0
    return DatasetSummary(
        n_records=n,
        arity_counts=arity,
        mean_question_words=mean_words,
        max_question_words=max(word_counts) if word_counts else 0,
        subject_counts=subjects,
    )


_SYNTH_SUBJECTS = ("pharmacology", "physiology", "anatomy", "biochemistry")
_SYNTH_AGENTS = (
    "Relvadone", "Cortexin", "Mabrufen", "Zelpristat", "Novastine",
    "Ferrocalm", "Luminate", "Pexarol", "Quindexa", "Sertalvine",
)
_SYNTH_FINDINGS = (
    "elevated serum copper", "a prolonged QT interval", "granular casts",
    "painless jaundice", "a positive Trousseau sign", "macrocytic anemia",
    "a friction rub", "nocturnal dyspnea", "a vesicular rash", "hyperreflexia",
)


def synthetic_benchmark(n: int, seed: int = 0, dataset_tag: str = "synthetic") -> list[BenchmarkRecord]:
    """Deterministic synthetic benchmark for demos and end-to-end tests.

    Questions are templated so every record has a unique question text and a
    4- or 5-way option set whose gold assignment varies with the seed.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for i in range(n):
        agent = _SYNTH_AGENTS[i % len(_SYNTH_AGENTS)]
        finding = _SYNTH_FINDINGS[int(rng.integers(len(_SYNTH_FINDINGS)))]
        arity = 5 if i % 7 == 3 else 4
        distractor_pool = [a for a in _SYNTH_AGENTS if a != agent]
        picks = rng.choice(len(distractor_pool), size=arity - 1, replace=False)
        options = [f"{distractor_pool[int(p)]} therapy" for p in picks]
        gold_index = int(rng.integers(arity))
        options.insert(gold_index, f"{agent} therapy")
        records.append(
            BenchmarkRecord(
                id=f"syn{i:04d}",
                question=(
                    f"A trial participant (case {i}) presents with {finding}. "
                    f"Which treatment was associated with this presentation in cohort {i}?"
                ),
                options=tuple(options),
                gold_index=gold_index,
                dataset_tag=dataset_tag,
                subject=_SYNTH_SUBJECTS[i % len(_SYNTH_SUBJECTS)],
            )
        )
    return records
