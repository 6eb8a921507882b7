"""LLM-judged grounding quality: context recall/precision and faithfulness.

Each sample pairs a question with its grounding contexts, the reference
answer, and the model's answer text.  Three judge prompts drive the metrics:

* attribution — which reference-answer sentences the contexts support
  (context recall);
* usefulness — which contexts help arrive at the reference answer, weighted
  by rank (context precision);
* entailment — decompose the model answer into claims, then check which
  claims the contexts support (faithfulness).

Answers that decompose into zero claims have undefined faithfulness; they
are excluded from the mean and counted.  Every judge prompt lists its items
as a numbered list and names the JSON key it expects, which keeps replies
machine-checkable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from importlib import resources

from ..errors import DataError, EndpointError
from ..gateway import LlmGateway
from ..prompts import PromptTemplate, render_template
from .metrics import context_precision, context_recall, faithfulness

_SENTENCES = re.compile(r"(?<=[.!?])\s+")


def _load_judge_template(
    name: str, assets_dir: Optional[Union[str, Path]] = None
) -> PromptTemplate:
    if assets_dir is None:
        root = resources.files("ctxgenie") / "assets" / "judge"
        text = (root / f"{name}.tmpl").read_text(encoding="utf-8")
    else:
        text = (Path(assets_dir) / "judge" / f"{name}.tmpl").read_text(encoding="utf-8")
    return PromptTemplate(template_id=f"judge/{name}", text=text)


def split_answer_sentences(text: str) -> list[str]:
    """Sentence units of an answer, for per-sentence attribution verdicts."""
    return [s.strip() for s in _SENTENCES.split(text) if s.strip()]


def numbered_list(items: Sequence[str]) -> str:
    """Render items as ``1. …`` lines; item text is flattened to one line."""
    return "\n".join(f"{i}. {' '.join(str(item).split())}" for i, item in enumerate(items, 1))


@dataclass(frozen=True)
class RagasSample:
    """One record's inputs to the judge."""

    record_id: str
    question: str
    reference_answer: str
    model_answer: str
    contexts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.contexts:
            raise DataError(f"record {self.record_id!r}: judging requires at least one context")


@dataclass(frozen=True)
class GroundingJudgment:
    """Per-record judge outcome; raw verdicts and prompts are kept for audit."""

    record_id: str
    recall_verdicts: tuple[int, ...]
    precision_verdicts: tuple[int, ...]
    claims: tuple[str, ...]
    claim_verdicts: tuple[int, ...]
    context_recall: float
    context_precision: float
    faithfulness: Optional[float]  # None when the answer yielded no claims
    prompts: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "recall_verdicts": list(self.recall_verdicts),
            "precision_verdicts": list(self.precision_verdicts),
            "claims": list(self.claims),
            "claim_verdicts": list(self.claim_verdicts),
            "context_recall": self.context_recall,
            "context_precision": self.context_precision,
            "faithfulness": self.faithfulness,
            "prompts": {k: self.prompts[k] for k in sorted(self.prompts)},
        }


@dataclass(frozen=True)
class RagasResult:
    """Aggregate grounding-quality metrics over a sample set."""

    n_samples: int
    context_recall: float
    context_precision: float
    faithfulness: Optional[float]
    n_zero_claim_excluded: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "context_recall": self.context_recall,
            "context_precision": self.context_precision,
            "faithfulness": self.faithfulness,
            "n_zero_claim_excluded": self.n_zero_claim_excluded,
        }


def _verdicts(reply: dict, n_items: int, what: str, record_id: str) -> tuple[int, ...]:
    raw = reply.get("verdicts")
    if not isinstance(raw, list) or len(raw) != n_items:
        got = len(raw) if isinstance(raw, list) else type(raw).__name__
        raise EndpointError(
            f"record {record_id!r}: judge returned {got} {what} verdicts, expected {n_items}"
        )
    out = []
    for v in raw:
        if isinstance(v, bool):
            out.append(int(v))
        elif v in (0, 1):
            out.append(int(v))
        else:
            raise EndpointError(
                f"record {record_id!r}: judge {what} verdict {v!r} is not 0/1"
            )
    return tuple(out)


def judge_sample(
    gateway: LlmGateway,
    sample: RagasSample,
    assets_dir: Optional[Union[str, Path]] = None,
) -> GroundingJudgment:
    """Run all judge calls for one sample and compute its metrics."""
    recall_tmpl = _load_judge_template("context_recall", assets_dir)
    precision_tmpl = _load_judge_template("context_precision", assets_dir)
    claims_tmpl = _load_judge_template("claims", assets_dir)
    faith_tmpl = _load_judge_template("faithfulness", assets_dir)

    context_block = "\n\n".join(sample.contexts)

    sentences = split_answer_sentences(sample.reference_answer)
    if not sentences:
        raise DataError(f"record {sample.record_id!r}: reference answer is empty")
    recall_prompt = render_template(
        recall_tmpl,
        {
            "context": context_block,
            "numbered_items": numbered_list(sentences),
            "n_items": str(len(sentences)),
        },
    )
    recall_reply = gateway.judge(recall_prompt, expect_key="verdicts")
    recall_verdicts = _verdicts(recall_reply, len(sentences), "attribution", sample.record_id)

    precision_prompt = render_template(
        precision_tmpl,
        {
            "question": sample.question,
            "answer": sample.reference_answer,
            "numbered_items": numbered_list(sample.contexts),
            "n_items": str(len(sample.contexts)),
        },
    )
    precision_reply = gateway.judge(precision_prompt, expect_key="verdicts")
    precision_verdicts = _verdicts(
        precision_reply, len(sample.contexts), "usefulness", sample.record_id
    )

    claims_prompt = render_template(
        claims_tmpl, {"question": sample.question, "answer": sample.model_answer}
    )
    claims_reply = gateway.judge(claims_prompt, expect_key="claims")
    raw_claims = claims_reply.get("claims")
    if not isinstance(raw_claims, list):
        raise EndpointError(f"record {sample.record_id!r}: judge claims reply is not a list")
    claims = tuple(str(c) for c in raw_claims if str(c).strip())

    prompts = {
        "context_recall": recall_prompt,
        "context_precision": precision_prompt,
        "claims": claims_prompt,
    }
    if claims:
        faith_prompt = render_template(
            faith_tmpl,
            {
                "context": context_block,
                "numbered_items": numbered_list(claims),
                "n_items": str(len(claims)),
            },
        )
        prompts["faithfulness"] = faith_prompt
        faith_reply = gateway.judge(faith_prompt, expect_key="verdicts")
        claim_verdicts = _verdicts(faith_reply, len(claims), "entailment", sample.record_id)
        faith_value: Optional[float] = faithfulness(claim_verdicts)
    else:
        claim_verdicts = ()
        faith_value = None

    return GroundingJudgment(
        record_id=sample.record_id,
        recall_verdicts=recall_verdicts,
        precision_verdicts=precision_verdicts,
        claims=claims,
        claim_verdicts=claim_verdicts,
        context_recall=context_recall(recall_verdicts),
        context_precision=context_precision(precision_verdicts),
        faithfulness=faith_value,
        prompts=prompts,
    )


def ragas_run(
    gateway: LlmGateway,
    samples: Sequence[RagasSample],
    assets_dir: Optional[Union[str, Path]] = None,
    progress: Optional[Callable[[GroundingJudgment], None]] = None,
) -> tuple[RagasResult, list[GroundingJudgment]]:
    """Judge every sample in input order and aggregate the three metrics."""
    if not samples:
        raise DataError("ragas_run needs at least one sample")
    judgments = []
    for sample in samples:
        judgment = judge_sample(gateway, sample, assets_dir)
        judgments.append(judgment)
        if progress is not None:
            progress(judgment)
    faith_values = [j.faithfulness for j in judgments if j.faithfulness is not None]
    result = RagasResult(
        n_samples=len(judgments),
        context_recall=sum(j.context_recall for j in judgments) / len(judgments),
        context_precision=sum(j.context_precision for j in judgments) / len(judgments),
        faithfulness=(sum(faith_values) / len(faith_values)) if faith_values else None,
        n_zero_claim_excluded=len(judgments) - len(faith_values),
    )
    return result, judgments
