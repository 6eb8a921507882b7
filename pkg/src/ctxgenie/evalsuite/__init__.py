"""Evaluation suite: accuracy, rerank recall curves, option-bias statistics,
grounding-quality metrics, sweeps, and report serialization."""

from .bias import BiasResult, chi_square_bias, chi_square_tail, format_p
from .metrics import (
    AccuracyReport,
    RerankTrial,
    TrialPassage,
    accuracy,
    context_precision,
    context_recall,
    faithfulness,
    recall_at_k,
    recall_curve,
)
from .ragas import GroundingJudgment, RagasResult, ragas_run
from .report import EvalReport, render_text_table, write_report
from .sweeps import (
    DEFAULT_SHUFFLE_SEEDS,
    ContextCountRow,
    ShuffleRow,
    context_count_sweep,
    shuffle_sweep,
)

__all__ = [
    "AccuracyReport",
    "BiasResult",
    "ContextCountRow",
    "DEFAULT_SHUFFLE_SEEDS",
    "EvalReport",
    "GroundingJudgment",
    "RagasResult",
    "RerankTrial",
    "ShuffleRow",
    "TrialPassage",
    "accuracy",
    "chi_square_bias",
    "chi_square_tail",
    "context_count_sweep",
    "context_precision",
    "context_recall",
    "faithfulness",
    "format_p",
    "ragas_run",
    "recall_at_k",
    "recall_curve",
    "render_text_table",
    "shuffle_sweep",
    "write_report",
]
