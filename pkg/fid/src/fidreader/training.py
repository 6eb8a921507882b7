"""Fine-tuning loop and checkpoint layout.

The optimizer is AdamW — decoupled weight decay — at the package defaults of
``lr=5e-5`` and ``weight_decay=0.01``, under a linear schedule whose warmup
covers 10% of the total steps.  Gradient accumulation multiplies the
effective batch (the default is batch 1 with 4 accumulation micro-steps).
Evaluation runs every ``eval_every`` optimizer steps plus once at
initialization and once at the end; the state with the best eval accuracy is
the kept checkpoint.  With no eval set the final state is kept.  Zero
training steps always yield the initial state unchanged.

Checkpoint directory layout::

    <dir>/config.json   architecture, vocabulary size, per-pair budget, metadata
    <dir>/weights.pt    model state dict

Training examples are mappings with ``question``, ``options`` (list),
``contexts`` (list of strings or ``{"text", "view"}`` entries) and ``answer``
(a gold option letter).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import torch

from .errors import CheckpointError, InputError
from .inputs import BUDGET_LONG, MAX_PAIRS, FidInput, build_input, ordered_context_texts
from .model import FidModel, ModelConfig
from .tokenizer import OPTION_LETTERS, HashTokenizer

CHECKPOINT_CONFIG = "config.json"
CHECKPOINT_WEIGHTS = "weights.pt"

DEFAULT_LR = 5e-5
DEFAULT_WEIGHT_DECAY = 0.01
DEFAULT_WARMUP_FRAC = 0.1
DEFAULT_ACCUMULATION = 4


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for one training run."""

    max_steps: int
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    warmup_frac: float = DEFAULT_WARMUP_FRAC
    accumulation: int = DEFAULT_ACCUMULATION
    eval_every: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_steps < 0:
            raise InputError("max_steps must be >= 0")
        if self.accumulation < 1:
            raise InputError("accumulation must be >= 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise InputError("warmup_frac must be in [0, 1)")
        if self.eval_every is not None and self.eval_every < 1:
            raise InputError("eval_every must be >= 1")


@dataclass
class TrainResult:
    """Loss history and the kept (best) state for one training run."""

    history: list[float]
    best_state: dict[str, torch.Tensor]
    steps: int
    best_accuracy: float | None = None
    evals: list[tuple[int, float]] = field(default_factory=list)


def linear_warmup_factor(step: int, total: int, warmup_frac: float) -> float:
    """Linear schedule multiplier: rise over the warmup span, then decay to 0.

    ``step`` counts completed optimizer steps (0 before the first).  The
    warmup span is ``ceil(total * warmup_frac)`` steps; after it the factor
    falls linearly so the final step runs at the smallest positive value.
    """
    if total <= 0:
        return 1.0
    warmup = math.ceil(total * warmup_frac)
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    if total == warmup:
        return 1.0
    return max(0.0, (total - step) / (total - warmup))


def example_to_input(
    example: Mapping[str, Any],
    *,
    tokenizer: HashTokenizer,
    budget: int = BUDGET_LONG,
    k: int | None = None,
) -> tuple[FidInput, str]:
    """Turn one training example into (input, gold letter)."""
    question = example.get("question")
    options = example.get("options")
    answer = example.get("answer")
    if not isinstance(question, str) or not isinstance(options, Sequence):
        raise InputError("example needs 'question' and 'options'")
    if not isinstance(answer, str) or answer not in OPTION_LETTERS[: len(options)]:
        raise InputError(f"example answer must be one of the option letters, got {answer!r}")
    raw_contexts = example.get("contexts", [])
    if k is None:
        k = min(len(raw_contexts), MAX_PAIRS) if raw_contexts else 0
    contexts = ordered_context_texts(raw_contexts, k) if k else []
    fid_input = build_input(question, options, contexts, tokenizer=tokenizer, budget=budget)
    return fid_input, answer


def measure_accuracy(model: FidModel, batch: Sequence[tuple[FidInput, str]]) -> float:
    """Share of inputs whose constrained greedy letter matches the gold one."""
    if not batch:
        raise InputError("cannot measure accuracy on an empty batch")
    was_training = model.training
    model.eval()
    try:
        correct = sum(model.greedy_letter(fid_input) == gold for fid_input, gold in batch)
    finally:
        if was_training:
            model.train()
    return correct / len(batch)


def _snapshot(model: FidModel) -> dict[str, torch.Tensor]:
    return {name: value.detach().clone() for name, value in model.state_dict().items()}


def train(
    model: FidModel,
    tokenizer: HashTokenizer,
    examples: Sequence[Mapping[str, Any]],
    *,
    config: TrainConfig,
    eval_examples: Sequence[Mapping[str, Any]] | None = None,
    budget: int = BUDGET_LONG,
) -> TrainResult:
    """Run the fine-tuning loop; returns the loss history and kept state."""
    if not examples and config.max_steps > 0:
        raise InputError("training requires at least one example")
    batch = [example_to_input(e, tokenizer=tokenizer, budget=budget) for e in examples]
    eval_batch = (
        [example_to_input(e, tokenizer=tokenizer, budget=budget) for e in eval_examples]
        if eval_examples
        else None
    )

    best_state = _snapshot(model)
    best_accuracy: float | None = None
    evals: list[tuple[int, float]] = []
    if eval_batch is not None:
        best_accuracy = measure_accuracy(model, eval_batch)
        evals.append((0, best_accuracy))
    result = TrainResult(
        history=[], best_state=best_state, steps=0, best_accuracy=best_accuracy, evals=evals
    )
    if config.max_steps == 0:
        return result

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: linear_warmup_factor(step, config.max_steps, config.warmup_frac),
    )
    order_rng = torch.Generator().manual_seed(config.seed)

    def micro_batches():
        while True:
            for index in torch.randperm(len(batch), generator=order_rng).tolist():
                yield batch[index]

    stream = micro_batches()
    model.train()
    for step in range(1, config.max_steps + 1):
        optimizer.zero_grad()
        losses = []
        for _ in range(config.accumulation):
            fid_input, gold = next(stream)
            loss = model.answer_loss(fid_input, gold)
            (loss / config.accumulation).backward()
            losses.append(float(loss.item()))
        optimizer.step()
        scheduler.step()
        result.history.append(sum(losses) / len(losses))
        result.steps = step
        due = config.eval_every is not None and step % config.eval_every == 0
        if eval_batch is not None and (due or step == config.max_steps):
            accuracy = measure_accuracy(model, eval_batch)
            result.evals.append((step, accuracy))
            if result.best_accuracy is None or accuracy > result.best_accuracy:
                result.best_accuracy = accuracy
                result.best_state = _snapshot(model)
    if eval_batch is None:
        result.best_state = _snapshot(model)
    model.eval()
    return result


# -- checkpoints ---------------------------------------------------------------


@dataclass(frozen=True)
class LoadedCheckpoint:
    model: FidModel
    tokenizer: HashTokenizer
    budget: int
    metadata: dict[str, Any]


def save_checkpoint(
    directory: str | Path,
    model: FidModel,
    *,
    budget: int = BUDGET_LONG,
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write ``config.json`` + ``weights.pt`` under ``directory``."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    config = {
        "format": 1,
        "model": model.config.to_dict(),
        "budget": budget,
        "metadata": dict(metadata or {}),
    }
    (path / CHECKPOINT_CONFIG).write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    torch.save(model.state_dict(), path / CHECKPOINT_WEIGHTS)
    return path


def load_checkpoint(directory: str | Path) -> LoadedCheckpoint:
    """Rebuild the model and tokenizer recorded under ``directory``."""
    path = Path(directory)
    config_path = path / CHECKPOINT_CONFIG
    weights_path = path / CHECKPOINT_WEIGHTS
    if not config_path.is_file() or not weights_path.is_file():
        raise CheckpointError(f"checkpoint not found at {path}")
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"invalid checkpoint config: {exc}") from exc
    model_section = config.get("model")
    if not isinstance(model_section, dict):
        raise CheckpointError("checkpoint config has no 'model' section")
    try:
        model_config = ModelConfig(**model_section)
    except TypeError as exc:
        raise CheckpointError(f"unsupported checkpoint config: {exc}") from exc
    model = FidModel(model_config)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return LoadedCheckpoint(
        model=model,
        tokenizer=HashTokenizer(vocab_size=model_config.vocab_size),
        budget=int(config.get("budget", BUDGET_LONG)),
        metadata=dict(config.get("metadata", {})),
    )
