"""Command-line interface: initialize, train, evaluate, and serve checkpoints.

Training data is JSONL, one example per line::

    {"question": "...", "options": ["...", "..."], "contexts": [...], "answer": "B"}

``contexts`` entries are strings or ``{"text", "view"}`` objects; view-tagged
entries are reordered option-focused first, exactly as at inference time.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

import click

from . import __version__
from .errors import FidError
from .inputs import BUDGET_LONG
from .model import FidModel, ModelConfig
from .serving import FidServer
from .tokenizer import HashTokenizer
from .training import (
    TrainConfig,
    example_to_input,
    load_checkpoint,
    measure_accuracy,
    save_checkpoint,
    train,
)


def _read_examples(path: Path) -> list[dict[str, Any]]:
    examples = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                examples.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FidError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    if not examples:
        raise FidError(f"{path} holds no examples")
    return examples


@click.group()
@click.version_option(__version__, prog_name="fidreader")
def cli() -> None:
    """Fusion-style multiple-choice reader: train and serve tiny checkpoints."""


@cli.command()
@click.option("--output-dir", required=True, type=click.Path(path_type=Path))
@click.option("--vocab-size", default=ModelConfig().vocab_size, show_default=True)
@click.option("--d-model", default=ModelConfig().d_model, show_default=True)
@click.option("--n-heads", default=ModelConfig().n_heads, show_default=True)
@click.option("--n-layers", default=ModelConfig().n_encoder_layers, show_default=True)
@click.option("--budget", default=BUDGET_LONG, show_default=True, help="Per-pair token budget.")
@click.option("--seed", default=0, show_default=True)
def init(
    output_dir: Path,
    vocab_size: int,
    d_model: int,
    n_heads: int,
    n_layers: int,
    budget: int,
    seed: int,
) -> None:
    """Write a freshly initialized checkpoint."""
    config = ModelConfig(
        vocab_size=vocab_size,
        d_model=d_model,
        n_heads=n_heads,
        n_encoder_layers=n_layers,
        n_decoder_layers=n_layers,
        seed=seed,
    )
    model = FidModel(config)
    save_checkpoint(output_dir, model, budget=budget, metadata={"trained_steps": 0})
    click.echo(f"initialized checkpoint ({sum(p.numel() for p in model.parameters())} parameters) -> {output_dir}")


@cli.command("train")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--eval-data", type=click.Path(exists=True, path_type=Path))
@click.option("--init", "init_dir", type=click.Path(exists=True, path_type=Path), help="Starting checkpoint; a fresh model is initialized when omitted.")
@click.option("--output-dir", required=True, type=click.Path(path_type=Path))
@click.option("--steps", required=True, type=int, help="Optimizer steps to run.")
@click.option("--lr", default=TrainConfig(max_steps=1).lr, show_default=True)
@click.option("--weight-decay", default=TrainConfig(max_steps=1).weight_decay, show_default=True)
@click.option("--accumulation", default=TrainConfig(max_steps=1).accumulation, show_default=True)
@click.option("--eval-every", type=int, help="Evaluate every N steps (needs --eval-data).")
@click.option("--budget", default=None, type=int, help="Per-pair token budget; checkpoint's own by default.")
@click.option("--seed", default=0, show_default=True)
def train_command(
    data_path: Path,
    eval_data: Path | None,
    init_dir: Path | None,
    output_dir: Path,
    steps: int,
    lr: float,
    weight_decay: float,
    accumulation: int,
    eval_every: int | None,
    budget: int | None,
    seed: int,
) -> None:
    """Fine-tune on a JSONL example file and keep the best checkpoint."""
    if init_dir is not None:
        loaded = load_checkpoint(init_dir)
        model, tokenizer = loaded.model, loaded.tokenizer
        budget = budget if budget is not None else loaded.budget
    else:
        model = FidModel(ModelConfig(seed=seed))
        tokenizer = HashTokenizer()
        budget = budget if budget is not None else BUDGET_LONG
    examples = _read_examples(data_path)
    eval_examples = _read_examples(eval_data) if eval_data else None
    config = TrainConfig(
        max_steps=steps,
        lr=lr,
        weight_decay=weight_decay,
        accumulation=accumulation,
        eval_every=eval_every,
        seed=seed,
    )
    result = train(
        model, tokenizer, examples, config=config, eval_examples=eval_examples, budget=budget
    )
    model.load_state_dict(result.best_state)
    metadata: dict[str, Any] = {"trained_steps": result.steps}
    if result.best_accuracy is not None:
        metadata["best_eval_accuracy"] = result.best_accuracy
    save_checkpoint(output_dir, model, budget=budget, metadata=metadata)
    first = result.history[0] if result.history else float("nan")
    last = result.history[-1] if result.history else float("nan")
    click.echo(
        f"trained {result.steps} steps: loss {first:.4f} -> {last:.4f}"
        + (f", best eval accuracy {result.best_accuracy:.4f}" if result.best_accuracy is not None else "")
        + f" -> {output_dir}"
    )


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, path_type=Path))
def eval_command(checkpoint: Path, data_path: Path) -> None:
    """Report constrained-greedy accuracy on a JSONL example file."""
    loaded = load_checkpoint(checkpoint)
    batch = [
        example_to_input(example, tokenizer=loaded.tokenizer, budget=loaded.budget)
        for example in _read_examples(data_path)
    ]
    accuracy = measure_accuracy(loaded.model, batch)
    click.echo(f"accuracy={accuracy:.4f} n={len(batch)}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8940, show_default=True)
def serve(checkpoint: Path, host: str, port: int) -> None:
    """Serve a checkpoint over the generation wire protocol (blocks)."""
    server = FidServer.from_checkpoint(checkpoint, host=host, port=port)
    click.echo(f"serving {checkpoint} at {server.url} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)
    except FidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
