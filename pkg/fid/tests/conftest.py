"""Shared fixtures: a CPU-tiny model configuration and synthetic examples."""

from __future__ import annotations

import pytest

from fidreader.model import FidModel, ModelConfig
from fidreader.tokenizer import HashTokenizer

TINY_VOCAB = 96

TINY_CONFIG = ModelConfig(
    vocab_size=TINY_VOCAB,
    d_model=16,
    n_heads=2,
    n_encoder_layers=1,
    n_decoder_layers=1,
    ffn_dim=32,
    max_len=128,
    seed=0,
)

OPTIONS = (
    "Ferrocalm therapy",
    "Sertalvine therapy",
    "Luminate therapy",
    "Relvadone therapy",
)


def make_example(i: int, letter: str, n_contexts: int = 3) -> dict:
    """One synthetic training example keyed to ``letter``."""
    drug = OPTIONS["ABCD".index(letter)].split()[0]
    return {
        "question": f"Case {i}: patient with marker {i * 7} and relapse pattern {i}. Best treatment?",
        "options": list(OPTIONS),
        "contexts": [
            f"Study {i * 3 + j} linked marker {i * 7} with {drug} response." for j in range(n_contexts)
        ],
        "answer": letter,
    }


def overfit_examples(n: int = 8) -> list[dict]:
    return [make_example(i, "ABCD"[i % 4]) for i in range(n)]


@pytest.fixture
def tiny_tokenizer() -> HashTokenizer:
    return HashTokenizer(vocab_size=TINY_VOCAB)


@pytest.fixture
def tiny_model() -> FidModel:
    return FidModel(TINY_CONFIG)
