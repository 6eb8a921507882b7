"""Fusion-style multiple-choice reader.

Each context is paired with the question and options, encoded independently,
and the encoder states are concatenated for the decoder — so compute grows
linearly with the context count and the fused memory length is exactly the
sum of per-pair lengths.  The package trains tiny CPU-sized checkpoints and
serves them over the same chat/completions wire protocol every other reader
endpoint speaks.
"""

from .inputs import (
    BUDGET_LONG,
    BUDGET_SHORT,
    MAX_PAIRS,
    FidInput,
    FidPair,
    assemble,
    build_input,
)
from .model import FidModel, ForwardResult, FusionResult, ModelConfig
from .serving import FidServer, parse_reader_prompt
from .tokenizer import HashTokenizer
from .training import TrainConfig, TrainResult, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BUDGET_LONG",
    "BUDGET_SHORT",
    "MAX_PAIRS",
    "FidInput",
    "FidPair",
    "FidModel",
    "FidServer",
    "ForwardResult",
    "FusionResult",
    "HashTokenizer",
    "ModelConfig",
    "TrainConfig",
    "TrainResult",
    "assemble",
    "build_input",
    "load_checkpoint",
    "parse_reader_prompt",
    "save_checkpoint",
    "train",
    "__version__",
]
