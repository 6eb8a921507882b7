"""Tiny fusion-style encoder-decoder reader.

Each input pair is encoded independently at its natural length (no padding),
the last-layer encoder states of all pairs are concatenated along the
sequence axis, and the decoder cross-attends over that fused memory.  Two
consequences fall straight out of the construction and are load-bearing for
the tests:

* the fused memory length is *exactly* the sum of per-pair token counts, for
  any number of pairs;
* encoder compute grows linearly with the pair count — the encoder runs once
  per pair and never sees two pairs in one sequence.

Positions restart at zero inside every pair, so permuting pairs permutes
whole blocks of the memory without changing its total length.

The decoder's only job is the answer letter: training targets are
``[letter, EOS]`` and serving decodes one constrained greedy step over the
reserved letter ids.  The backbone is deliberately small (two layers by
default) so the whole package trains and serves on a CPU; widths, depths and
vocabulary size are configurable for larger runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .errors import InputError
from .inputs import FidInput
from .tokenizer import BOS_ID, EOS_ID, HashTokenizer

DEFAULT_D_MODEL = 64
DEFAULT_N_HEADS = 2
DEFAULT_N_LAYERS = 2
DEFAULT_FFN_DIM = 128
DEFAULT_MAX_LEN = 1024


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; fully determines the module shapes."""

    vocab_size: int = HashTokenizer().vocab_size
    d_model: int = DEFAULT_D_MODEL
    n_heads: int = DEFAULT_N_HEADS
    n_encoder_layers: int = DEFAULT_N_LAYERS
    n_decoder_layers: int = DEFAULT_N_LAYERS
    ffn_dim: int = DEFAULT_FFN_DIM
    max_len: int = DEFAULT_MAX_LEN
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise InputError("d_model must be divisible by n_heads")
        if self.max_len < 4:
            raise InputError("max_len must be >= 4")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FusionResult:
    """Concatenated encoder states for one input."""

    memory: Tensor  # (1, memory_length, d_model)
    pair_lengths: tuple[int, ...]

    @property
    def memory_length(self) -> int:
        return int(self.memory.shape[1])


@dataclass(frozen=True)
class ForwardResult:
    """Decoder logits plus the fusion diagnostics for one input."""

    logits: Tensor  # (target_length, vocab_size)
    memory_length: int
    pair_lengths: tuple[int, ...]

    @property
    def encoder_tokens(self) -> int:
        """Token positions the encoder processed — linear in the pair count."""
        return sum(self.pair_lengths)


class FidModel(nn.Module):
    """Encoder-decoder over independently encoded pairs with fused memory."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.embed = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_embed = nn.Embedding(config.max_len, config.d_model)
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=config.ffn_dim,
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            encoder_layer, config.n_encoder_layers, enable_nested_tensor=False
        )
        decoder_layer = nn.TransformerDecoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=config.ffn_dim,
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(decoder_layer, config.n_decoder_layers)
        self.lm_head = nn.Linear(config.d_model, config.vocab_size, bias=False)

    # -- encoding -------------------------------------------------------------

    def _embed_sequence(self, ids: Tensor) -> Tensor:
        if ids.ndim != 1:
            raise InputError("expected a 1-D id sequence")
        length = int(ids.shape[0])
        if length > self.config.max_len:
            raise InputError(f"sequence of {length} tokens exceeds max_len {self.config.max_len}")
        if length and int(ids.max()) >= self.config.vocab_size:
            raise InputError(
                f"token id {int(ids.max())} is outside the model's vocabulary of "
                f"{self.config.vocab_size} — the tokenizer and model must share vocab_size"
            )
        positions = torch.arange(length, device=ids.device)
        return (self.embed(ids) + self.pos_embed(positions)).unsqueeze(0)

    def encode_pair(self, ids: Tensor) -> Tensor:
        """Encode one pair at its natural length; returns ``(length, d_model)``."""
        if ids.shape[0] == 0:
            raise InputError("cannot encode an empty pair")
        states = self.encoder(self._embed_sequence(ids))
        return states.squeeze(0)

    def fuse(self, fid_input: FidInput) -> FusionResult:
        """Encode every pair independently and concatenate the states.

        The memory length equals the sum of per-pair token counts exactly;
        nothing is inserted between or around the pair blocks.
        """
        device = self.embed.weight.device
        blocks = []
        lengths = []
        for pair in fid_input.pairs:
            ids = torch.as_tensor(pair.token_ids, dtype=torch.long, device=device)
            blocks.append(self.encode_pair(ids))
            lengths.append(len(pair.token_ids))
        memory = torch.cat(blocks, dim=0).unsqueeze(0)
        return FusionResult(memory=memory, pair_lengths=tuple(lengths))

    # -- decoding -------------------------------------------------------------

    def decode(self, memory: Tensor, target_ids: Tensor) -> Tensor:
        """Causally decode ``target_ids`` over ``memory``; returns logits."""
        if target_ids.ndim != 1 or target_ids.shape[0] == 0:
            raise InputError("expected a non-empty 1-D target sequence")
        target = self._embed_sequence(target_ids)
        causal = nn.Transformer.generate_square_subsequent_mask(
            int(target_ids.shape[0]), device=target_ids.device, dtype=target.dtype
        )
        states = self.decoder(target, memory, tgt_mask=causal)
        return self.lm_head(states.squeeze(0))

    def forward(self, fid_input: FidInput, target_ids: Tensor) -> ForwardResult:
        fusion = self.fuse(fid_input)
        logits = self.decode(fusion.memory, target_ids)
        return ForwardResult(
            logits=logits,
            memory_length=fusion.memory_length,
            pair_lengths=fusion.pair_lengths,
        )

    # -- task-level helpers ---------------------------------------------------

    def answer_loss(self, fid_input: FidInput, letter: str) -> Tensor:
        """Cross-entropy of the gold ``[letter, EOS]`` continuation."""
        device = self.embed.weight.device
        letter_id = HashTokenizer.letter_id(letter)
        decoder_input = torch.tensor([BOS_ID, letter_id], dtype=torch.long, device=device)
        targets = torch.tensor([letter_id, EOS_ID], dtype=torch.long, device=device)
        result = self.forward(fid_input, decoder_input)
        return nn.functional.cross_entropy(result.logits, targets)

    @torch.no_grad()
    def greedy_letter(self, fid_input: FidInput) -> str:
        """One constrained greedy step: the highest-logit *available* letter.

        Only the letters the input's option block actually offers compete;
        ties break toward the alphabetically first letter.
        """
        device = self.embed.weight.device
        fusion = self.fuse(fid_input)
        bos = torch.tensor([BOS_ID], dtype=torch.long, device=device)
        logits = self.decode(fusion.memory, bos)[-1]
        letters = fid_input.letters
        letter_ids = torch.tensor(
            [HashTokenizer.letter_id(letter) for letter in letters], device=device
        )
        best = int(torch.argmax(logits[letter_ids]).item())
        return letters[best]
