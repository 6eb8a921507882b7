"""Hash-bucket word tokenizer.

The reader needs a tokenizer that is deterministic across processes, needs no
trained vocabulary file, and keeps the answer letters invertible so greedy
decoding can emit them as text.  Words are mapped to a fixed number of hash
buckets via BLAKE2s (Python's builtin ``hash`` is randomized per process and
would break checkpoint portability).  A small reserved block at the bottom of
the id space holds the structural tokens and the option letters:

====  =============================
id    token
====  =============================
0     padding
1     beginning-of-sequence
2     end-of-sequence
3     ``[SEP]`` pair separator
4-8   option letters ``A``-``E``
====  =============================

Everything else hashes into buckets ``N_RESERVED .. vocab_size-1``.  Bucket
ids are not invertible (many words share a bucket); only the reserved block
decodes back to text, which is all the answer decoder ever emits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import InputError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3

SEP_TOKEN = "[SEP]"

#: Option letters with dedicated, invertible token ids.
OPTION_LETTERS = "ABCDE"

FIRST_LETTER_ID = 4
N_RESERVED = FIRST_LETTER_ID + len(OPTION_LETTERS)

DEFAULT_VOCAB_SIZE = 512


def _bucket(word: str, n_buckets: int) -> int:
    digest = hashlib.blake2s(word.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % n_buckets


@dataclass(frozen=True)
class HashTokenizer:
    """Stateless word tokenizer over a fixed-size hashed vocabulary."""

    vocab_size: int = DEFAULT_VOCAB_SIZE

    def __post_init__(self) -> None:
        if self.vocab_size <= N_RESERVED:
            raise InputError(f"vocab_size must exceed {N_RESERVED}, got {self.vocab_size}")

    def encode(self, text: str) -> list[int]:
        """Tokenize ``text`` into ids, one per whitespace-separated word.

        ``[SEP]`` and bare option letters map to their reserved ids; all other
        words are lowercased and hashed into the bucket range.
        """
        ids: list[int] = []
        for word in text.split():
            ids.append(self.token_id(word))
        return ids

    def token_id(self, word: str) -> int:
        if word == SEP_TOKEN:
            return SEP_ID
        if len(word) == 1 and word in OPTION_LETTERS:
            return FIRST_LETTER_ID + OPTION_LETTERS.index(word)
        return N_RESERVED + _bucket(word.lower(), self.vocab_size - N_RESERVED)

    def decode(self, ids: list[int]) -> str:
        """Render ids back to text.

        Only the reserved block is invertible; bucket ids contribute nothing.
        Structural tokens (padding, BOS, EOS) are dropped.
        """
        words: list[str] = []
        for token_id in ids:
            if token_id == SEP_ID:
                words.append(SEP_TOKEN)
            elif FIRST_LETTER_ID <= token_id < N_RESERVED:
                words.append(OPTION_LETTERS[token_id - FIRST_LETTER_ID])
        return " ".join(words)

    @staticmethod
    def letter_id(letter: str) -> int:
        """Reserved token id for one option letter."""
        if letter not in OPTION_LETTERS:
            raise InputError(f"no token for option letter {letter!r}")
        return FIRST_LETTER_ID + OPTION_LETTERS.index(letter)

    @staticmethod
    def id_letter(token_id: int) -> str:
        """Option letter for one reserved letter-token id."""
        if not FIRST_LETTER_ID <= token_id < N_RESERVED:
            raise InputError(f"token id {token_id} is not an option letter")
        return OPTION_LETTERS[token_id - FIRST_LETTER_ID]
