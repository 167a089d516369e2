"""Text cleaning, corpus vocabulary, and padded token-id sequences.

Cleaning does exactly two things, in order: @-mentions become the literal
token USER, then Arabic diacritics (tashkeel U+064B..U+065F, superscript
alef U+0670, tatweel U+0640) are deleted. Tokenization is whitespace
word-level with an UNK fallback; ids 0/1/2 are reserved for PAD/UNK/CLS.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
RESERVED_TOKENS = ("[PAD]", "[UNK]", "[CLS]")

ARABIC_DIACRITICS = frozenset(
    {chr(c) for c in range(0x064B, 0x0660)} | {"ٰ", "ـ"}
)
_DIACRITIC_TABLE = {ord(c): None for c in ARABIC_DIACRITICS}
_MENTION_RE = re.compile(r"@\w+")


def clean_text(raw: str) -> str:
    """Substitute @-mentions with USER, then strip the diacritic set."""
    return _MENTION_RE.sub("USER", raw).translate(_DIACRITIC_TABLE)


@dataclass
class Vocabulary:
    """Bijection between kept tokens and contiguous ids after the reserved three."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_frequency: int = 1
    max_size: int = 0

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_for(self, idx: int) -> str:
        return self.id_to_token[idx]


def build_vocab(corpus: Sequence[str], min_frequency: int = 1, max_size: int = 30000) -> Vocabulary:
    """Rank whitespace tokens by (count desc, token asc) and assign ids 3...

    Tokens below min_frequency are dropped; at most max_size - 3 survive.
    """
    if len(corpus) == 0:
        raise ValueError("build_vocab: empty corpus")
    if min_frequency < 1:
        raise ValueError("min_frequency must be >= 1")
    if max_size < len(RESERVED_TOKENS):
        raise ValueError(f"max_size must be >= {len(RESERVED_TOKENS)}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(text.split())
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_frequency),
        key=lambda tok: (-counts[tok], tok),
    )[: max_size - len(RESERVED_TOKENS)]
    id_to_token = list(RESERVED_TOKENS) + kept
    token_to_id = {tok: i + len(RESERVED_TOKENS) for i, tok in enumerate(kept)}
    return Vocabulary(token_to_id, id_to_token, min_frequency, max_size)


@dataclass
class TokenSequence:
    """Fixed-width id sequence: CLS first, then tokens, PAD-filled tail.

    mask is true exactly on the leading true_length positions.
    """

    ids: np.ndarray
    mask: np.ndarray
    true_length: int


def encode(text: str, vocab: Vocabulary, l_max: int) -> TokenSequence:
    """Map cleaned text to [CLS] + token ids, truncated/padded to l_max."""
    if l_max < 2:
        raise ValueError("l_max must be >= 2")
    kept = [CLS_ID] + [vocab.id_for(tok) for tok in text.split()]
    kept = kept[:l_max]
    n = len(kept)
    ids = np.full(l_max, PAD_ID, dtype=np.int64)
    ids[:n] = kept
    mask = np.zeros(l_max, dtype=bool)
    mask[:n] = True
    return TokenSequence(ids=ids, mask=mask, true_length=n)


def decode(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    """Tokens at unmasked, non-CLS positions (UNK ids render as "[UNK]")."""
    return [
        vocab.token_for(int(i))
        for i, m in zip(seq.ids, seq.mask)
        if m and int(i) != CLS_ID
    ]


def stack_sequences(seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack equal-width sequences into (ids [B,L], mask [B,L]) arrays."""
    if not seqs:
        raise ValueError("stack_sequences: empty batch")
    widths = {len(s.ids) for s in seqs}
    if len(widths) != 1:
        raise ValueError(f"stack_sequences: mixed widths {sorted(widths)}")
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.mask for s in seqs])
    return ids, mask


def repad(seq: TokenSequence, l_max: int) -> TokenSequence:
    """Re-emit the same true tokens at a new fixed width."""
    if l_max < seq.true_length:
        raise ValueError("repad: new width shorter than true_length")
    ids = np.full(l_max, PAD_ID, dtype=np.int64)
    ids[: seq.true_length] = seq.ids[: seq.true_length]
    mask = np.zeros(l_max, dtype=bool)
    mask[: seq.true_length] = True
    return TokenSequence(ids=ids, mask=mask, true_length=seq.true_length)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """One token per line; the first three lines are the reserved entries."""
    Path(path).write_text("\n".join(vocab.id_to_token) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(lines[:3]) != RESERVED_TOKENS:
        raise ValueError(f"vocabulary file must start with {RESERVED_TOKENS}")
    kept = lines[3:]
    token_to_id = {tok: i + len(RESERVED_TOKENS) for i, tok in enumerate(kept)}
    return Vocabulary(token_to_id, list(lines), min_frequency=1, max_size=len(lines))
