"""Shared tokenizer and n-gram counting.

Every metric and the toy LM vocabulary go through :func:`normalize`, so scores
are internally consistent even though they are not bit-compatible with any
particular third-party scorer.
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

# numerals (with inner decimal/fraction separators) | word runs | any other single char
_TOKEN_RE = re.compile(r"\d+(?:[.,/]\d+)*|[^\W_]+|\S")

Token = str
TokenSeq = list[str]
NGram = tuple[str, ...]


def normalize(text: str) -> TokenSeq:
    """Lowercase ``text`` and split it into word, numeral and punctuation tokens.

    >>> normalize("Bake at 350 degrees F.")
    ['bake', 'at', '350', 'degrees', 'f', '.']
    """
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def ngrams(seq: Sequence[str], n: int) -> Counter[NGram]:
    """Multiset of contiguous ``n``-grams of ``seq``."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    seq = tuple(seq)
    return Counter(seq[i : i + n] for i in range(len(seq) - n + 1))
