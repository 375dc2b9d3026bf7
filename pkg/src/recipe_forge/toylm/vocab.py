"""Frequency-built vocabulary and dialog encoding for the toy LM."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..textnorm import normalize

PAD, STOP, IMAGE, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<stop>", "<image>", "<unk>")
HUMAN_TOKENS = ("human", ":")
ASSISTANT_TOKENS = ("assistant", ":")
MAX_VOCAB = 512


class VocabError(ValueError):
    pass


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise VocabError(f"vocabulary must start with the reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("vocabulary tokens must be unique")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def detokenize(self, ids: Iterable[int]) -> str:
        return " ".join(self.decode(ids))

    def oov_rate(self, texts: Iterable[str]) -> float:
        total = missing = 0
        for text in texts:
            for tok in normalize(text):
                total += 1
                missing += tok not in self.index
        return missing / total if total else 0.0


def build_vocab(texts: Iterable[str], max_size: int = MAX_VOCAB, min_count: int = 1) -> Vocab:
    """Most frequent normalized tokens (ties broken alphabetically) after the reserved ids."""
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(normalize(text))
    for tok in HUMAN_TOKENS + ASSISTANT_TOKENS:
        counts[tok] += 1
    ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + ranked[: max_size - len(RESERVED)])


@dataclass(frozen=True)
class EncodedDialog:
    """Token ids of one dialog; the loss covers predictions of ``ids[n_prompt:]``."""

    ids: np.ndarray
    n_prompt: int
    visual: np.ndarray
    target_text: str

    @property
    def n_target(self) -> int:
        return len(self.ids) - self.n_prompt


def prompt_ids(query: str, vocab: Vocab) -> list[int]:
    return (
        vocab.encode(HUMAN_TOKENS)
        + vocab.encode(normalize(query))
        + [IMAGE, STOP]
        + vocab.encode(ASSISTANT_TOKENS)
    )


def encode_dialog(query: str, target: str, visual: np.ndarray, vocab: Vocab, max_len: int) -> EncodedDialog:
    """Encode a dialog so that the model input (all ids but the last) fits ``max_len``.

    Target tokens are truncated from the end when needed; the closing STOP is kept.
    """
    prompt = prompt_ids(query, vocab)
    if len(prompt) + 1 > max_len:
        raise VocabError(f"prompt of {len(prompt)} tokens does not fit the context of {max_len}")
    body = vocab.encode(normalize(target))
    room = max_len + 1 - len(prompt) - 1
    ids = prompt + body[:room] + [STOP]
    return EncodedDialog(np.array(ids, dtype=np.int64), len(prompt), np.asarray(visual, dtype=np.float64), target)
