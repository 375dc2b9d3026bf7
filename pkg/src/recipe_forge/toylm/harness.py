"""Greedy generation and metric reports for a trained toy model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import metrics
from ..textnorm import normalize
from .model import ModelParams, greedy_decode, target_logprobs
from .vocab import encode_dialog, prompt_ids

DEFAULT_MAX_LEN = 96


@dataclass(frozen=True)
class Prediction:
    recipe_id: str
    group: str
    query: str
    reference: str
    candidate: str
    logprobs: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.recipe_id,
            "group": self.group,
            "query": self.query,
            "reference": self.reference,
            "candidate": self.candidate,
        }


@dataclass(frozen=True)
class EvalItem:
    recipe_id: str
    group: str
    query: str
    target: str
    visual: np.ndarray


def predict(
    params: ModelParams,
    items: Iterable[EvalItem],
    max_len: int = DEFAULT_MAX_LEN,
    oracle: bool = False,
) -> list[Prediction]:
    """Greedy-decode each item; ``oracle`` substitutes the reference for the decode."""
    out = []
    for item in items:
        prompt = prompt_ids(item.query, params.vocab)
        room = params.context - len(prompt) + 1
        if room < 1:
            raise ValueError(f"prompt for {item.recipe_id} does not fit the context")
        if oracle:
            candidate = item.target
        else:
            ids = greedy_decode(params, prompt, item.visual, min(max_len, room))
            candidate = params.vocab.detokenize(ids)
        enc = encode_dialog(item.query, item.target, item.visual, params.vocab, params.context)
        out.append(Prediction(item.recipe_id, item.group, item.query, item.target, candidate,
                              tuple(target_logprobs(params, enc))))
    return out


def score(predictions: Sequence[Prediction], workers: Optional[int] = None) -> metrics.MetricReport:
    pairs = [(normalize(p.candidate), normalize(p.reference)) for p in predictions]
    return metrics.evaluate_corpus(pairs, [list(p.logprobs) for p in predictions], workers)


def report_rows(predictions: Sequence[Prediction], by_group: bool = False) -> list[tuple[str, metrics.MetricReport]]:
    """One row per group (sorted) followed by ``overall``; just ``overall`` otherwise."""
    if not predictions:
        raise ValueError("no predictions to score")
    rows = []
    if by_group:
        for group in sorted({p.group for p in predictions}):
            rows.append((group, score([p for p in predictions if p.group == group])))
    rows.append(("overall", score(predictions)))
    return rows
