"""Cross-entropy and the BLEU/ROUGE-L multiplicative loss scale.

The scale ``L_BR`` is computed from decoded text, so it carries no gradient:
``L_final = L_BR * L_CE`` and ``dL_final = L_BR * dL_CE``.

Two readings of the scale are supported:

* ``paper_literal``: ``L_BR = lb * (1 - L_bleu) + lr * (1 - L_rougeL)``,
  which reduces to ``lb * BLEU + lr * ROUGE-L``.
* ``penalty``: ``L_BR = lb * L_bleu + lr * L_rougeL``, which grows as the
  generation gets worse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics
from .textnorm import normalize

PROB_FLOOR = 1e-12
MODES = ("paper_literal", "penalty")
DEFAULT_LAMBDA_BLEU = 1.01
DEFAULT_LAMBDA_ROUGE = 1.0


@dataclass(frozen=True)
class ScaleConfig:
    lambda_bleu: float = DEFAULT_LAMBDA_BLEU
    lambda_rougeL: float = DEFAULT_LAMBDA_ROUGE
    mode: str = "paper_literal"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"scale mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_bleu < 0 or self.lambda_rougeL < 0:
            raise ValueError("scale weights must be non-negative")
        if self.lambda_bleu == 0 and self.lambda_rougeL == 0:
            raise ValueError("at least one scale weight must be positive")

    @property
    def max_scale(self) -> float:
        return self.lambda_bleu + self.lambda_rougeL


@dataclass(frozen=True)
class CrossEntropy:
    value: float
    clamped: int = 0


def cross_entropy(pred: np.ndarray, target: Sequence[int]) -> CrossEntropy:
    """Mean negative log-probability of ``target`` under per-position distributions.

    Zero probabilities are floored at 1e-12; ``clamped`` counts them.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    if pred.ndim != 2 or pred.shape[0] != target.shape[0]:
        raise ValueError(f"prediction length {pred.shape[:1]} does not match target length {target.shape}")
    if target.size == 0:
        raise ValueError("cross-entropy needs at least one position")
    if target.min() < 0 or target.max() >= pred.shape[1]:
        raise ValueError("target id outside the vocabulary")
    p = pred[np.arange(target.size), target]
    clamped = int(np.count_nonzero(p < PROB_FLOOR))
    return CrossEntropy(float(-np.mean(np.log(np.maximum(p, PROB_FLOOR)))), clamped)


@dataclass(frozen=True)
class ScaleTerms:
    bleu: float
    rougeL: float
    l_bleu: float
    l_rougeL: float
    l_br: float


def scale_terms(y_pred: str, y_label: str, config: ScaleConfig) -> ScaleTerms:
    cand = normalize(y_pred)
    ref = normalize(y_label)
    b = metrics.sacrebleu(cand, ref)
    r = metrics.rouge_l(cand, ref).f1
    l_bleu = 1.0 - b
    l_rouge = 1.0 - r
    if config.mode == "paper_literal":
        l_br = config.lambda_bleu * (1.0 - l_bleu) + config.lambda_rougeL * (1.0 - l_rouge)
    else:
        l_br = config.lambda_bleu * l_bleu + config.lambda_rougeL * l_rouge
    return ScaleTerms(b, r, l_bleu, l_rouge, l_br)


def metric_scale(y_pred: str, y_label: str, config: ScaleConfig) -> float:
    return scale_terms(y_pred, y_label, config).l_br


def scaled_loss(l_ce: float, l_br: float) -> float:
    if l_ce < 0 or l_br < 0:
        raise ValueError("loss terms must be non-negative")
    return l_br * l_ce


@dataclass(frozen=True)
class ScaledLossValue:
    l_ce: float
    l_bleu: float
    l_rougeL: float
    l_br: float
    l_final: float
    y_label: str
    y_pred: str
    rougeL: float = 0.0
    clamped: int = 0

    def trace_record(self, step: int, mode: str) -> dict:
        return {
            "step": step,
            "l_ce": self.l_ce,
            "l_bleu": self.l_bleu,
            "l_rougeL": self.l_rougeL,
            "l_br": self.l_br,
            "l_final": self.l_final,
            "mode": mode,
        }

    def to_json(self, step: int, mode: str) -> str:
        return json.dumps(self.trace_record(step, mode), sort_keys=True)


@dataclass(frozen=True)
class LossSample:
    pred: np.ndarray
    target: Sequence[int]
    y_label: str
    y_pred: Optional[str] = None


@dataclass
class BatchLoss:
    mean_l_final: float
    values: list[ScaledLossValue] = field(default_factory=list)

    def mean(self, name: str) -> float:
        return sum(getattr(v, name) for v in self.values) / len(self.values)


def greedy_text(pred: np.ndarray, detokenize: Callable[[Sequence[int]], str]) -> str:
    return detokenize(np.asarray(pred).argmax(axis=1).tolist())


def _default_detok(ids: Sequence[int]) -> str:
    return " ".join(str(i) for i in ids)


def evaluate_sample(
    sample: LossSample,
    config: ScaleConfig,
    detokenize: Callable[[Sequence[int]], str] = _default_detok,
) -> ScaledLossValue:
    ce = cross_entropy(sample.pred, sample.target)
    y_pred = sample.y_pred if sample.y_pred is not None else greedy_text(sample.pred, detokenize)
    terms = scale_terms(y_pred, sample.y_label, config)
    return ScaledLossValue(
        l_ce=ce.value,
        l_bleu=terms.l_bleu,
        l_rougeL=terms.l_rougeL,
        l_br=terms.l_br,
        l_final=scaled_loss(ce.value, terms.l_br),
        y_label=sample.y_label,
        y_pred=y_pred,
        rougeL=terms.rougeL,
        clamped=ce.clamped,
    )


def scaled_loss_batch(
    batch: Sequence[LossSample | tuple],
    config: ScaleConfig,
    detokenize: Callable[[Sequence[int]], str] = _default_detok,
) -> BatchLoss:
    """Per-sample scaled losses and their mean.

    Items are :class:`LossSample` or ``(pred, target, y_pred, y_label)`` tuples;
    a ``None`` ``y_pred`` is replaced by the per-position argmax decode.
    """
    if not batch:
        raise ValueError("scaled_loss_batch needs a non-empty batch")
    values = []
    for i, item in enumerate(batch):
        if not isinstance(item, LossSample):
            pred, target, y_pred, y_label = item
            item = LossSample(pred, target, y_label, y_pred)
        try:
            values.append(evaluate_sample(item, config, detokenize))
        except ValueError as exc:
            raise ValueError(f"sample {i}: {exc}") from exc
    mean = math.fsum(v.l_final for v in values) / len(values)
    return BatchLoss(mean, values)
