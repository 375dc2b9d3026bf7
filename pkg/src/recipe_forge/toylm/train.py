"""Stage-aware SGD training with linear warmup and cosine decay."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, NumericalAbort
from ..promptkit import STAGES
from ..scaledloss import ScaleConfig
from .model import ALL_GROUPS, ModelParams, loss_and_grads, make_batch
from .vocab import EncodedDialog

log = logging.getLogger(__name__)

CORE_GROUPS = frozenset({"embed", "core", "out"})


def default_trainable(stage: str) -> frozenset[str]:
    return frozenset({"map_visual"}) if stage == "S0" else ALL_GROUPS


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    epochs: int = 2
    lr: float = 0.5
    warmup_ratio: float = 0.03
    batch_size: int = 8
    seed: int = 0
    trainable: Optional[frozenset[str]] = None
    scale_config: Optional[ScaleConfig] = None
    max_steps: Optional[int] = None

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        trainable = frozenset(self.trainable) if self.trainable is not None else default_trainable(self.stage)
        object.__setattr__(self, "trainable", trainable)
        if not trainable <= ALL_GROUPS:
            raise ConfigError(f"unknown parameter groups {sorted(trainable - ALL_GROUPS)}")
        if self.stage == "S0" and trainable != {"map_visual"}:
            raise ConfigError("stage S0 trains the visual mapping layer only")
        if self.stage != "S0" and not CORE_GROUPS <= trainable:
            raise ConfigError(f"stage {self.stage} must train at least {sorted(CORE_GROUPS)}")
        if (self.scale_config is not None) != (self.stage == "S3"):
            raise ConfigError("a scale configuration is required at S3 and only there")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive")

    def total_steps(self, n_examples: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return self.epochs * math.ceil(n_examples / self.batch_size)

    def to_dict(self) -> dict:
        sc = self.scale_config
        return {
            "stage": self.stage,
            "epochs": self.epochs,
            "lr": self.lr,
            "warmup_ratio": self.warmup_ratio,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "trainable": sorted(self.trainable),
            "max_steps": self.max_steps,
            "scale_config": None if sc is None else
            {"lambda_bleu": sc.lambda_bleu, "lambda_rougeL": sc.lambda_rougeL, "mode": sc.mode},
        }


def warmup_steps(total: int, warmup_ratio: float) -> int:
    return math.ceil(warmup_ratio * total)


def lr_at(step: int, total: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warmup from 0 over ceil(ratio * total) steps, then cosine decay towards 0."""
    warm = warmup_steps(total, warmup_ratio)
    if step < warm:
        return base_lr * step / warm
    progress = (step - warm) / max(1, total - warm)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("trace steps must be strictly increasing")
        self.records.append(record)

    def column(self, name: str) -> list:
        return [r[name] for r in self.records]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "TrainTrace":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def train(
    params: ModelParams,
    dataset: Sequence[EncodedDialog],
    config: TrainConfig,
    monitor: Optional[ScaleConfig] = None,
) -> tuple[ModelParams, TrainTrace]:
    """Run SGD on a copy of ``params``; frozen groups are never touched.

    ``monitor`` logs metric-scale terms at stages that do not apply them.
    Raises :class:`NumericalAbort` (carrying the trace so far) on a non-finite loss.
    """
    if not dataset:
        raise ConfigError("training needs a non-empty dataset")
    params = params.copy()
    scale = config.scale_config if config.stage == "S3" else monitor
    total = config.total_steps(len(dataset))
    rng = np.random.default_rng(config.seed)
    trace = TrainTrace()
    order: list[int] = []
    mode = scale.mode if scale is not None else None

    for step in range(total):
        if len(order) < config.batch_size:
            order.extend(rng.permutation(len(dataset)).tolist())
        idx, order = order[: config.batch_size], order[config.batch_size :]
        batch = make_batch([dataset[i] for i in idx])
        lr = lr_at(step, total, config.lr, config.warmup_ratio)
        loss, grads = loss_and_grads(params, batch, config.stage, scale, config.trainable)
        record = {
            "step": step,
            "lr": lr,
            "stage": config.stage,
            "l_ce": loss.l_ce,
            "l_final": loss.l_final,
            "l_br": loss.l_br,
            "l_bleu": loss.l_bleu,
            "l_rougeL": loss.l_rougeL,
            "rougeL": loss.rougeL,
            "scaled": loss.scaled,
            "mode": mode,
            "clamped": loss.clamped,
        }
        if not math.isfinite(loss.l_final):
            trace.append(record)
            raise NumericalAbort(f"non-finite loss at step {step}", trace)
        for name, grad in grads.items():
            params.arrays[name] -= lr * grad
        record["params_hash"] = params.hashes()
        trace.append(record)
        if step % 50 == 0:
            log.info("step %d/%d lr=%.4g loss=%.4f", step, total, lr, loss.l_final)
    return params, trace


def moving_average(xs: Sequence[float], window: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    window = max(1, min(window, len(xs)))
    return np.convolve(xs, np.ones(window) / window, mode="valid")


def mean_cross_entropy(params: ModelParams, dataset: Sequence[EncodedDialog], batch_size: int = 32) -> float:
    """Example-weighted mean cross-entropy over ``dataset`` (no parameter updates)."""
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        loss, _ = loss_and_grads(params, make_batch(chunk), "S1", trainable=frozenset())
        total += sum(loss.per_sample_ce)
    return total / len(dataset)

