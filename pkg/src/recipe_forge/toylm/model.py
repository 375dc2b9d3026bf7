"""A one-block causal LM with a visual mapping layer and hand-written backprop.

Architecture, per sequence of length T <= context:

    x0   = tok_embed + pos_embed        (IMAGE position: visual @ W_map + b_map)
    h    = x0 + softmax_causal(x0 Wq (x0 Wk)^T / sqrt(d)) (x0 Wv) Wo
    z    = h + tanh(h W1 + b1) W2 + b2
    p    = softmax(z W_out + b_out)

Parameter groups: ``map_visual`` (W_map, b_map), ``embed`` (E, P),
``core`` (attention + MLP), ``out`` (W_out, b_out).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import scaledloss
from ..errors import ConfigError
from ..scaledloss import ScaleConfig, ScaledLossValue
from .vocab import IMAGE, PAD, STOP, EncodedDialog, Vocab

GROUPS: dict[str, tuple[str, ...]] = {
    "map_visual": ("W_map", "b_map"),
    "embed": ("E", "P"),
    "core": ("Wq", "Wk", "Wv", "Wo", "W1", "b1", "W2", "b2"),
    "out": ("W_out", "b_out"),
}
ALL_GROUPS = frozenset(GROUPS)
MAX_D = 64
MAX_V = 512
MAX_CONTEXT = 128


class ModelConfigError(ConfigError):
    pass


@dataclass
class ModelParams:
    vocab: Vocab
    d: int
    d_vis: int
    context: int
    d_hidden: int
    arrays: dict[str, np.ndarray]

    @property
    def V(self) -> int:
        return len(self.vocab)

    def copy(self) -> "ModelParams":
        return ModelParams(self.vocab, self.d, self.d_vis, self.context, self.d_hidden,
                           {k: v.copy() for k, v in self.arrays.items()})

    def group_hash(self, group: str) -> str:
        h = hashlib.sha256()
        for name in GROUPS[group]:
            arr = np.ascontiguousarray(self.arrays[name], dtype=np.float64)
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()[:16]

    def hashes(self) -> dict[str, str]:
        return {g: self.group_hash(g) for g in GROUPS}


def init_model(
    vocab: Vocab,
    d: int,
    d_vis: int,
    context: int,
    seed: int,
    d_hidden: Optional[int] = None,
) -> ModelParams:
    if len(vocab) < 4:
        raise ModelConfigError("vocabulary needs at least the 4 reserved tokens")
    if len(vocab) > MAX_V:
        raise ModelConfigError(f"vocabulary of {len(vocab)} exceeds {MAX_V}")
    d_hidden = d_hidden or 2 * d
    for name, value, hi in (("d", d, MAX_D), ("d_vis", d_vis, None), ("context", context, MAX_CONTEXT), ("d_hidden", d_hidden, None)):
        if value < 1 or (hi is not None and value > hi):
            raise ModelConfigError(f"{name}={value} out of range")
    rng = np.random.default_rng(seed)
    V = len(vocab)

    def normal(shape, std):
        return rng.normal(0.0, std, size=shape)

    arrays = {
        "W_map": normal((d_vis, d), 0.3 / np.sqrt(d_vis)),
        "b_map": normal((d,), 0.3),
        "E": normal((V, d), 0.3),
        "P": normal((context, d), 0.3),
        "Wq": normal((d, d), 1 / np.sqrt(d)),
        "Wk": normal((d, d), 1 / np.sqrt(d)),
        "Wv": normal((d, d), 1 / np.sqrt(d)),
        "Wo": normal((d, d), 1 / np.sqrt(d)),
        "W1": normal((d, d_hidden), 1 / np.sqrt(d)),
        "b1": np.zeros(d_hidden),
        "W2": normal((d_hidden, d), 1 / np.sqrt(d_hidden)),
        "b2": np.zeros(d),
        "W_out": normal((d, V), 0.5 / np.sqrt(d)),
        "b_out": np.zeros(V),
    }
    return ModelParams(vocab, d, d_vis, context, d_hidden, arrays)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class _Cache:
    inputs: np.ndarray
    image: np.ndarray
    visual: np.ndarray
    x0: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray
    o: np.ndarray
    h: np.ndarray
    g: np.ndarray
    z: np.ndarray
    probs: np.ndarray


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _image_mask(inputs: np.ndarray) -> np.ndarray:
    image = inputs == IMAGE
    counts = image.sum(axis=1)
    if np.any(counts != 1):
        bad = int(np.flatnonzero(counts != 1)[0])
        raise ValueError(f"sequence {bad} has {int(counts[bad])} IMAGE sentinels; exactly one is required")
    return image


def input_embeddings(params: ModelParams, inputs: np.ndarray, visual: np.ndarray) -> np.ndarray:
    """Token-level embeddings before positions are added; the IMAGE slot holds the mapped visual."""
    inputs = np.atleast_2d(inputs)
    visual = np.atleast_2d(np.asarray(visual, dtype=np.float64))
    image = _image_mask(inputs)
    a = params.arrays
    tok = a["E"][inputs]
    mapped = visual @ a["W_map"] + a["b_map"]
    return np.where(image[..., None], mapped[:, None, :], tok)


def _forward(params: ModelParams, inputs: np.ndarray, visual: np.ndarray) -> _Cache:
    a = params.arrays
    B, T = inputs.shape
    if T > params.context:
        raise ValueError(f"sequence of length {T} exceeds the context of {params.context}")
    if visual.shape != (B, params.d_vis):
        raise ValueError(f"visual batch of shape {visual.shape}, expected {(B, params.d_vis)}")
    image = _image_mask(inputs)
    x0 = input_embeddings(params, inputs, visual) + a["P"][:T]
    q = x0 @ a["Wq"]
    k = x0 @ a["Wk"]
    v = x0 @ a["Wv"]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(params.d)
    causal = np.tril(np.ones((T, T), dtype=bool))
    att = _softmax(np.where(causal, scores, -np.inf))
    o = att @ v
    h = x0 + o @ a["Wo"]
    g = np.tanh(h @ a["W1"] + a["b1"])
    z = h + g @ a["W2"] + a["b2"]
    probs = _softmax(z @ a["W_out"] + a["b_out"])
    return _Cache(inputs, image, visual, x0, q, k, v, att, o, h, g, z, probs)


def forward(params: ModelParams, ids: Sequence[int] | np.ndarray, visual: np.ndarray) -> np.ndarray:
    """Next-token distributions for each position; 1-D ids give (T, V), 2-D give (B, T, V)."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    inputs = np.atleast_2d(ids)
    vis = np.atleast_2d(np.asarray(visual, dtype=np.float64))
    probs = _forward(params, inputs, vis).probs
    return probs[0] if single else probs


def _backward(params: ModelParams, c: _Cache, dlogits: np.ndarray, groups: frozenset[str]) -> dict[str, np.ndarray]:
    a = params.arrays
    grads: dict[str, np.ndarray] = {}
    if "out" in groups:
        grads["W_out"] = np.einsum("btd,btv->dv", c.z, dlogits)
        grads["b_out"] = dlogits.sum(axis=(0, 1))
    if not groups - {"out"}:
        return grads

    dz = dlogits @ a["W_out"].T
    # MLP
    dg = dz @ a["W2"].T
    du = dg * (1.0 - c.g**2)
    dh = dz + du @ a["W1"].T
    # attention
    do = dh @ a["Wo"].T
    datt = do @ c.v.transpose(0, 2, 1)
    dv = c.att.transpose(0, 2, 1) @ do
    ds = c.att * (datt - (datt * c.att).sum(axis=-1, keepdims=True)) / np.sqrt(params.d)
    dq = ds @ c.k
    dk = ds.transpose(0, 2, 1) @ c.q
    if "core" in groups:
        grads["W2"] = np.einsum("bth,btd->hd", c.g, dz)
        grads["b2"] = dz.sum(axis=(0, 1))
        grads["W1"] = np.einsum("btd,bth->dh", c.h, du)
        grads["b1"] = du.sum(axis=(0, 1))
        grads["Wo"] = np.einsum("bti,btj->ij", c.o, dh)
        grads["Wq"] = np.einsum("bti,btj->ij", c.x0, dq)
        grads["Wk"] = np.einsum("bti,btj->ij", c.x0, dk)
        grads["Wv"] = np.einsum("bti,btj->ij", c.x0, dv)
    if not groups & {"embed", "map_visual"}:
        return grads

    dx0 = dh + dq @ a["Wq"].T + dk @ a["Wk"].T + dv @ a["Wv"].T
    if "embed" in groups:
        T = c.inputs.shape[1]
        dP = np.zeros_like(a["P"])
        dP[:T] = dx0.sum(axis=0)
        dE = np.zeros_like(a["E"])
        text = ~c.image
        np.add.at(dE, c.inputs[text], dx0[text])
        grads["E"] = dE
        grads["P"] = dP
    if "map_visual" in groups:
        dimg = dx0[c.image]  # one row per sequence, in batch order
        grads["W_map"] = c.visual.T @ dimg
        grads["b_map"] = dimg.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# batches and losses
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    inputs: np.ndarray      # (B, T) ids fed to the model
    labels: np.ndarray      # (B, T) next-token ids
    loss_mask: np.ndarray   # (B, T) positions predicting target-turn tokens (incl. closing STOP)
    text_mask: np.ndarray   # (B, T) positions predicting target text tokens only
    visual: np.ndarray      # (B, d_vis)
    target_texts: list[str]

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_batch(examples: Sequence[EncodedDialog]) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    T = max(len(e.ids) - 1 for e in examples)
    inputs = np.full((B, T), PAD, dtype=np.int64)
    labels = np.full((B, T), PAD, dtype=np.int64)
    loss_mask = np.zeros((B, T), dtype=bool)
    text_mask = np.zeros((B, T), dtype=bool)
    for i, e in enumerate(examples):
        n = len(e.ids) - 1
        inputs[i, :n] = e.ids[:-1]
        labels[i, :n] = e.ids[1:]
        loss_mask[i, e.n_prompt - 1 : n] = True
        text_mask[i, e.n_prompt - 1 : n - 1] = True
    visual = np.stack([e.visual for e in examples]).astype(np.float64)
    return Batch(inputs, labels, loss_mask, text_mask, visual, [e.target_text for e in examples])


@dataclass
class StepLoss:
    l_final: float
    l_ce: float
    l_br: Optional[float] = None
    l_bleu: Optional[float] = None
    l_rougeL: Optional[float] = None
    rougeL: Optional[float] = None
    scaled: bool = False
    clamped: int = 0
    values: list[ScaledLossValue] = field(default_factory=list)
    per_sample_ce: list[float] = field(default_factory=list)


def teacher_forced_text(probs_row: np.ndarray, text_mask_row: np.ndarray, vocab: Vocab) -> str:
    """Per-position argmax over the target text positions, cut at the first STOP."""
    ids = probs_row[text_mask_row].argmax(axis=1).tolist()
    if STOP in ids:
        ids = ids[: ids.index(STOP)]
    return vocab.detokenize(ids)


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return sum(xs) / len(xs)


def loss_and_grads(
    params: ModelParams,
    batch: Batch,
    stage: str,
    scale_config: Optional[ScaleConfig] = None,
    trainable: Optional[Iterable[str]] = None,
) -> tuple[StepLoss, dict[str, np.ndarray]]:
    """Mean loss over the batch and gradients for the ``trainable`` groups only.

    Stage S3 scales each sample's cross-entropy by its metric scale (treated as
    a constant). At other stages a ``scale_config`` is only monitored: the
    terms are reported but the loss is plain cross-entropy.
    """
    if stage == "S3" and scale_config is None:
        raise ConfigError("stage S3 requires a scale configuration")
    groups = frozenset(trainable) if trainable is not None else (
        frozenset({"map_visual"}) if stage == "S0" else ALL_GROUPS
    )
    if not groups <= ALL_GROUPS:
        raise ModelConfigError(f"unknown parameter groups {sorted(groups - ALL_GROUPS)}")

    cache = _forward(params, batch.inputs, batch.visual)
    probs = cache.probs
    B = len(batch)
    ces = []
    values: list[ScaledLossValue] = []
    clamped = 0
    for i in range(B):
        m = batch.loss_mask[i]
        pred = probs[i, m]
        target = batch.labels[i, m]
        if scale_config is not None:
            y_pred = teacher_forced_text(probs[i], batch.text_mask[i], params.vocab)
            val = scaledloss.evaluate_sample(
                scaledloss.LossSample(pred, target, batch.target_texts[i], y_pred), scale_config
            )
            values.append(val)
            ces.append(val.l_ce)
            clamped += val.clamped
        else:
            ce = scaledloss.cross_entropy(pred, target)
            ces.append(ce.value)
            clamped += ce.clamped

    scaled = stage == "S3"
    weights = np.array([v.l_br for v in values]) if scaled else np.ones(B)
    finals = [w * ce for w, ce in zip(weights, ces)]

    counts = batch.loss_mask.sum(axis=1)
    pos_w = batch.loss_mask * (weights / (B * counts))[:, None]
    dlogits = probs * pos_w[..., None]
    bi, ti = np.nonzero(batch.loss_mask)
    dlogits[bi, ti, batch.labels[bi, ti]] -= pos_w[bi, ti]
    grads = _backward(params, cache, dlogits, groups)

    loss = StepLoss(
        l_final=_mean(finals),
        l_ce=_mean(ces),
        scaled=scaled,
        clamped=clamped,
        values=values,
        per_sample_ce=ces,
    )
    if values:
        loss.l_br = _mean(v.l_br for v in values)
        loss.l_bleu = _mean(v.l_bleu for v in values)
        loss.l_rougeL = _mean(v.l_rougeL for v in values)
        loss.rougeL = _mean(v.rougeL for v in values)
    return loss, grads


def batch_loss(params: ModelParams, batch: Batch, stage: str, scale_config: Optional[ScaleConfig] = None) -> float:
    """Scalar loss only (no gradients); used by finite-difference checks."""
    loss, _ = loss_and_grads(params, batch, stage, scale_config, trainable=frozenset())
    return loss.l_final


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def greedy_decode(params: ModelParams, prompt: Sequence[int], visual: np.ndarray, max_len: int) -> list[int]:
    """Argmax continuation of ``prompt`` until STOP, ``max_len`` tokens, or the context is full."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = list(prompt)
    out: list[int] = []
    vis = np.atleast_2d(np.asarray(visual, dtype=np.float64))
    while len(out) < max_len and len(ids) <= params.context:
        probs = _forward(params, np.array([ids], dtype=np.int64), vis).probs
        nxt = int(probs[0, -1].argmax())
        if nxt == STOP:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def target_logprobs(params: ModelParams, example: EncodedDialog) -> list[float]:
    """Natural-log probabilities of the target-turn tokens under teacher forcing."""
    batch = make_batch([example])
    probs = _forward(params, batch.inputs, batch.visual).probs[0]
    m = batch.loss_mask[0]
    p = probs[m, batch.labels[0, m]]
    return np.log(np.maximum(p, scaledloss.PROB_FLOOR)).tolist()
