"""JSON checkpoints: named arrays with shapes, vocabulary, dimensions, and stage."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError
from .model import GROUPS, ModelParams
from .vocab import Vocab

FORMAT = "recipe-forge-checkpoint"
VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, stage: Optional[str], extra: Optional[dict] = None) -> None:
    arrays = {}
    for group in GROUPS.values():
        for name in group:
            arr = params.arrays[name]
            arrays[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "stage": stage,
        "dims": {"d": params.d, "d_vis": params.d_vis, "context": params.context, "d_hidden": params.d_hidden},
        "vocab": params.vocab.tokens,
        "arrays": arrays,
        "hashes": params.hashes(),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Return the parameters and the checkpoint metadata (stage, hashes, extra)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON checkpoint ({exc.msg})") from exc
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = {
        name: np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in doc["arrays"].items()
    }
    dims = doc["dims"]
    params = ModelParams(Vocab(doc["vocab"]), dims["d"], dims["d_vis"], dims["context"], dims["d_hidden"], arrays)
    if params.hashes() != doc["hashes"]:
        raise DataError(f"{path}: parameter hashes do not match the stored arrays")
    meta = {"stage": doc.get("stage"), "hashes": doc["hashes"], "extra": doc.get("extra", {})}
    return params, meta
