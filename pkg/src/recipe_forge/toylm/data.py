"""Turn dialog records back into encoded model inputs."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from ..corpus import Recipe, RecipeSet
from ..errors import DataError
from ..promptkit import INGREDIENTS, NAME, PromptTemplate, format_target, parse_dialog
from .vocab import MAX_VOCAB, EncodedDialog, Vocab, build_vocab, encode_dialog


def vocab_texts(recipes: Iterable[Recipe], bank: Sequence[PromptTemplate]) -> list[str]:
    """Every text the model may see: bank templates (placeholders removed) and recipe fields."""
    texts = [t.template.replace(NAME, " ").replace(INGREDIENTS, " ") for t in bank]
    texts.append("Title: Ingredients: Instructions:")
    for r in recipes:
        texts.append(r.title)
        texts.extend(r.ingredients)
        texts.append(format_target(r, ("instructions",)))
    return texts


def corpus_vocab(recipes: RecipeSet, bank: Sequence[PromptTemplate], max_size: int = MAX_VOCAB) -> Vocab:
    return build_vocab(vocab_texts(recipes, bank), max_size=max_size)


def record_visual(record: Mapping, recipes: Mapping[str, Recipe], d_vis: int) -> np.ndarray:
    vi = record.get("visual_index")
    if vi is None:
        return np.zeros(d_vis)
    recipe = recipes.get(record.get("id"))
    if recipe is None:
        raise DataError(f"record {record.get('index')}: unknown recipe id {record.get('id')!r}")
    if not recipe.image_features or not 0 <= vi < len(recipe.image_features):
        raise DataError(f"record {record.get('index')}: recipe {recipe.id} has no image {vi}")
    return np.array(recipe.image_features[vi], dtype=np.float64)


def encode_records(
    records: Sequence[Mapping],
    recipes: Mapping[str, Recipe],
    vocab: Vocab,
    d_vis: int,
    context: int,
) -> list[EncodedDialog]:
    out = []
    for rec in records:
        query, target = parse_dialog(rec["serialized"])
        out.append(encode_dialog(query, target, record_visual(rec, recipes, d_vis), vocab, context))
    return out
