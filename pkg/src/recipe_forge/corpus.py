"""Recipe records, JSONL ingestion, and evaluation-split construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

PARTITIONS = ("train", "val", "test")


class RecipeError(ValueError):
    """A record violates the Recipe invariants."""


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str
    record_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {"line": self.line, "id": self.record_id, "reason": self.reason}


def _freeze(vec: Sequence[float]) -> np.ndarray:
    arr = np.array(vec, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Recipe:
    id: str
    title: str
    ingredients: tuple[str, ...]
    instructions: tuple[str, ...]
    partition: str
    cuisine: Optional[str] = None
    image_features: Optional[tuple[np.ndarray, ...]] = None

    @property
    def has_image(self) -> bool:
        return bool(self.image_features)

    def validate(self, d_vis: int) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise RecipeError("id must be a non-empty string")
        if not " ".join(self.title.split()):
            raise RecipeError("title is empty")
        if len(self.ingredients) < 1:
            raise RecipeError("ingredients list is empty")
        if len(self.instructions) < 1:
            raise RecipeError("instructions list is empty")
        if self.partition not in PARTITIONS:
            raise RecipeError(f"partition must be one of {PARTITIONS}, got {self.partition!r}")
        for vec in self.image_features or ():
            if vec.shape != (d_vis,):
                raise RecipeError(f"image feature of shape {vec.shape}, expected ({d_vis},)")
            if not np.all(np.isfinite(vec)):
                raise RecipeError("image feature contains non-finite values")

    def with_images(self, vectors: Optional[Iterable[Sequence[float]]]) -> "Recipe":
        feats = tuple(_freeze(v) for v in vectors) if vectors is not None else None
        return replace(self, image_features=feats or None)

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "title": self.title,
            "ingredients": list(self.ingredients),
            "instructions": list(self.instructions),
            "partition": self.partition,
        }
        if self.cuisine is not None:
            out["cuisine"] = self.cuisine
        if self.image_features:
            out["image_features"] = [v.tolist() for v in self.image_features]
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Recipe):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(self.id)


def _str_list(value: object, key: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise RecipeError(f"{key} must be an array of strings")
    return tuple(value)


def recipe_from_dict(obj: Mapping, d_vis: int) -> Recipe:
    if not isinstance(obj, Mapping):
        raise RecipeError("record is not a JSON object")
    for key in ("id", "title", "ingredients", "instructions", "partition"):
        if key not in obj:
            raise RecipeError(f"missing key {key!r}")
    if not isinstance(obj["title"], str):
        raise RecipeError("title must be a string")
    cuisine = obj.get("cuisine")
    if cuisine is not None and not isinstance(cuisine, str):
        raise RecipeError("cuisine must be a string")
    feats = obj.get("image_features")
    recipe = Recipe(
        id=obj["id"],
        title=obj["title"],
        ingredients=_str_list(obj["ingredients"], "ingredients"),
        instructions=_str_list(obj["instructions"], "instructions"),
        partition=obj["partition"],
        cuisine=cuisine,
    )
    if feats is not None:
        try:
            recipe = recipe.with_images(feats)
        except (TypeError, ValueError) as exc:
            raise RecipeError(f"bad image_features: {exc}") from exc
    recipe.validate(d_vis)
    return recipe


@dataclass(frozen=True)
class RecipeSet:
    recipes: tuple[Recipe, ...]
    d_vis: int
    rejections: tuple[Rejection, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.d_vis < 1:
            raise ValueError("d_vis must be positive")
        object.__setattr__(self, "recipes", tuple(self.recipes))
        ids = [r.id for r in self.recipes]
        if len(set(ids)) != len(ids):
            raise ValueError("recipe ids must be unique within a set")

    def __len__(self) -> int:
        return len(self.recipes)

    def __iter__(self) -> Iterator[Recipe]:
        return iter(self.recipes)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.recipes]

    def by_id(self) -> dict[str, Recipe]:
        return {r.id: r for r in self.recipes}

    def _derive(self, recipes: Iterable[Recipe]) -> "RecipeSet":
        return RecipeSet(tuple(recipes), self.d_vis)

    def partition(self, name: str) -> "RecipeSet":
        return self._derive(r for r in self.recipes if r.partition == name)


def load_recipes(path: str | Path, d_vis: int) -> RecipeSet:
    """Read a recipe JSONL file.

    Malformed or invalid lines are skipped and reported in ``rejections``;
    duplicated ids keep the first occurrence. Only an unreadable file raises.
    """
    recipes: list[Recipe] = []
    rejections: list[Rejection] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                rejections.append(Rejection(lineno, f"malformed JSON: {exc.msg}"))
                continue
            rid = obj.get("id") if isinstance(obj, dict) else None
            try:
                recipe = recipe_from_dict(obj, d_vis)
            except RecipeError as exc:
                rejections.append(Rejection(lineno, str(exc), rid if isinstance(rid, str) else None))
                continue
            if recipe.id in seen:
                rejections.append(Rejection(lineno, "duplicate id", recipe.id))
                continue
            seen.add(recipe.id)
            recipes.append(recipe)
    return RecipeSet(tuple(recipes), d_vis, tuple(rejections))


def load_visual_sidecar(path: str | Path, d_vis: int) -> tuple[dict[str, list[np.ndarray]], list[Rejection]]:
    """Read ``{id, vectors}`` lines; vectors of the wrong dimension are rejected."""
    table: dict[str, list[np.ndarray]] = {}
    rejections: list[Rejection] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                vectors = [np.asarray(v, dtype=np.float64) for v in obj["vectors"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                rejections.append(Rejection(lineno, f"malformed visual record: {exc}"))
                continue
            bad = [v.shape for v in vectors if v.shape != (d_vis,) or not np.all(np.isfinite(v))]
            if bad:
                rejections.append(Rejection(lineno, f"vector shape(s) {bad}, expected ({d_vis},)", rid))
                continue
            table.setdefault(rid, []).extend(vectors)
    return table, rejections


def attach_visuals(recipes: RecipeSet, table: Mapping[str, Sequence[np.ndarray]]) -> tuple[RecipeSet, list[str]]:
    """Join sidecar vectors on id. Returns the new set and sidecar ids with no recipe."""
    known = set(recipes.ids)
    unknown = sorted(rid for rid in table if rid not in known)
    for rid in unknown:
        log.warning("visual sidecar id %r has no recipe; vectors dropped", rid)
    joined = []
    for r in recipes:
        if r.id in table:
            existing = list(r.image_features or ())
            joined.append(r.with_images(existing + list(table[r.id])))
        else:
            joined.append(r)
    return RecipeSet(tuple(joined), recipes.d_vis, recipes.rejections), unknown


def write_recipes(recipes: Iterable[Recipe], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in recipes:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def filter_with_images(recipes: RecipeSet) -> RecipeSet:
    return recipes._derive(r for r in recipes if r.has_image)


def sample_subset(recipes: RecipeSet, n: int, seed: int) -> RecipeSet:
    """Draw ``n`` distinct recipes without replacement, in draw order."""
    if n < 1:
        raise ValueError(f"subset size must be positive, got {n}")
    if n > len(recipes):
        raise ValueError(f"cannot draw {n} recipes from a set of {len(recipes)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(recipes), size=n, replace=False)
    return recipes._derive(recipes.recipes[i] for i in idx)


def cuisine_slice(recipes: RecipeSet, label: str) -> RecipeSet:
    key = label.casefold()
    return recipes._derive(r for r in recipes if r.cuisine is not None and r.cuisine.casefold() == key)


def cuisines(recipes: RecipeSet) -> list[str]:
    """Distinct cuisine labels (case-folded), sorted."""
    return sorted({r.cuisine.casefold() for r in recipes if r.cuisine})
