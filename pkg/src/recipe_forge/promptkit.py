"""Prompt bank, stage-aware task sampling, and dialog serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Recipe, RecipeSet
from .errors import ConfigError, DataError

STAGES = ("S0", "S1", "S2", "S3")
INPUTS = ("image", "title", "ingredients")
TARGET_ORDER = ("title", "ingredients", "instructions")
DROPOUT_STAGES = frozenset({"S2", "S3"})
DEFAULT_MAX_DROPOUT = 0.5

NAME = "<name>"
INGREDIENTS = "<ingredients>"
IMAGE_SENTINEL = "<image>"
STOP = "<STOP>"
HUMAN = "Human : "
ASSISTANT = "Assistant : "
_SEPARATOR = f" {IMAGE_SENTINEL} {STOP}\n{ASSISTANT}"
_END = f" {STOP}\n"

_HEADERS = {"title": "Title:", "ingredients": "Ingredients:", "instructions": "Instructions:"}


class PromptBankError(ConfigError):
    pass


class DialogFormatError(DataError):
    pass


def check_stage(stage: str) -> str:
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return stage


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    stages: frozenset[str]
    required_inputs: frozenset[str]
    targets: tuple[str, ...]
    template: str

    def validate(self) -> None:
        problems = []
        if not self.stages or not self.stages <= set(STAGES):
            problems.append(f"stages {sorted(self.stages)} not a non-empty subset of {STAGES}")
        if not self.required_inputs <= set(INPUTS):
            problems.append(f"required_inputs {sorted(self.required_inputs)} not a subset of {INPUTS}")
        if not self.targets or len(set(self.targets)) != len(self.targets) or not set(self.targets) <= set(TARGET_ORDER):
            problems.append(f"targets {list(self.targets)} must be a non-empty set drawn from {TARGET_ORDER}")
        if (NAME in self.template) != ("title" in self.required_inputs):
            problems.append(f"{NAME} placeholder must appear iff title is a required input")
        if (INGREDIENTS in self.template) != ("ingredients" in self.required_inputs):
            problems.append(f"{INGREDIENTS} placeholder must appear iff ingredients is a required input")
        if self.stages & {"S0", "S1"}:
            if set(self.targets) != {"instructions"} or self.required_inputs != set(INPUTS):
                problems.append("S0/S1 templates must map image+title+ingredients to instructions")
        if STOP in self.template or IMAGE_SENTINEL in self.template:
            problems.append("template may not contain dialog control tokens")
        if problems:
            raise PromptBankError(f"template {self.id!r}: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, obj: dict) -> "PromptTemplate":
        try:
            targets = list(obj["targets"])
            # canonical order; unknown or repeated kinds are kept so validate() reports them
            if len(set(targets)) == len(targets) and set(targets) <= set(TARGET_ORDER):
                targets = [t for t in TARGET_ORDER if t in targets]
            tpl = cls(
                id=str(obj["id"]),
                stages=frozenset(obj["stages"]),
                required_inputs=frozenset(obj["required_inputs"]),
                targets=tuple(targets),
                template=str(obj["template"]),
            )
        except (KeyError, TypeError) as exc:
            raise PromptBankError(f"template {obj.get('id') if isinstance(obj, dict) else obj!r}: malformed ({exc})") from exc
        tpl.validate()
        return tpl

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "stages": sorted(self.stages),
            "required_inputs": [i for i in INPUTS if i in self.required_inputs],
            "targets": list(self.targets),
            "template": self.template,
        }


def load_prompt_bank(path: str | Path) -> list[PromptTemplate]:
    bank: list[PromptTemplate] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PromptBankError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            tpl = PromptTemplate.from_dict(obj)
            if tpl.id in seen:
                raise PromptBankError(f"template {tpl.id!r}: duplicate id")
            seen.add(tpl.id)
            bank.append(tpl)
    return bank


def default_bank_path() -> Path:
    return Path(str(resources.files("recipe_forge") / "data" / "prompt_bank.jsonl"))


def load_default_bank() -> list[PromptTemplate]:
    return load_prompt_bank(default_bank_path())


@dataclass(frozen=True)
class TaskSample:
    template: PromptTemplate
    target_kinds: tuple[str, ...]
    input_mask: frozenset[str]
    stage: str = "S2"

    def __post_init__(self) -> None:
        if not self.input_mask <= self.template.required_inputs:
            raise ValueError("input_mask must be a subset of the template's required inputs")


def applicable(bank: Iterable[PromptTemplate], stage: str) -> list[PromptTemplate]:
    check_stage(stage)
    return [t for t in bank if stage in t.stages]


def sample_task(bank: Sequence[PromptTemplate], stage: str, rng: np.random.Generator) -> TaskSample:
    """Draw a target set uniformly, then a template uniformly within that set."""
    usable = applicable(bank, stage)
    if not usable:
        raise ConfigError(f"no template in the bank applies to stage {stage}")
    target_sets = sorted({t.targets for t in usable})
    chosen = target_sets[int(rng.integers(len(target_sets)))]
    candidates = [t for t in usable if t.targets == chosen]
    tpl = candidates[int(rng.integers(len(candidates)))]
    return TaskSample(tpl, tpl.targets, tpl.required_inputs, stage)


def ingredient_dropout(
    ingredients: Sequence[str], max_frac: float = DEFAULT_MAX_DROPOUT, rng: Optional[np.random.Generator] = None
) -> list[str]:
    """Remove k ~ U{0..floor(max_frac*n)} distinct ingredients, keeping survivor order."""
    if not 0 <= max_frac < 1:
        raise ValueError(f"max_frac must be in [0, 1), got {max_frac}")
    if rng is None:
        raise ValueError("ingredient_dropout needs an explicit seeded generator")
    n = len(ingredients)
    k_max = math.floor(max_frac * n)
    k = int(rng.integers(0, k_max + 1))
    drop = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
    return [x for i, x in enumerate(ingredients) if i not in drop]


def format_instructions(steps: Sequence[str]) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(steps, start=1))


def format_target(recipe: Recipe, targets: Sequence[str]) -> str:
    parts = {
        "title": recipe.title,
        "ingredients": ", ".join(recipe.ingredients),
        "instructions": format_instructions(recipe.instructions),
    }
    if len(targets) == 1:
        return parts[targets[0]]
    sections = []
    for kind in TARGET_ORDER:
        if kind in targets:
            sep = "\n" if kind == "instructions" else " "
            sections.append(f"{_HEADERS[kind]}{sep}{parts[kind]}")
    return "\n".join(sections)


@dataclass(frozen=True, eq=False)
class DialogExample:
    query: str
    target: str
    visual: np.ndarray
    recipe_id: str = ""
    stage: str = ""
    template_id: str = ""
    targets: tuple[str, ...] = ()
    visual_index: Optional[int] = None

    @property
    def serialized(self) -> str:
        return serialize_dialog(self)

    def record(self, index: int) -> dict:
        return {
            "index": index,
            "id": self.recipe_id,
            "stage": self.stage,
            "template_id": self.template_id,
            "targets": list(self.targets),
            "serialized": self.serialized,
            "visual_index": self.visual_index,
        }


def instantiate(
    sample: TaskSample,
    recipe: Recipe,
    d_vis: int,
    rng: np.random.Generator,
    max_dropout: float = DEFAULT_MAX_DROPOUT,
) -> DialogExample:
    """Fill the template from ``recipe`` and pick the visual vector.

    Ingredient dropout applies only at S2/S3. An image that is requested but
    missing (or masked out) becomes the zero vector.
    """
    tpl = sample.template
    query = tpl.template
    if NAME in query:
        if "title" not in sample.input_mask:
            raise ValueError(f"template {tpl.id} needs the title but it is masked out")
        if not recipe.title.strip():
            raise DataError(f"recipe {recipe.id} has no title")
        query = query.replace(NAME, recipe.title)
    if INGREDIENTS in query:
        if "ingredients" not in sample.input_mask:
            raise ValueError(f"template {tpl.id} needs ingredients but they are masked out")
        if not recipe.ingredients:
            raise DataError(f"recipe {recipe.id} has no ingredients")
        items = list(recipe.ingredients)
        if sample.stage in DROPOUT_STAGES:
            items = ingredient_dropout(items, max_dropout, rng)
        query = query.replace(INGREDIENTS, ", ".join(items))

    visual_index = 0 if "image" in sample.input_mask and recipe.has_image else None
    if visual_index is None:
        visual = np.zeros(d_vis)
    else:
        visual = np.array(recipe.image_features[visual_index], dtype=np.float64)
    return DialogExample(
        query=query,
        target=format_target(recipe, sample.target_kinds),
        visual=visual,
        recipe_id=recipe.id,
        stage=sample.stage,
        template_id=tpl.id,
        targets=tuple(sample.target_kinds),
        visual_index=visual_index,
    )


def serialize_dialog(example: DialogExample | tuple[str, str]) -> str:
    query, target = (example.query, example.target) if isinstance(example, DialogExample) else example
    if not target:
        raise DialogFormatError("dialog target is empty")
    for name, text in (("query", query), ("target", target)):
        if STOP in text or IMAGE_SENTINEL in text:
            raise DialogFormatError(f"{name} contains a dialog control token")
    return f"{HUMAN}{query}{_SEPARATOR}{target}{_END}"


def parse_dialog(text: str) -> tuple[str, str]:
    """Inverse of :func:`serialize_dialog`: recover (query, target)."""
    if not text.startswith(HUMAN) or not text.endswith(_END):
        raise DialogFormatError("not a single-round Human/Assistant dialog")
    body = text[len(HUMAN) : -len(_END)]
    if body.count(_SEPARATOR) != 1:
        raise DialogFormatError("dialog must contain exactly one Human and one Assistant turn")
    query, target = body.split(_SEPARATOR)
    if not target:
        raise DialogFormatError("dialog target is empty")
    return query, target


def build_examples(
    bank: Sequence[PromptTemplate],
    recipes: RecipeSet,
    stage: str,
    seed: int,
    per_recipe: int = 1,
    max_dropout: float = DEFAULT_MAX_DROPOUT,
) -> list[DialogExample]:
    """Sample ``per_recipe`` tasks for every recipe with one generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for recipe in recipes:
        for _ in range(per_recipe):
            sample = sample_task(bank, stage, rng)
            out.append(instantiate(sample, recipe, recipes.d_vis, rng, max_dropout))
    return out


def write_examples(examples: Iterable[DialogExample], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for i, ex in enumerate(examples):
            fh.write(json.dumps(ex.record(i), sort_keys=True) + "\n")
            n += 1
    return n


def read_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
