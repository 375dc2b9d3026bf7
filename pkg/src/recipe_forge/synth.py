"""Deterministic synthetic recipe corpus.

Recipes are assembled from a fixed inventory of cuisines, dishes, proteins and
cooking steps, so a small model can actually learn them. Visual features are
a dish prototype plus a protein prototype plus noise: informative, but not a
lookup table.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import Recipe, RecipeSet

CUISINES = {
    "Italian": ["tomato", "basil", "garlic", "olive oil", "parmesan", "mushroom", "onion", "spinach"],
    "Thai": ["coconut milk", "lemongrass", "chili", "lime", "fish sauce", "ginger", "basil", "rice"],
    "Mexican": ["black beans", "corn", "chili", "lime", "avocado", "cilantro", "tomato", "onion"],
    "French": ["butter", "shallot", "thyme", "cream", "mushroom", "white wine", "garlic", "potato"],
    "Indian": ["cumin", "turmeric", "ginger", "garlic", "yogurt", "onion", "tomato", "rice"],
    "Japanese": ["soy sauce", "ginger", "scallion", "sesame oil", "rice", "mushroom", "seaweed", "carrot"],
}

PROTEINS = ["chicken", "beef", "shrimp", "tofu", "pork", "salmon"]
ADJECTIVES = ["Easy", "Spicy", "Classic", "Quick", "Homemade", "Creamy"]

UNITS = {
    "olive oil": "tablespoons", "sesame oil": "teaspoons", "butter": "tablespoons", "cream": "cup",
    "coconut milk": "cups", "fish sauce": "tablespoons", "soy sauce": "tablespoons", "yogurt": "cup",
    "white wine": "cup", "rice": "cups", "black beans": "cups", "corn": "cups", "cumin": "teaspoons",
    "turmeric": "teaspoon", "thyme": "teaspoon", "garlic": "cloves", "chicken": "pound", "beef": "pound",
    "shrimp": "pound", "tofu": "block", "pork": "pound", "salmon": "fillets",
}

DISHES = {
    "Soup": [
        "Heat the {fat} in a large pot.",
        "Add the {a} and {b} and cook for {t1} minutes.",
        "Stir in the {p} and the {c}.",
        "Pour in water and simmer for {t2} minutes.",
    ],
    "Curry": [
        "Cook the {a} in a pan until soft.",
        "Add the {p} and brown on all sides.",
        "Stir in the {b} and the {c}.",
        "Simmer for {t2} minutes and serve with rice.",
    ],
    "Stir Fry": [
        "Heat the {fat} in a wok over high heat.",
        "Add the {p} and cook for {t1} minutes.",
        "Toss in the {a} and {b}.",
        "Season with the {c} and serve hot.",
    ],
    "Salad": [
        "Grill the {p} for {t1} minutes.",
        "Slice the {a} and the {b}.",
        "Toss everything with the {c}.",
        "Serve cold.",
    ],
    "Stew": [
        "Brown the {p} in a heavy pot.",
        "Add the {a}, the {b} and the {c}.",
        "Cover and cook for {t2} minutes.",
        "Serve warm.",
    ],
    "Bake": [
        "Preheat the oven to {temp} degrees.",
        "Place the {p} in a baking dish with the {a}.",
        "Top with the {b} and the {c}.",
        "Bake for {t2} minutes.",
    ],
}

FATS = {"Italian": "olive oil", "Thai": "coconut milk", "Mexican": "olive oil",
        "French": "butter", "Indian": "butter", "Japanese": "sesame oil"}

_PROTO_SEED = 20240101


def _prototypes(d_vis: int) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    rng = np.random.default_rng(_PROTO_SEED)
    dish = {name: rng.normal(size=d_vis) for name in DISHES}
    protein = {name: 0.5 * rng.normal(size=d_vis) for name in PROTEINS}
    return dish, protein


def _ingredient_line(item: str, rng: np.random.Generator) -> str:
    qty = int(rng.integers(1, 4))
    unit = UNITS.get(item)
    return f"{qty} {unit} {item}" if unit else f"{qty} {item}"


def generate(
    n: int,
    seed: int = 0,
    d_vis: int = 16,
    image_frac: float = 0.7,
    multi_image_frac: float = 0.1,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> RecipeSet:
    """Build ``n`` templated recipes; identical for identical arguments."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    dish_proto, protein_proto = _prototypes(d_vis)
    cuisine_names = list(CUISINES)
    dish_names = list(DISHES)

    order = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    partition = np.empty(n, dtype=object)
    partition[order[:n_train]] = "train"
    partition[order[n_train : n_train + n_val]] = "val"
    partition[order[n_train + n_val :]] = "test"

    recipes = []
    for idx in range(n):
        cuisine = cuisine_names[rng.integers(len(cuisine_names))]
        dish = dish_names[rng.integers(len(dish_names))]
        protein = PROTEINS[rng.integers(len(PROTEINS))]
        adjective = ADJECTIVES[rng.integers(len(ADJECTIVES))]
        pantry = CUISINES[cuisine]
        picks = [pantry[i] for i in rng.choice(len(pantry), size=3, replace=False)]
        fat = FATS[cuisine]
        slots = {
            "p": protein, "a": picks[0], "b": picks[1], "c": picks[2], "fat": fat,
            "t1": int(rng.choice([5, 10, 15])), "t2": int(rng.choice([20, 30, 45])),
            "temp": int(rng.choice([350, 375, 400])),
        }
        items = [protein] + picks
        if fat not in items and any("{fat}" in s for s in DISHES[dish]):
            items.append(fat)
        recipe = Recipe(
            id=f"r{idx:05d}",
            title=f"{adjective} {protein.title()} {dish}",
            ingredients=tuple(_ingredient_line(item, rng) for item in items),
            instructions=tuple(step.format(**slots) for step in DISHES[dish]),
            partition=str(partition[idx]),
            cuisine=cuisine,
        )
        if rng.random() < image_frac:
            n_img = 2 if rng.random() < multi_image_frac else 1
            base = dish_proto[dish] + protein_proto[protein]
            recipe = recipe.with_images([base + 0.3 * rng.normal(size=d_vis) for _ in range(n_img)])
        recipes.append(recipe)
    return RecipeSet(tuple(recipes), d_vis)


def write_corpus(recipes: RecipeSet, recipes_path: str | Path, visual_path: str | Path) -> None:
    """Write the recipe JSONL (text only) and the visual sidecar JSONL."""
    with open(recipes_path, "w", encoding="utf-8") as fh:
        for r in recipes:
            rec = r.to_dict()
            rec.pop("image_features", None)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(visual_path, "w", encoding="utf-8") as fh:
        for r in recipes:
            if r.image_features:
                vectors = [v.tolist() for v in r.image_features]
                fh.write(json.dumps({"id": r.id, "vectors": vectors}) + "\n")
