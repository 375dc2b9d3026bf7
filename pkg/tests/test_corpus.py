import json
import logging

import numpy as np
import pytest

from recipe_forge import corpus, synth
from recipe_forge.corpus import Recipe, RecipeSet


def _recipe(rid, partition="test", image=False, cuisine="Thai", d_vis=4):
    r = Recipe(rid, f"Dish {rid}", ("salt",), ("Cook it.",), partition, cuisine)
    return r.with_images([np.ones(d_vis)]) if image else r


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_load_recipes_rejects_bad_lines(tmp_path):
    good = json.dumps(_recipe("a").to_dict())
    lines = [
        good,
        "{not json",
        json.dumps({"id": "b", "title": "T", "ingredients": [], "instructions": ["x"], "partition": "test"}),
        json.dumps({"id": "c", "title": "T", "ingredients": ["x"], "instructions": ["x"], "partition": "dev"}),
        good,  # duplicate id
        json.dumps(dict(_recipe("d").to_dict(), image_features=[[1.0, 2.0]])),  # wrong dimension
    ]
    rs = corpus.load_recipes(_write(tmp_path / "r.jsonl", lines), d_vis=4)
    assert rs.ids == ["a"]
    assert [r.line for r in rs.rejections] == [2, 3, 4, 5, 6]
    assert rs.rejections[3].reason == "duplicate id"


def test_load_recipes_missing_file(tmp_path):
    with pytest.raises(OSError):
        corpus.load_recipes(tmp_path / "nope.jsonl", d_vis=4)


def test_visual_sidecar_join_and_unknown_ids(tmp_path, caplog):
    rs = RecipeSet((_recipe("a"), _recipe("b")), d_vis=4)
    side = _write(tmp_path / "v.jsonl", [
        json.dumps({"id": "a", "vectors": [[0, 1, 2, 3]]}),
        json.dumps({"id": "zzz", "vectors": [[0, 0, 0, 0]]}),
        json.dumps({"id": "b", "vectors": [[0, 1]]}),
    ])
    table, rejections = corpus.load_visual_sidecar(side, d_vis=4)
    assert len(rejections) == 1 and rejections[0].record_id == "b"
    with caplog.at_level(logging.WARNING):
        joined, unknown = corpus.attach_visuals(rs, table)
    assert unknown == ["zzz"]
    assert "zzz" in caplog.text
    by_id = joined.by_id()
    assert by_id["a"].has_image and not by_id["b"].has_image
    np.testing.assert_array_equal(by_id["a"].image_features[0], [0, 1, 2, 3])


def test_image_features_are_read_only():
    r = _recipe("a", image=True)
    with pytest.raises(ValueError):
        r.image_features[0][0] = 5.0


def test_recipe_round_trip():
    r = _recipe("a", image=True)
    assert corpus.recipe_from_dict(r.to_dict(), d_vis=4) == r


def test_duplicate_ids_rejected_in_set():
    with pytest.raises(ValueError):
        RecipeSet((_recipe("a"), _recipe("a")), d_vis=4)


def test_filter_with_images_exact_subset():
    rs = RecipeSet(tuple(_recipe(f"r{i}", image=i % 3 == 0) for i in range(12)), d_vis=4)
    assert corpus.filter_with_images(rs).ids == [f"r{i}" for i in range(0, 12, 3)]


def test_sample_subset_deterministic_and_distinct():
    rs = synth.generate(50, seed=2)
    a = corpus.sample_subset(rs, 20, seed=7)
    b = corpus.sample_subset(rs, 20, seed=7)
    c = corpus.sample_subset(rs, 20, seed=8)
    assert a.ids == b.ids
    assert a.ids != c.ids
    assert len(set(a.ids)) == 20
    with pytest.raises(ValueError):
        corpus.sample_subset(rs, 51, seed=0)
    with pytest.raises(ValueError):
        corpus.sample_subset(rs, 0, seed=0)


def test_cuisine_slices():
    rs = RecipeSet((_recipe("a", cuisine="Thai"), _recipe("b", cuisine="thai"), _recipe("c", cuisine="French"),
                    _recipe("d", cuisine=None)), d_vis=4)
    assert corpus.cuisines(rs) == ["french", "thai"]
    assert corpus.cuisine_slice(rs, "THAI").ids == ["a", "b"]


def test_synth_corpus_is_deterministic_and_partitioned(tmp_path):
    a = synth.generate(40, seed=1)
    b = synth.generate(40, seed=1)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert {r.partition for r in a} == {"train", "val", "test"}
    synth.write_corpus(a, tmp_path / "r.jsonl", tmp_path / "v.jsonl")
    text = corpus.load_recipes(tmp_path / "r.jsonl", a.d_vis)
    assert not text.rejections and not any(r.has_image for r in text)
    table, rej = corpus.load_visual_sidecar(tmp_path / "v.jsonl", a.d_vis)
    joined, unknown = corpus.attach_visuals(text, table)
    assert not rej and not unknown
    assert [r.to_dict() for r in joined] == [r.to_dict() for r in a]
