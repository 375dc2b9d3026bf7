import pytest
from hypothesis import given
from hypothesis import strategies as st

from recipe_forge.textnorm import detokenize, ngrams, normalize


def test_normalize_splits_words_numbers_and_punctuation():
    assert normalize("Bake at 350 degrees F.") == ["bake", "at", "350", "degrees", "f", "."]
    assert normalize("Add 1/2 cup, then 2.5 tbsp!") == ["add", "1/2", "cup", ",", "then", "2.5", "tbsp", "!"]


def test_normalize_empty_and_whitespace():
    assert normalize("") == []
    assert normalize("   \n\t") == []


def test_ngrams_counts():
    grams = ngrams(["a", "b", "a", "b"], 2)
    assert grams[("a", "b")] == 2
    assert grams[("b", "a")] == 1
    assert ngrams(["a"], 2) == {}


def test_ngrams_rejects_bad_order():
    with pytest.raises(ValueError):
        ngrams(["a"], 0)


@given(st.text(max_size=80))
def test_normalize_is_idempotent_through_detokenize(text):
    tokens = normalize(text)
    assert normalize(detokenize(tokens)) == tokens


@given(st.lists(st.sampled_from("abcd"), max_size=12), st.integers(1, 5))
def test_ngram_total(seq, n):
    assert sum(ngrams(seq, n).values()) == max(0, len(seq) - n + 1)
