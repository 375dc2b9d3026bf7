import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recipe_forge import scaledloss as sl
from recipe_forge.scaledloss import ScaleConfig


def _onehot(ids, V=5, p=0.9):
    pred = np.full((len(ids), V), (1 - p) / (V - 1))
    pred[np.arange(len(ids)), ids] = p
    return pred


def test_cross_entropy_values():
    pred = np.array([[0.5, 0.5], [0.25, 0.75]])
    ce = sl.cross_entropy(pred, [0, 1])
    assert ce.value == pytest.approx(-(math.log(0.5) + math.log(0.75)) / 2)
    assert ce.clamped == 0


def test_cross_entropy_floor_and_errors():
    ce = sl.cross_entropy(np.array([[1.0, 0.0]]), [1])
    assert ce.value == pytest.approx(-math.log(sl.PROB_FLOOR))
    assert ce.clamped == 1
    with pytest.raises(ValueError):
        sl.cross_entropy(np.ones((2, 2)) / 2, [0])


def test_config_validation():
    with pytest.raises(ValueError):
        ScaleConfig(mode="other")
    with pytest.raises(ValueError):
        ScaleConfig(-1.0, 1.0)
    assert ScaleConfig().max_scale == pytest.approx(2.01)


def test_literal_mode_extremes():
    cfg = ScaleConfig()
    assert sl.metric_scale("add the salt now", "add the salt now", cfg) == pytest.approx(2.01, abs=1e-12)
    assert sl.metric_scale("boil", "add the salt now", cfg) == 0.0
    pen = ScaleConfig(mode="penalty")
    assert sl.metric_scale("add the salt now", "add the salt now", pen) == pytest.approx(0.0, abs=1e-12)
    assert sl.metric_scale("boil", "add the salt now", pen) == pytest.approx(2.01, abs=1e-12)


@given(st.lists(st.sampled_from("abcde"), max_size=8), st.lists(st.sampled_from("abcde"), min_size=1, max_size=8))
def test_scale_in_range_and_modes_complement(a, b):
    y_pred, y_label = " ".join(a), " ".join(b)
    lit = sl.metric_scale(y_pred, y_label, ScaleConfig())
    pen = sl.metric_scale(y_pred, y_label, ScaleConfig(mode="penalty"))
    assert 0.0 <= lit <= 2.01 + 1e-12
    assert lit + pen == pytest.approx(2.01, abs=1e-12)


def test_scaled_loss_is_product():
    assert sl.scaled_loss(2.0, 1.5) == 3.0
    with pytest.raises(ValueError):
        sl.scaled_loss(-1.0, 1.0)


def test_batch_argmax_decode_and_mean():
    detok = lambda ids: " ".join("abcde"[i] for i in ids)
    target = [0, 1, 2, 3]
    perfect = sl.LossSample(_onehot(target), target, "a b c d")
    wrong = (_onehot([4, 4, 4, 4]), target, None, "a b c d")
    batch = sl.scaled_loss_batch([perfect, wrong], ScaleConfig(), detok)
    v0, v1 = batch.values
    assert v0.y_pred == "a b c d" and v0.l_br == pytest.approx(2.01)
    assert v1.y_pred == "e e e e" and v1.l_br == 0.0
    assert batch.mean_l_final == pytest.approx((v0.l_final + v1.l_final) / 2)
    assert v0.l_final == pytest.approx(2.01 * v0.l_ce)


def test_batch_reports_failing_sample():
    with pytest.raises(ValueError, match="sample 1"):
        sl.scaled_loss_batch([(_onehot([0]), [0], "a", "a"), (_onehot([0]), [0, 1], "a", "a")], ScaleConfig())
    with pytest.raises(ValueError):
        sl.scaled_loss_batch([], ScaleConfig())


def test_trace_record_keys():
    v = sl.evaluate_sample(sl.LossSample(_onehot([0]), [0], "a", "a"), ScaleConfig())
    rec = v.trace_record(3, "paper_literal")
    assert set(rec) == {"step", "l_ce", "l_bleu", "l_rougeL", "l_br", "l_final", "mode"}
