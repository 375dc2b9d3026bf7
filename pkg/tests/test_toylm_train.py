import math

import numpy as np
import pytest

from recipe_forge.errors import ConfigError, DataError
from recipe_forge.scaledloss import ScaleConfig
from recipe_forge.toylm import checkpoint, model, train


@pytest.mark.parametrize("total,ratio", [(100, 0.03), (7, 0.5), (50, 0.0)])
def test_lr_schedule_closed_form(total, ratio):
    warm = math.ceil(ratio * total)
    for step in range(total):
        if step < warm:
            want = 2.0 * step / warm
        else:
            want = 2.0 * 0.5 * (1 + math.cos(math.pi * (step - warm) / max(1, total - warm)))
        assert train.lr_at(step, total, 2.0, ratio) == pytest.approx(want, abs=1e-12)
    assert train.lr_at(warm, total, 2.0, ratio) == pytest.approx(2.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        train.TrainConfig("S9")
    with pytest.raises(ConfigError):
        train.TrainConfig("S0", trainable=frozenset({"core"}))
    with pytest.raises(ConfigError):
        train.TrainConfig("S1", trainable=frozenset({"map_visual"}))
    with pytest.raises(ConfigError):
        train.TrainConfig("S3")
    with pytest.raises(ConfigError):
        train.TrainConfig("S2", scale_config=ScaleConfig())
    with pytest.raises(ConfigError):
        train.TrainConfig("S1", lr=0)
    assert train.TrainConfig("S1", epochs=3, batch_size=4).total_steps(10) == 9


def test_s0_freezes_everything_but_map(tiny_params, small_encoded):
    before = tiny_params.hashes()
    trained, trace = train.train(tiny_params, small_encoded[:16], train.TrainConfig("S0", lr=1.0, max_steps=5))
    after = trained.hashes()
    for group in ("embed", "core", "out"):
        assert after[group] == before[group]
    assert after["map_visual"] != before["map_visual"]
    assert tiny_params.hashes() == before  # input left untouched
    assert trace.column("step") == list(range(5))


def test_train_is_deterministic(tiny_params, small_encoded):
    cfg = train.TrainConfig("S1", lr=0.05, max_steps=4, seed=3)
    a, ta = train.train(tiny_params, small_encoded[:20], cfg)
    b, tb = train.train(tiny_params, small_encoded[:20], cfg)
    assert a.hashes() == b.hashes()
    assert ta.records == tb.records


def test_s3_trace_logs_scale_terms(tiny_params, small_encoded):
    cfg = train.TrainConfig("S3", lr=0.05, max_steps=3, scale_config=ScaleConfig(mode="paper_literal"))
    _, trace = train.train(tiny_params, small_encoded[:20], cfg)
    for r in trace.records:
        assert r["mode"] == "paper_literal"
        assert 0.0 <= r["l_br"] <= 2.01
        assert r["l_final"] <= 2.01 * r["l_ce"] + 1e-12


def test_s3_final_loss_is_mean_of_per_sample_products(tiny_params, small_encoded):
    batch = model.make_batch(small_encoded[:4])
    loss, _ = model.loss_and_grads(tiny_params, batch, "S3", ScaleConfig(mode="penalty"))
    want = np.mean([v.l_br * ce for v, ce in zip(loss.values, loss.per_sample_ce)])
    assert loss.l_final == pytest.approx(want, rel=1e-12)


def test_trace_roundtrip_and_monotone_steps(tmp_path):
    trace = train.TrainTrace()
    trace.append({"step": 0, "x": 1.0})
    trace.append({"step": 1, "x": 2.0})
    with pytest.raises(ValueError):
        trace.append({"step": 1, "x": 3.0})
    trace.write(tmp_path / "t.jsonl")
    assert train.TrainTrace.read(tmp_path / "t.jsonl").records == trace.records


def test_moving_average():
    np.testing.assert_allclose(train.moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])


def test_checkpoint_roundtrip(tmp_path, tiny_params, small_encoded):
    path = tmp_path / "ck.json"
    checkpoint.save_checkpoint(path, tiny_params, "S1", {"note": 1})
    loaded, meta = checkpoint.load_checkpoint(path)
    assert meta["stage"] == "S1" and meta["extra"] == {"note": 1}
    assert loaded.hashes() == tiny_params.hashes()
    for name, arr in tiny_params.arrays.items():
        assert np.array_equal(arr, loaded.arrays[name])
    batch = model.make_batch(small_encoded[:2])
    assert model.batch_loss(loaded, batch, "S1") == model.batch_loss(tiny_params, batch, "S1")


def test_checkpoint_detects_tampering(tmp_path, tiny_params):
    path = tmp_path / "ck.json"
    checkpoint.save_checkpoint(path, tiny_params, "S0")
    text = path.read_text()
    import json

    doc = json.loads(text)
    doc["arrays"]["b_out"]["data"][0] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        checkpoint.load_checkpoint(path)
    path.write_text("not json")
    with pytest.raises(DataError):
        checkpoint.load_checkpoint(path)
