import json

import numpy as np
import pytest

from dnsroutine.classifier import (TrainConfig, bce_from_logits, forward, init_params, load_model,
                                   loss_and_gradients, predict, save_model, stratified_split,
                                   train)
from dnsroutine.errors import (ArgumentError, CorruptModelError, ShapeMismatchError,
                               TrainingError, VersionMismatchError)
from dnsroutine.spectral import NormalizationScale, PsdVector

SIZES = (83, 25, 55, 25, 1)


def _params(rng, sizes=SIZES):
    return init_params(sizes, NormalizationScale(np.ones(sizes[0])), rng)


def numeric_gradients(model, x, y, eps=1e-6):
    """Central differences over every parameter (the oracle for backprop)."""
    out = []
    for arr in model.weights + model.biases:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + eps
            up = loss_and_gradients(model, x, y)[0]
            arr[idx] = keep - eps
            down = loss_and_gradients(model, x, y)[0]
            arr[idx] = keep
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def test_layer_shapes(rng):
    model = _params(rng)
    assert [w.shape for w in model.weights] == [(83, 25), (25, 55), (55, 25), (25, 1)]
    assert predict(model, rng.random((4, 83))).shape == (4,)


def test_gradients_match_finite_differences_small_net(rng):
    model = _params(rng, (6, 4, 5, 3, 1))
    x = rng.random((7, 6))
    y = (rng.random(7) > 0.5).astype(float)
    _, gw, gb = loss_and_gradients(model, x, y)
    for a, n in zip(gw + gb, numeric_gradients(model, x, y)):
        np.testing.assert_allclose(a, n, rtol=1e-4, atol=1e-8)


def test_l2_penalty_gradient(rng):
    model = _params(rng, (4, 3, 2, 2, 1))
    x, y = rng.random((5, 4)), np.array([0, 1, 1, 0, 1.0])
    _, gw, _ = loss_and_gradients(model, x, y, l2_first_layer=0.3)
    w = model.weights[0]
    eps = 1e-6
    keep = w[1, 2]
    w[1, 2] = keep + eps
    up = loss_and_gradients(model, x, y, l2_first_layer=0.3)[0]
    w[1, 2] = keep - eps
    down = loss_and_gradients(model, x, y, l2_first_layer=0.3)[0]
    w[1, 2] = keep
    assert gw[0][1, 2] == pytest.approx((up - down) / (2 * eps), rel=1e-5)


def test_bce_is_stable_for_extreme_logits():
    z = np.array([800.0, -800.0])
    assert bce_from_logits(z, np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(bce_from_logits(z, np.array([0.0, 1.0])))


def test_outputs_stay_in_unit_interval(rng):
    model = _params(rng)
    p = predict(model, rng.random((50, 83)) * 50)
    assert ((p >= 0) & (p <= 1)).all()


def test_forward_checks_input(rng):
    model = _params(rng)
    with pytest.raises(ArgumentError):
        forward(model, PsdVector(np.ones(83)))  # not normalized
    with pytest.raises(ArgumentError):
        forward(model, PsdVector(np.ones(82), normalized=True))
    assert 0 <= forward(model, PsdVector(np.full(83, 0.5), normalized=True)) <= 1


def _separable(rng, n=200):
    y = (np.arange(n) < n // 5).astype(float)
    x = rng.random((n, 83)) * 0.3
    x[y == 1, 10] = 0.9 + 0.1 * rng.random(int(y.sum()))
    return x, y


def test_training_learns_separable_data(rng):
    x, y = _separable(rng)
    model = train(x, y, NormalizationScale(np.ones(83)), TrainConfig(seed=1, max_epochs=80))
    p = predict(model, x)
    assert p[y == 1].min() > p[y == 0].max()
    meta = model.metadata
    assert meta["best_val_loss"] == min(meta["history"]["val_loss"])
    assert 1 <= meta["best_epoch"] <= meta["epochs_run"]


def test_training_is_deterministic(rng):
    x, y = _separable(rng, 120)
    cfg = TrainConfig(seed=3, max_epochs=15)
    a = train(x, y, NormalizationScale(np.ones(83)), cfg)
    b = train(x, y, NormalizationScale(np.ones(83)), cfg)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)


def test_early_stopping_respects_patience(rng):
    x = rng.random((100, 83))
    y = (rng.random(100) > 0.8).astype(float)
    y[:3] = 1
    model = train(x, y, NormalizationScale(np.ones(83)),
                  TrainConfig(seed=0, patience_epochs=2, max_epochs=500))
    val = model.metadata["history"]["val_loss"]
    assert len(val) < 500
    # the last `patience` epochs did not beat the running reference by min_delta
    ref = min(val[:-2])
    assert min(val[-2:]) >= ref - 1e-4


def test_single_class_is_training_error(rng):
    with pytest.raises(TrainingError):
        train(rng.random((20, 83)), np.zeros(20), NormalizationScale(np.ones(83)))


def test_too_few_positives_for_validation_split(rng):
    y = np.zeros(30)
    y[0] = 1
    with pytest.raises(TrainingError):
        train(rng.random((30, 83)), y, NormalizationScale(np.ones(83)))


def test_stratified_split_keeps_ratio(rng):
    y = np.array([1] * 20 + [0] * 180)
    tr, va = stratified_split(y, 0.1, rng)
    assert len(va) == 20 and y[va].sum() == 2
    assert len(np.intersect1d(tr, va)) == 0 and len(tr) + len(va) == 200


def test_model_file_roundtrip(tmp_path, rng):
    model = _params(rng)
    model.metadata = {"note": "x"}
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert back.layer_sizes == model.layer_sizes
    for a, b in zip(model.weights + model.biases, back.weights + back.biases):
        np.testing.assert_array_equal(a, b)
    x = rng.random((3, 83))
    np.testing.assert_array_equal(predict(model, x), predict(back, x))


def test_model_file_errors(tmp_path, rng):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(CorruptModelError):
        load_model(path)
    save_model(_params(rng), path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatchError):
        load_model(path)
    doc["version"] = 1
    doc["biases"][0] = doc["biases"][0][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatchError):
        load_model(path)
    del doc["scale"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptModelError):
        load_model(path)
