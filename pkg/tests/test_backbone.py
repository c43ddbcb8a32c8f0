import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabspline.backbone import (
    AdamState,
    LayerNormBlock,
    MlpModel,
    TrainConfig,
    TrainData,
    adamw_step,
    predict,
    softmax_cross_entropy,
    squared_loss,
    train,
)
from tabspline.errors import ConfigError, EmptyTrainingSet, ShapeMismatch, StaleCache

import oracles


def _model(in_dim=3, out_dim=1, hidden=(5, 4), ln=None, dropout=0.0, seed=0):
    return MlpModel(in_dim, out_dim, hidden, dropout, ln, np.random.default_rng(seed), np.float64)


def _flat_loss(model, X, y, name, loss_fn=squared_loss):
    def f(v):
        saved = model.params[name].copy()
        model.params[name] = v.reshape(saved.shape)
        out, _ = model.forward(X)
        model.params[name] = saved
        return loss_fn(out, y)[0]

    return f


def test_zero_network_outputs_zero():
    m = _model()
    for k in m.params:
        m.params[k][...] = 0.0
    out, _ = m.forward(np.random.default_rng(0).normal(size=(7, 3)))
    np.testing.assert_array_equal(out, 0.0)


def test_init_bounds_follow_fan_in():
    m = _model(in_dim=16, hidden=(9,))
    assert np.abs(m.params["W0"]).max() <= 0.25
    assert np.abs(m.params["W1"]).max() <= 1 / 3


def test_two_two_one_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    m = MlpModel(2, 1, (2,), 0.0, None, rng, np.float64)
    X = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    out, cache = m.forward(X)
    grads, g_in = m.backward(cache, squared_loss(out, y)[1])
    for name in m.params:
        fd = oracles.central_diff(_flat_loss(m, X, y, name), m.params[name].ravel(), h=1e-5)
        np.testing.assert_allclose(grads[name].ravel(), fd, rtol=1e-5, atol=1e-9)
    fx = oracles.central_diff(lambda v: squared_loss(m.forward(v.reshape(X.shape))[0], y)[0], X.ravel(), h=1e-5)
    np.testing.assert_allclose(g_in.ravel(), fx, rtol=1e-5, atol=1e-9)


def test_cross_entropy_and_layernorm_gradients():
    rng = np.random.default_rng(2)
    m = _model(in_dim=7, out_dim=3, ln=LayerNormBlock(1, 2, 3))
    m.params["ln_gamma"] = rng.normal(size=(2, 3))
    m.params["ln_beta"] = rng.normal(size=(2, 3))
    X = rng.normal(size=(9, 7))
    y = rng.integers(0, 3, 9)
    out, cache = m.forward(X)
    grads, g_in = m.backward(cache, softmax_cross_entropy(out, y)[1])
    for name in ("W0", "b2", "ln_gamma", "ln_beta"):
        fd = oracles.central_diff(_flat_loss(m, X, y, name, softmax_cross_entropy), m.params[name].ravel())
        np.testing.assert_allclose(grads[name].ravel(), fd, rtol=1e-5, atol=1e-9)
    fx = oracles.central_diff(lambda v: softmax_cross_entropy(m.forward(v.reshape(X.shape))[0], y)[0], X.ravel())
    np.testing.assert_allclose(g_in.ravel(), fx, rtol=1e-5, atol=1e-9)


def test_dropout_gradient_uses_the_same_mask():
    rng = np.random.default_rng(3)
    m = _model(dropout=0.5)
    X = rng.normal(size=(8, 3))
    y = rng.normal(size=8)
    out, cache = m.forward(X, train_mode=True, rng=np.random.default_rng(9))
    grads, _ = m.backward(cache, squared_loss(out, y)[1])

    def f(v):
        saved = m.params["W0"].copy()
        m.params["W0"] = v.reshape(saved.shape)
        o, _ = m.forward(X, train_mode=True, rng=np.random.default_rng(9))
        m.params["W0"] = saved
        return squared_loss(o, y)[0]

    np.testing.assert_allclose(grads["W0"].ravel(), oracles.central_diff(f, m.params["W0"].ravel()), rtol=1e-5, atol=1e-9)


def test_inverted_dropout_preserves_mean():
    m = MlpModel(1, 1, (20000,), 0.3, None, np.random.default_rng(0), np.float64)
    m.params["W0"][...] = 1.0
    m.params["b0"][...] = 0.0
    _, cache = m.forward(np.ones((4, 1)), train_mode=True, rng=np.random.default_rng(1))
    h = cache.acts[1]
    assert np.mean(h == 0) == pytest.approx(0.3, abs=0.01)
    assert h.mean() == pytest.approx(1.0, abs=0.02)


def test_stale_cache_and_shape_errors():
    m = _model()
    out, cache = m.forward(np.zeros((2, 3)))
    m.set_state(m.get_state())
    with pytest.raises(StaleCache):
        m.backward(cache, np.zeros_like(out))
    with pytest.raises(ShapeMismatch):
        m.forward(np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        MlpModel(3, 1, (4,), layer_norm=LayerNormBlock(0, 2, 2))


def test_adamw_zero_gradient_no_decay_is_identity():
    p = {"W0": np.array([1.0, -2.0])}
    adamw_step(p, {"W0": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["W0"], [1.0, -2.0])


def test_adamw_matches_hand_update():
    p = {"W0": np.array([1.0]), "b0": np.array([1.0])}
    g = {"W0": np.array([0.5]), "b0": np.array([0.5])}
    st_ = AdamState()
    lr, wd = 0.01, 0.1
    adamw_step(p, g, st_, lr, wd, decay={"W0": True, "b0": False})
    # first step: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    step = lr * 0.5 / (0.5 + 1e-8)
    assert p["W0"][0] == pytest.approx(1.0 * (1 - lr * wd) - step, abs=1e-15)
    assert p["b0"][0] == pytest.approx(1.0 - step, abs=1e-15)
    adamw_step(p, g, st_, lr, wd, decay={"W0": True, "b0": False})
    m = 0.1 * 0.5 * 0.9 + 0.1 * 0.5
    v = 0.001 * 0.25 * 0.999 + 0.001 * 0.25
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999**2)
    assert p["b0"][0] == pytest.approx(1.0 - step - lr * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-14)


def test_weight_decay_only_on_weights():
    m = _model()
    assert m.decayed("W0") and not m.decayed("b0") and not m.decayed("ln_gamma")


def _regression_data(n=256, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, d))
    y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2
    k = int(0.8 * n)
    return TrainData(X[:k], y[:k], X[k:], y[k:])


def test_single_epoch_history():
    res = train(_model(), _regression_data(), "regression", TrainConfig(max_epochs=1, dtype="float64"))
    assert len(res.history) == 1 and res.best_epoch == 1
    assert set(res.history[0]) == {"epoch", "train_loss", "val_metric", "lr", "knot_lr"}


def test_training_reduces_loss():
    data = _regression_data(512)
    cfg = TrainConfig(max_epochs=60, lr=3e-3, batch_size=64, dropout=0.0, hidden=(32, 16), dtype="float64")
    model = MlpModel(3, 1, cfg.hidden, 0.0, None, np.random.default_rng(0), np.float64)
    res = train(model, data, "regression", cfg)
    assert res.history[-1]["train_loss"] < 0.5 * res.history[0]["train_loss"]
    pred = predict(res.model, data.X_val, "regression")
    assert np.mean((pred - data.y_val) ** 2) == pytest.approx(res.best_val, rel=1e-9)


def test_constant_validation_stops_early_and_decays_lr():
    # zero learning rate: the validation loss never improves after epoch 1
    data = _regression_data()
    cfg = TrainConfig(max_epochs=100, lr=1e-12, dtype="float64")
    res = train(_model(), data, "regression", cfg)
    assert len(res.history) == 1 + cfg.early_stop_patience
    lrs = [h["lr"] for h in res.history]
    assert lrs[10] == pytest.approx(1e-12) and lrs[11] == pytest.approx(1e-13)


def test_best_epoch_parameters_restored():
    data = _regression_data()
    cfg = TrainConfig(max_epochs=30, lr=5e-2, batch_size=16, dtype="float64")
    res = train(_model(seed=4), data, "regression", cfg)
    out, _ = res.model.forward(data.X_val)
    assert squared_loss(out, data.y_val)[0] == pytest.approx(res.best_val, rel=1e-12)
    assert res.best_val == min(h["val_metric"] for h in res.history)


def test_classification_predict_returns_probabilities():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 2))
    y = (X[:, 0] > 0).astype(int) + (X[:, 1] > 1)
    data = TrainData(X[:100], y[:100], X[100:], y[100:])
    res = train(_model(2, 3), data, "multiclass", TrainConfig(max_epochs=3, dtype="float64"))
    P = predict(res.model, X, "multiclass")
    assert P.shape == (120, 3)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_empty_training_set():
    d = TrainData(np.empty((0, 3)), np.empty(0), np.empty((0, 3)), np.empty(0))
    with pytest.raises(EmptyTrainingSet):
        train(_model(), d, "regression", TrainConfig(max_epochs=1))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(dtype="float16")
    assert TrainConfig().with_(seed=3).seed == 3


def test_training_is_deterministic():
    data = _regression_data()
    cfg = TrainConfig(max_epochs=3, dtype="float32")
    a = train(_model(seed=1), data, "regression", cfg)
    b = train(_model(seed=1), data, "regression", cfg)
    assert a.history == b.history


@settings(max_examples=30, deadline=None)
@given(logits=st.lists(st.floats(-20, 20), min_size=6, max_size=6), label=st.integers(0, 2))
def test_cross_entropy_gradient_sums_to_zero(logits, label):
    L = np.array(logits).reshape(2, 3)
    loss, g = softmax_cross_entropy(L, np.array([label, label]))
    assert loss >= 0
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)
