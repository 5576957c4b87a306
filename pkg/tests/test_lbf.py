import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from nmpc_lbf.lbf import (BarrierNet, NonFiniteLoss, SafetyClass, TrainConfig, cbc_residual,
                          classify, forward, input_gradient, train_incremental)
from nmpc_lbf.sensing import Dataset
from nmpc_lbf.world import Position2

from conftest import random_net


def reference_forward(net, p):
    """Independent layer-by-layer recurrence with explicit loops."""
    a = list(p)
    L = len(net.coefs_)
    for l, (W, b) in enumerate(zip(net.coefs_, net.intercepts_)):
        z = [sum(a[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])]
        a = z if l == L - 1 else [np.tanh(v) for v in z]
    return a[0]


def test_layer_shapes(seeded_net):
    assert seeded_net.layer_sizes == [2, 32, 32, 16, 16, 8, 1]
    assert [W.shape for W in seeded_net.coefs_] == [(2, 32), (32, 32), (32, 16), (16, 16), (16, 8), (8, 1)]
    assert all(np.all(b == 0) for b in seeded_net.intercepts_)


def test_zero_and_constant_networks():
    assert forward(BarrierNet.constant(0.0), (3.0, -1.0)) == 0.0
    assert forward(BarrierNet.constant(1.7), (3.0, -1.0)) == 1.7
    assert np.all(input_gradient(BarrierNet.constant(1.7), (0.3, 0.2)) == 0.0)


def test_forward_matches_reference():
    for seed in range(5):
        net = random_net(seed)
        p = np.random.default_rng(seed).normal(size=2)
        assert forward(net, p) == pytest.approx(reference_forward(net, p), abs=1e-12)


def test_forward_deterministic(seeded_net):
    X = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(seeded_net.predict(X), seeded_net.predict(X.copy()))


def test_gradient_single_hidden_layer_by_hand():
    W1 = np.array([[0.5, -1.0], [2.0, 0.3]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.5], [-0.7]])
    net = BarrierNet.from_parameters([W1, W2], [b1, np.array([0.05])])
    p = np.array([0.4, -0.3])
    a = np.tanh(p @ W1 + b1)
    expected = W1 @ (W2[:, 0] * (1 - a ** 2))
    assert np.allclose(input_gradient(net, p), expected, atol=1e-14)
    assert forward(net, p) == pytest.approx(a @ W2[:, 0] + 0.05)


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_gradient_finite_differences(seed, x, y):
    net = random_net(seed)
    p = np.array([x, y])
    g = input_gradient(net, p)
    eps = 1e-5
    fd = np.array([(forward(net, p + e) - forward(net, p - e)) / (2 * eps)
                   for e in np.eye(2) * eps])
    assert np.all(np.abs(g - fd) <= np.maximum(1e-5 * np.abs(fd), 1e-8))


def _constant_data(c, n=64, seed=0):
    X = np.random.default_rng(seed).uniform(-2, 2, size=(n, 2))
    return Dataset(X, np.full(n, c))


def test_training_reduces_loss_on_constant_target():
    net = BarrierNet.from_config(TrainConfig(seed=1))
    rep = train_incremental(net, _constant_data(0.8))
    assert rep.final_loss < rep.initial_loss
    assert rep.epochs_run == 20 and len(rep.epoch_losses) == 20


def test_training_is_stateful():
    net = BarrierNet.from_config(TrainConfig(seed=1))
    data = _constant_data(0.8)
    r1 = train_incremental(net, data)
    r2 = train_incremental(net, data)
    assert r2.initial_loss == r1.final_loss


def test_zero_learning_rate_leaves_parameters_identical():
    net = BarrierNet.from_config(TrainConfig(seed=2, learning_rate=0.0))
    before = [W.copy() for W in net.coefs_]
    train_incremental(net, _constant_data(1.0))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.coefs_))


def test_full_batch_option_is_monotone_enough():
    net = BarrierNet.from_config(TrainConfig(seed=4, batch_size=None))
    rep = train_incremental(net, _constant_data(2.0))
    inc = np.sum(np.diff([rep.initial_loss] + rep.epoch_losses) > 0)
    assert inc <= 0.05 * rep.epochs_run


def test_divergence_raises_and_restores():
    net = BarrierNet.from_config(TrainConfig(seed=0, learning_rate=50.0))
    before = [W.copy() for W in net.coefs_]
    with pytest.raises(NonFiniteLoss):
        train_incremental(net, _constant_data(1e200))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.coefs_))


def test_empty_dataset_rejected(seeded_net):
    with pytest.raises(ValueError):
        train_incremental(seeded_net, Dataset(np.zeros((0, 2)), np.zeros(0)))


def test_classify():
    assert classify(BarrierNet.constant(0.2), Position2(0, 0), 0.2) is SafetyClass.BOUNDARY
    assert classify(BarrierNet.constant(1.2), Position2(0, 0), 0.2) is SafetyClass.SAFE
    assert classify(BarrierNet.constant(0.0), Position2(0, 0), 0.2) is SafetyClass.UNSAFE
    assert classify(BarrierNet.constant(0.2005), (0, 0), 0.2, tol=1e-3) is SafetyClass.BOUNDARY
    with pytest.raises(ValueError):
        classify(BarrierNet.constant(0.0), (0, 0), 0.2, tol=-1)


def test_cbc_residual():
    assert cbc_residual(BarrierNet.constant(2.0), (1, 0), (0, 0), 0.1) == pytest.approx(0.2)
    net = random_net(7)
    p, q = (0.3, -0.4), (0.5, 0.1)
    assert cbc_residual(net, q, p, 1.0) == pytest.approx(forward(net, q))
    direct = forward(net, q) - forward(net, p) + 0.15 * forward(net, p)
    assert cbc_residual(net, q, p, 0.15) == pytest.approx(direct, abs=1e-14)
    with pytest.raises(ValueError):
        cbc_residual(net, q, p, 0.0)


def test_sklearn_estimator_contract(tmp_path):
    net = BarrierNet(epochs=2, random_state=5)
    params = net.get_params()
    assert params["epochs"] == 2 and params["random_state"] == 5
    c = clone(net)
    X = np.random.default_rng(0).uniform(-1, 1, size=(40, 2))
    y = X[:, 0] ** 2
    c.fit(X, y)
    assert c.predict(X).shape == (40,)
    assert np.isfinite(c.score(X, y))
    p = tmp_path / "w.csv"
    c.write_parameters_csv(p)
    back = BarrierNet.read_parameters_csv(p)
    assert np.array_equal(back.predict(X), c.predict(X))


def test_fit_reinitialises():
    X = np.random.default_rng(0).uniform(-1, 1, size=(40, 2))
    y = np.ones(40)
    a = BarrierNet(epochs=3, random_state=1).fit(X, y).predict(X)
    net = BarrierNet(epochs=3, random_state=1).fit(X, -y)
    b = net.fit(X, y).predict(X)
    assert np.array_equal(a, b)
