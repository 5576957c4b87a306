"""Learned barrier function: a small tanh MLP from position to barrier value.

`BarrierNet` follows the scikit-learn regressor protocol (``fit``,
``partial_fit``, ``predict``, ``get_params``) so it can be inspected and
cross-validated like any other estimator. ``partial_fit`` is the per-tick
incremental update used by the controller: parameters persist between calls.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DEFAULT_HIDDEN = (32, 32, 16, 16, 8)


class NonFiniteLoss(ArithmeticError):
    """Training produced a NaN/inf loss; parameters were rolled back."""


class SafetyClass(enum.Enum):
    SAFE = "safe"
    BOUNDARY = "boundary"
    UNSAFE = "unsafe"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int | None = 32   # None -> full batch
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")


@dataclass
class TrainReport:
    initial_loss: float
    final_loss: float
    epochs_run: int
    epoch_losses: list = field(default_factory=list)


def _tanh_forward(coefs, intercepts, X):
    """Return the list of layer activations; the last layer is affine."""
    acts = [X]
    last = len(coefs) - 1
    for i, (W, b) in enumerate(zip(coefs, intercepts)):
        z = acts[-1] @ W + b
        acts.append(z if i == last else np.tanh(z))
    return acts


class BarrierNet(RegressorMixin, BaseEstimator):
    """Fully connected tanh network approximating a barrier function on R^2.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the tanh hidden layers. The output node is affine.
    learning_rate : float
        Step size of plain stochastic gradient descent on the squared error.
    epochs : int
        Passes over the data per ``fit``/``partial_fit`` call.
    batch_size : int or None
        Minibatch size; ``None`` trains full-batch.
    random_state : int
        Seeds weight initialisation and minibatch shuffling.

    Attributes
    ----------
    coefs_ : list of ndarray
        ``coefs_[l]`` has shape (n_in, n_out) for layer ``l``.
    intercepts_ : list of ndarray
    last_report_ : TrainReport
    """

    def __init__(self, hidden_layer_sizes=DEFAULT_HIDDEN, learning_rate=0.01,
                 epochs=20, batch_size=32, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    # -- construction -------------------------------------------------

    @classmethod
    def from_config(cls, cfg: TrainConfig, hidden_layer_sizes=DEFAULT_HIDDEN) -> "BarrierNet":
        net = cls(hidden_layer_sizes=hidden_layer_sizes, learning_rate=cfg.learning_rate,
                  epochs=cfg.epochs, batch_size=cfg.batch_size, random_state=cfg.seed)
        return net.initialize()

    @classmethod
    def from_parameters(cls, coefs, intercepts, **params) -> "BarrierNet":
        coefs = [np.array(W, dtype=float) for W in coefs]
        intercepts = [np.array(b, dtype=float).reshape(-1) for b in intercepts]
        hidden = tuple(W.shape[1] for W in coefs[:-1])
        net = cls(hidden_layer_sizes=hidden, **params)
        net._set_parameters(coefs, intercepts)
        net._rng = np.random.default_rng(net.random_state)
        return net

    @classmethod
    def constant(cls, value: float, hidden_layer_sizes=DEFAULT_HIDDEN) -> "BarrierNet":
        """Network whose output is ``value`` everywhere (all weights zero)."""
        sizes = [2, *hidden_layer_sizes, 1]
        coefs = [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])]
        intercepts = [np.zeros(o) for o in sizes[1:]]
        intercepts[-1][0] = value
        return cls.from_parameters(coefs, intercepts)

    @property
    def layer_sizes(self):
        return [2, *self.hidden_layer_sizes, 1]

    def initialize(self) -> "BarrierNet":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(self.random_state)
        sizes = self.layer_sizes
        coefs, intercepts = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (n_in + n_out))
            coefs.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            intercepts.append(np.zeros(n_out))
        self._set_parameters(coefs, intercepts)
        self._rng = rng
        return self

    def _set_parameters(self, coefs, intercepts):
        for W, b in zip(coefs, intercepts):
            if W.shape[1] != b.shape[0]:
                raise ValueError("bias length does not match layer width")
        for W0, W1 in zip(coefs[:-1], coefs[1:]):
            if W0.shape[1] != W1.shape[0]:
                raise ValueError("inconsistent layer shapes")
        if coefs[0].shape[0] != 2 or coefs[-1].shape[1] != 1:
            raise ValueError("network must map R^2 -> R")
        self.coefs_ = coefs
        self.intercepts_ = intercepts
        self.n_features_in_ = 2

    # -- evaluation ---------------------------------------------------

    def _check_input(self, X):
        check_is_fitted(self, "coefs_")
        return check_array(X, dtype=float, ensure_2d=True)

    def predict(self, X) -> np.ndarray:
        X = self._check_input(X)
        return _tanh_forward(self.coefs_, self.intercepts_, X)[-1][:, 0]

    def value_and_gradient(self, X):
        """Barrier values (n,) and input gradients (n, 2) in one pass."""
        X = self._check_input(X)
        acts = _tanh_forward(self.coefs_, self.intercepts_, X)
        g = np.ones((X.shape[0], 1))
        for layer in range(len(self.coefs_) - 1, -1, -1):
            g = g @ self.coefs_[layer].T
            if layer > 0:
                g = g * (1.0 - acts[layer] ** 2)
        return acts[-1][:, 0], g

    def input_gradient(self, X) -> np.ndarray:
        return self.value_and_gradient(X)[1]

    def mse(self, X, y) -> float:
        r = self.predict(X) - np.asarray(y, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.mean(r * r))

    # -- training -----------------------------------------------------

    def fit(self, X, y):
        """Re-initialise, then train for ``epochs`` passes."""
        self.initialize()
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        """Continue training from the current parameters for ``epochs`` passes.

        Raises NonFiniteLoss (after restoring the pre-call parameters) if the
        loss diverges.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 input features, got {X.shape[1]}")
        if not hasattr(self, "coefs_"):
            self.initialize()
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        backup = ([W.copy() for W in self.coefs_], [b.copy() for b in self.intercepts_],
                  self._rng.bit_generator.state)
        try:
            self.last_report_ = self._train(X, y)
        except NonFiniteLoss:
            self.coefs_, self.intercepts_ = backup[0], backup[1]
            self._rng.bit_generator.state = backup[2]
            raise
        return self

    def _train(self, X, y) -> TrainReport:
        n = X.shape[0]
        bs = n if self.batch_size is None else min(int(self.batch_size), n)
        lr = float(self.learning_rate)
        coefs, intercepts = self.coefs_, self.intercepts_
        n_layers = len(coefs)

        initial = self.mse(X, y)
        if not np.isfinite(initial):
            raise NonFiniteLoss(f"initial loss {initial}")
        losses = []
        for _ in range(int(self.epochs)):
            order = self._rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                acts = _tanh_forward(coefs, intercepts, X[idx])
                g = (2.0 / idx.size) * (acts[-1] - y[idx, None])
                for layer in range(n_layers - 1, -1, -1):
                    gW = acts[layer].T @ g
                    gb = g.sum(axis=0)
                    if layer > 0:
                        g = (g @ coefs[layer].T) * (1.0 - acts[layer] ** 2)
                    coefs[layer] -= lr * gW
                    intercepts[layer] -= lr * gb
            loss = self.mse(X, y)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss}")
            losses.append(loss)
        return TrainReport(initial_loss=initial, final_loss=losses[-1],
                           epochs_run=len(losses), epoch_losses=losses)

    # -- persistence --------------------------------------------------

    def write_parameters_csv(self, path) -> None:
        """One row per parameter: layer, kind (W or b), row, col, value.

        Layers are listed in order; within a layer the (n_in, n_out) weight
        matrix comes first in row-major order, then the bias vector.
        """
        check_is_fitted(self, "coefs_")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "kind", "row", "col", "value"])
            for layer, (W, b) in enumerate(zip(self.coefs_, self.intercepts_)):
                for i in range(W.shape[0]):
                    for j in range(W.shape[1]):
                        w.writerow([layer, "W", i, j, repr(float(W[i, j]))])
                for j, v in enumerate(b):
                    w.writerow([layer, "b", 0, j, repr(float(v))])

    @classmethod
    def read_parameters_csv(cls, path, **params) -> "BarrierNet":
        rows = list(csv.DictReader(open(path, newline="")))
        n_layers = 1 + max(int(r["layer"]) for r in rows)
        coefs, intercepts = [], []
        for layer in range(n_layers):
            Wr = [r for r in rows if int(r["layer"]) == layer and r["kind"] == "W"]
            br = [r for r in rows if int(r["layer"]) == layer and r["kind"] == "b"]
            shape = (1 + max(int(r["row"]) for r in Wr), 1 + max(int(r["col"]) for r in Wr))
            W = np.zeros(shape)
            for r in Wr:
                W[int(r["row"]), int(r["col"])] = float(r["value"])
            coefs.append(W)
            intercepts.append(np.array([float(r["value"]) for r in br]))
        return cls.from_parameters(coefs, intercepts, **params)


def forward(net: BarrierNet, p) -> float:
    """Barrier value at a single position (Position2 or 2-sequence)."""
    xy = [p.x, p.y] if hasattr(p, "x") else list(p)
    return float(net.predict(np.array([xy], dtype=float))[0])


def input_gradient(net: BarrierNet, p) -> np.ndarray:
    xy = [p.x, p.y] if hasattr(p, "x") else list(p)
    return net.input_gradient(np.array([xy], dtype=float))[0]


def train_incremental(net: BarrierNet, data, cfg: TrainConfig | None = None) -> TrainReport:
    """Run one incremental training round on ``data`` (a sensing.Dataset).

    ``cfg`` overrides the net's learning rate, epochs and batch size for this
    and later calls; its seed is only used when the net is first initialised.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if cfg is not None:
        net.set_params(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                       batch_size=cfg.batch_size)
    net.partial_fit(data.inputs, data.labels)
    return net.last_report_


def classify(net: BarrierNet, p, delta: float, tol: float = 1e-3) -> SafetyClass:
    if tol < 0:
        raise ValueError("tol must be >= 0")
    h = forward(net, p)
    if abs(h - delta) <= tol:
        return SafetyClass.BOUNDARY
    return SafetyClass.SAFE if h > delta else SafetyClass.UNSAFE


def cbc_residual(net: BarrierNet, p_next, p_now, gamma: float, margin: float = 0.0) -> float:
    """Discrete control-barrier residual; nonnegative means the condition holds."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    h_next = forward(net, p_next) - margin
    h_now = forward(net, p_now) - margin
    return h_next - h_now + gamma * h_now
