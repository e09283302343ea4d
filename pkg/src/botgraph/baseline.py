"""Session-feature MLP baseline: same features, no graph connectivity.

Shares the optimizer, loss, class weights, and early-stopping rule with the
GraphSAGE model so the comparison isolates what relational context adds.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import evaluation
from .features import ColumnStandardizer
from .nn import (Adam, DenseLayer, EarlyStopper, dropout, positive_class_weight,
                 sigmoid, weighted_bce_logits)
from .util import derive_seed


class MlpNet:
    """Two 128-unit ReLU layers plus a logit head, manual backprop."""

    def __init__(self, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.layer1 = DenseLayer(input_dim, hidden_dim, "relu", rng)
        self.layer2 = DenseLayer(hidden_dim, hidden_dim, "relu", rng)
        self.head = DenseLayer(hidden_dim, 1, "identity", rng)

    def _layers(self):
        return {"layer1": self.layer1, "layer2": self.layer2, "head": self.head}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers().items():
            out[f"{name}.W"] = layer.W
            out[f"{name}.b"] = layer.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers().items():
            out[f"{name}.W"] = layer.grad_W
            out[f"{name}.b"] = layer.grad_b
        return out

    def zero_grad(self):
        for layer in self._layers().values():
            layer.zero_grad()

    def forward(self, x: np.ndarray, training: bool = False,
                dropout_p: float = 0.0,
                rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        h1 = self.layer1.forward(x)
        h1d, mask1 = dropout(h1, dropout_p, rng, training)
        h2 = self.layer2.forward(h1d)
        h2d, mask2 = dropout(h2, dropout_p, rng, training)
        logits2d = self.head.forward(h2d)
        cache = (x, h1, mask1, h1d, h2, mask2, h2d, logits2d)
        return logits2d[:, 0], cache

    def backward(self, cache, dlogits: np.ndarray):
        x, h1, mask1, h1d, h2, mask2, h2d, logits2d = cache
        dh2d = self.head.backward(h2d, logits2d, dlogits[:, None])
        dh2 = dh2d * mask2
        dh1d = self.layer2.backward(h1d, h2, dh2)
        dh1 = dh1d * mask1
        self.layer1.backward(x, h1, dh1)


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style binary classifier on standardized session features."""

    def __init__(self, hidden_dim: int = 128, epochs_max: int = 200,
                 patience: int = 10, batch_size: int = 256, lr: float = 1e-3,
                 dropout: float = 0.3, weight_decay: float = 1e-4,
                 seed: int = 0):
        self.hidden_dim = hidden_dim
        self.epochs_max = epochs_max
        self.patience = patience
        self.batch_size = batch_size
        self.lr = lr
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y, train_idx: Sequence[int] | None = None,
            val_idx: Sequence[int] | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if train_idx is None:
            train_idx = np.arange(X.shape[0])
        train_idx = np.asarray(train_idx, dtype=np.int64)
        if val_idx is None:
            rest, held = evaluation.stratified_holdout(
                list(train_idx), y[train_idx], frac=0.1,
                seed=derive_seed(self.seed, "val-holdout"))
            train_idx = np.asarray(rest, dtype=np.int64)
            val_idx = np.asarray(held, dtype=np.int64)
        val_idx = np.asarray(val_idx, dtype=np.int64)

        self.w_pos_ = positive_class_weight(y[train_idx])
        self.scaler_ = ColumnStandardizer().fit(X, fit_rows=train_idx)
        Xs = self.scaler_.transform(X)

        init_rng = np.random.default_rng(derive_seed(self.seed, "init"))
        shuffle_rng = np.random.default_rng(derive_seed(self.seed, "shuffle"))
        drop_rng = np.random.default_rng(derive_seed(self.seed, "dropout"))
        self.net_ = MlpNet(X.shape[1], self.hidden_dim, init_rng)
        self.adam_ = Adam(lr=self.lr, weight_decay=self.weight_decay)
        self.classes_ = np.array([0, 1])

        stopper = EarlyStopper(patience=self.patience)
        best = {k: v.copy() for k, v in self.net_.parameters().items()}
        best_loss = np.inf
        self.history_ = []
        for epoch in range(1, self.epochs_max + 1):
            order = shuffle_rng.permutation(train_idx)
            losses = []
            for lo in range(0, len(order), self.batch_size):
                chunk = order[lo:lo + self.batch_size]
                logits, cache = self.net_.forward(
                    Xs[chunk], training=True, dropout_p=self.dropout,
                    rng=drop_rng)
                yb = y[chunk]
                w = np.where(yb == 1.0, self.w_pos_, 1.0)
                loss, dz = weighted_bce_logits(yb, logits, w)
                self.net_.zero_grad()
                self.net_.backward(cache, dz)
                params = self.net_.parameters()
                grads = self.net_.grads()
                if self.weight_decay:
                    for name in grads:
                        grads[name] = grads[name] + self.weight_decay * params[name]
                self.adam_.step(params, grads)
                losses.append(loss)

            val_logits, _ = self.net_.forward(Xs[val_idx])
            val_auc = evaluation.auc(val_logits, y[val_idx])
            w_val = np.where(y[val_idx] == 1.0, self.w_pos_, 1.0)
            val_loss, _ = weighted_bce_logits(y[val_idx], val_logits, w_val)
            self.history_.append({"epoch": epoch,
                                  "train_loss": float(np.mean(losses)),
                                  "val_auc": float(val_auc),
                                  "val_loss": float(val_loss)})
            improved = stopper.update(epoch, val_auc)
            if improved or (val_auc == stopper.best and val_loss < best_loss):
                best_loss = val_loss
                best = {k: v.copy() for k, v in self.net_.parameters().items()}
            if stopper.should_stop(epoch):
                break

        for name, value in self.net_.parameters().items():
            value[...] = best[name]
        self.best_val_auc_ = stopper.best
        self.threshold_ = None
        return self

    def decision_function(self, X) -> np.ndarray:
        Xs = self.scaler_.transform(np.asarray(X, dtype=float))
        logits, _ = self.net_.forward(Xs)
        return logits

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        t = self.threshold_ if self.threshold_ is not None else 0.5
        return (self.predict_proba(X)[:, 1] >= t).astype(int)
