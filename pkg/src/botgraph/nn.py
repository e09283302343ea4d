"""Minimal dense neural-network core with manual backpropagation.

Shared by the GraphSAGE model and the session-feature MLP baseline. All
math is float64; forward passes are deterministic given parameters, inputs,
and the rng handed to dropout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyBatch, NonDeterministicClosure, NoPositiveLabels,
                     ShapeMismatch)

PROB_CLAMP = 1e-7


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DenseLayer:
    """Fully connected layer y = act(x W^T + b), act in {relu, identity}."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: np.random.Generator | None = None):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        self.W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        self.b = np.zeros(out_dim)
        self.zero_grad()

    def zero_grad(self):
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"expected (*, {self.in_dim}) input, got {x.shape}")
        z = x @ self.W.T + self.b
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def backward(self, x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients, return gradient w.r.t. x.

        For ReLU the pre-activation sign is recovered from y (y > 0 iff
        z > 0), so no cache is needed.
        """
        if dy.shape != y.shape:
            raise ShapeMismatch(f"dy shape {dy.shape} != y shape {y.shape}")
        dz = dy * (y > 0) if self.activation == "relu" else dy
        self.grad_W += dz.T @ x
        self.grad_b += dz.sum(axis=0)
        return dz @ self.W


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Weight decay is coupled: the trainer adds lambda * w to the gradient
    before calling :meth:`step`; the field here just carries the configured
    coefficient.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"grad shape {g.shape} != param "
                                    f"shape {p.shape} for {name!r}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "weight_decay": self.weight_decay, "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "Adam":
        adam = cls(lr=state["lr"], beta1=state["beta1"], beta2=state["beta2"],
                   eps=state["eps"], weight_decay=state["weight_decay"])
        adam.t = state["t"]
        adam.m = {k: np.asarray(v) for k, v in state["m"].items()}
        adam.v = {k: np.asarray(v) for k, v in state["v"].items()}
        return adam


def weighted_bce(y: np.ndarray, y_hat: np.ndarray,
                 weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean weighted binary cross-entropy over probabilities.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log; the
    returned per-example gradient is dL/d(y_hat) at the clamped values.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(y_hat, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = y.size
    if n == 0:
        raise EmptyBatch("weighted_bce over zero examples")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))).sum() / n
    dp = -(w / n) * (y / p - (1.0 - y) / (1.0 - p))
    return float(loss), dp


def weighted_bce_logits(y: np.ndarray, logits: np.ndarray,
                        weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Same loss computed from logits (log-sum-exp form, overflow-safe)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(logits, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = y.size
    if n == 0:
        raise EmptyBatch("weighted_bce_logits over zero examples")
    loss = (w * (np.logaddexp(0.0, z) - y * z)).sum() / n
    dz = (w / n) * (sigmoid(z) - y)
    return float(loss), dz


def dropout(x: np.ndarray, p: float, rng: np.random.Generator,
            training: bool) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout; identity at inference. Returns (output, mask).

    The mask already folds in the 1/(1-p) keep scaling, so the backward
    pass is dx = dy * mask.
    """
    if not (0.0 <= p < 1.0):
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        mask = np.ones_like(x, dtype=float)
        return x, mask
    keep = rng.random(x.shape) >= p
    mask = keep / (1.0 - p)
    return x * mask, mask


def positive_class_weight(y: np.ndarray) -> float:
    """Imbalance weight for the positive class: n_neg / n_pos."""
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0:
        raise NoPositiveLabels("training labels contain no positive class")
    return n_neg / n_pos if n_neg > 0 else 1.0


@dataclass
class EarlyStopper:
    """Keep the best validation value; stop ``patience`` epochs past it."""

    patience: int
    best: float = -np.inf
    best_epoch: int = 0

    def update(self, epoch: int, value: float) -> bool:
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return (epoch - self.best_epoch) >= self.patience


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0


def grad_check(loss_and_grads, params: dict[str, np.ndarray],
               rng: np.random.Generator, h: float = 1e-5,
               max_entries_per_param: int = 64) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grads()`` must run the full forward/backward with dropout
    disabled and sampling frozen; it is called twice up front and must
    return bit-identical losses, otherwise NonDeterministicClosure is
    raised. Entries are sampled per parameter tensor.
    """
    loss0, grads0 = loss_and_grads()
    loss1, _ = loss_and_grads()
    if loss0 != loss1:
        raise NonDeterministicClosure(
            f"closure returned {loss0!r} then {loss1!r}")

    report = GradCheckReport(max_rel_error=0.0)
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries_per_param:
            idx = rng.choice(flat.size, size=max_entries_per_param,
                             replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_and_grads()
            flat[i] = orig - h
            lm, _ = loss_and_grads()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            analytic = grads0[name].reshape(-1)[i]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
            report.checked_entries += 1
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
