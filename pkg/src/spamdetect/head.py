"""Trainable classifier head over frozen encoder features.

Two blocks of Linear -> Dropout(0.1) -> BatchNorm -> ReLU -> Dropout(0.1)
(d_model -> 175 -> 100), then Linear(100 -> 2) -> log-softmax. Gradients are
hand-derived for exactly this composition, including differentiation through
the batch statistics in train mode. All head math runs at float64; an
alternative block ordering (dropout on both sides of batch norm, before the
ReLU) is available behind `block_order`.

Dropout is inverted (survivors scaled by 1/(1-p) at train time), so eval mode
is exactly the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

HIDDEN1 = 175
HIDDEN2 = 100
N_CLASSES = 2
BN_EPS = 1e-5

ORDER_DEFAULT = "drop_bn_relu_drop"
ORDER_ALT = "drop_bn_drop_relu"

TRAINABLE = ("w1", "b1", "gamma1", "beta1",
             "w2", "b2", "gamma2", "beta2",
             "w3", "b3")


@dataclass
class HeadParams:
    w1: np.ndarray          # (d_model, 175)
    b1: np.ndarray          # (175,)
    gamma1: np.ndarray      # (175,)
    beta1: np.ndarray       # (175,)
    run_mean1: np.ndarray   # (175,)
    run_var1: np.ndarray    # (175,)
    w2: np.ndarray          # (175, 100)
    b2: np.ndarray          # (100,)
    gamma2: np.ndarray      # (100,)
    beta2: np.ndarray       # (100,)
    run_mean2: np.ndarray   # (100,)
    run_var2: np.ndarray    # (100,)
    w3: np.ndarray          # (100, 2)
    b3: np.ndarray          # (2,)

    @property
    def d_model(self) -> int:
        return int(self.w1.shape[0])

    def trainable(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRAINABLE}

    def with_trainable(self, updated: dict[str, np.ndarray]) -> "HeadParams":
        return dataclasses.replace(self, **updated)

    def clone(self) -> "HeadParams":
        return HeadParams(**{
            f.name: getattr(self, f.name).copy() for f in dataclasses.fields(self)
        })


def init_xavier(d_model: int, seed: int) -> HeadParams:
    """Xavier-uniform weights, zero biases, identity batch-norm, unit running var."""
    if d_model < 1:
        raise ValueError(f"d_model must be >= 1, got {d_model}")
    rng = np.random.Generator(np.random.PCG64(seed))

    def xavier(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return HeadParams(
        w1=xavier(d_model, HIDDEN1), b1=np.zeros(HIDDEN1),
        gamma1=np.ones(HIDDEN1), beta1=np.zeros(HIDDEN1),
        run_mean1=np.zeros(HIDDEN1), run_var1=np.ones(HIDDEN1),
        w2=xavier(HIDDEN1, HIDDEN2), b2=np.zeros(HIDDEN2),
        gamma2=np.ones(HIDDEN2), beta2=np.zeros(HIDDEN2),
        run_mean2=np.zeros(HIDDEN2), run_var2=np.ones(HIDDEN2),
        w3=xavier(HIDDEN2, N_CLASSES), b3=np.zeros(N_CLASSES),
    )


@dataclass
class HeadState:
    mode: str = "train"              # "train" | "eval"
    dropout_p: float = 0.1
    bn_momentum: float = 0.1
    block_order: str = ORDER_DEFAULT
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.block_order not in (ORDER_DEFAULT, ORDER_ALT):
            raise ValueError(f"unknown block_order {self.block_order!r}")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise x_i - log(sum_j exp(x_j)), max-subtracted for stability."""
    z = x - np.max(x, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def dropout(x: np.ndarray, p: float, state: HeadState):
    """Inverted dropout. Returns (output, scaled mask); eval mode is identity."""
    if state.mode != "train" or p == 0.0:
        return x, None
    if state.rng is None:
        raise ValueError("train-mode dropout needs an rng on the HeadState")
    keep = (state.rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


def batchnorm_forward(x, gamma, beta, run_mean, run_var, state: HeadState):
    """Normalize per feature; train mode uses batch stats and updates running ones.

    Batch variance is biased (1/N); the running variance update applies the
    N/(N-1) correction. Returns (out, cache).
    """
    if state.mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError(f"batch norm needs batch size >= 2 in train mode, got {n}")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv
        m = state.bn_momentum
        run_mean *= 1.0 - m
        run_mean += m * mean
        run_var *= 1.0 - m
        run_var += m * var * n / (n - 1)
    else:
        inv = 1.0 / np.sqrt(run_var + BN_EPS)
        xhat = (x - run_mean) * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def _batchnorm_backward(dout, cache, train: bool):
    xhat, inv, gamma = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if train:
        n = dout.shape[0]
        dx = (inv / n) * (n * dxhat
                          - dxhat.sum(axis=0)
                          - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


def _apply_mask(h, mask):
    return h if mask is None else h * mask


def _block_forward(x, w, b, gamma, beta, run_mean, run_var, state, given_masks):
    z = x @ w + b
    if given_masks is None:
        d1, m1 = dropout(z, state.dropout_p, state)
    else:
        m1 = given_masks[0]
        d1 = _apply_mask(z, m1)
    bn, bn_cache = batchnorm_forward(d1, gamma, beta, run_mean, run_var, state)
    if state.block_order == ORDER_DEFAULT:
        act = relu(bn)
        if given_masks is None:
            out, m2 = dropout(act, state.dropout_p, state)
        else:
            m2 = given_masks[1]
            out = _apply_mask(act, m2)
        relu_in = bn
    else:  # dropout on both sides of batch norm, then ReLU
        if given_masks is None:
            d2, m2 = dropout(bn, state.dropout_p, state)
        else:
            m2 = given_masks[1]
            d2 = _apply_mask(bn, m2)
        out = relu(d2)
        relu_in = d2
    cache = {"x": x, "w": w, "m1": m1, "m2": m2, "bn_cache": bn_cache,
             "relu_in": relu_in}
    return out, cache


def _block_backward(dout, cache, train: bool, order: str):
    if order == ORDER_DEFAULT:
        d_act = _apply_mask(dout, cache["m2"])
        d_bn = d_act * (cache["relu_in"] > 0)
    else:
        d_relu = dout * (cache["relu_in"] > 0)
        d_bn = _apply_mask(d_relu, cache["m2"])
    d_d1, dgamma, dbeta = _batchnorm_backward(d_bn, cache["bn_cache"], train)
    dz = _apply_mask(d_d1, cache["m1"])
    dw = cache["x"].T @ dz
    db = dz.sum(axis=0)
    dx = dz @ cache["w"].T
    return dx, dw, db, dgamma, dbeta


def forward(x, params: HeadParams, state: HeadState, masks=None):
    """Forward pass; returns (log_probs (batch, 2), cache for backward).

    In train mode dropout masks come from state.rng unless `masks` (a tuple of
    four scaled masks, as stored in a previous cache) is given.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[0]:
        raise ValueError(
            f"input must be (batch, {params.w1.shape[0]}), got {x.shape}"
        )
    train = state.mode == "train"
    if train and x.shape[0] < 2:
        raise ValueError("train-mode forward needs batch size >= 2")

    pair1 = None if masks is None else masks[0:2]
    pair2 = None if masks is None else masks[2:4]
    h1, c1 = _block_forward(x, params.w1, params.b1, params.gamma1, params.beta1,
                            params.run_mean1, params.run_var1, state, pair1)
    h2, c2 = _block_forward(h1, params.w2, params.b2, params.gamma2, params.beta2,
                            params.run_mean2, params.run_var2, state, pair2)
    logits = h2 @ params.w3 + params.b3
    logp = log_softmax(logits)
    cache = {
        "blocks": (c1, c2), "h2": h2, "logp": logp,
        "train": train, "order": state.block_order,
        "masks": (c1["m1"], c1["m2"], c2["m1"], c2["m2"]),
    }
    return logp, cache


def nll_loss(log_probs: np.ndarray, labels) -> float:
    """Mean negative log-likelihood of the true classes."""
    labels = np.asarray(labels)
    n = log_probs.shape[0]
    return float(-log_probs[np.arange(n), labels].mean())


def backward(cache, labels, params: HeadParams) -> dict[str, np.ndarray]:
    """Exact gradients of mean NLL w.r.t. every trainable parameter.

    Reuses the dropout masks cached by the forward pass; batch-norm backward
    differentiates through the batch statistics in train mode.
    """
    if not isinstance(cache, dict) or "logp" not in cache:
        raise ValueError("backward requires the cache of a completed forward pass")
    labels = np.asarray(labels)
    logp = cache["logp"]
    n = logp.shape[0]
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    c1, c2 = cache["blocks"]
    train, order = cache["train"], cache["order"]

    grads: dict[str, np.ndarray] = {}
    grads["w3"] = cache["h2"].T @ dlogits
    grads["b3"] = dlogits.sum(axis=0)
    dh2 = dlogits @ params.w3.T

    dh1, grads["w2"], grads["b2"], grads["gamma2"], grads["beta2"] = \
        _block_backward(dh2, c2, train, order)
    _, grads["w1"], grads["b1"], grads["gamma1"], grads["beta1"] = \
        _block_backward(dh1, c1, train, order)
    return {name: grads[name] for name in TRAINABLE}
