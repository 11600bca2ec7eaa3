"""Mini-batch head training over cached embeddings.

Each epoch shuffles the train set from a dedicated seeded stream, runs
forward/backward/clip/Adam per batch (a final short batch is dropped when its
size is below 2, the batch-norm minimum), then scores the validation set in
eval mode. Parameters are checkpointed at every new validation-loss minimum
and the checkpointed set is returned.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import head as head_mod
from .checkpoint import load_tensors, save_tensors
from .head import HeadParams, HeadState
from .metrics import MetricsReport
from .rng import substream, substream_seed


class TrainingError(Exception):
    """Training aborted (divergence or bad configuration)."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 200
    batch_size: int = 128
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dropout_p: float = 0.1
    bn_momentum: float = 0.1
    block_order: str = head_mod.ORDER_DEFAULT

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   t=0)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    valid_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; argmin valid loss, first occurrence on ties


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds max_norm."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingError(f"non-finite gradient (global norm {norm})")
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns (new params, new state)."""
    t = state.t + 1
    new_m, new_v, updated = {}, {}, {}
    for name, g in grads.items():
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return updated, AdamState(m=new_m, v=new_v, t=t)


def _as_xy(part) -> tuple[np.ndarray, np.ndarray]:
    x, y = part
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def fit(
    train,
    valid,
    config: TrainConfig,
    *,
    init_params: HeadParams | None = None,
    log_path=None,
    checkpoint_dir=None,
) -> tuple[HeadParams, TrainHistory]:
    """Train the head on (X, y) embedding pairs; returns the best-validation params.

    Emits one JSON line per epoch to log_path and rewrites checkpoint_dir on
    every validation-loss improvement, when given.
    """
    x_train, y_train = _as_xy(train)
    x_valid, y_valid = _as_xy(valid)
    n = x_train.shape[0]
    if n == 0 or x_valid.shape[0] == 0:
        raise TrainingError("train and valid sets must be non-empty")
    if config.batch_size > n:
        raise TrainingError(
            f"batch_size {config.batch_size} exceeds train size {n}"
        )

    params = init_params.clone() if init_params is not None else head_mod.init_xavier(
        x_train.shape[1], substream_seed(config.seed, "init")
    )
    train_state = HeadState(
        mode="train", dropout_p=config.dropout_p, bn_momentum=config.bn_momentum,
        block_order=config.block_order, rng=substream(config.seed, "dropout"),
    )
    eval_state = HeadState(mode="eval", dropout_p=config.dropout_p,
                           bn_momentum=config.bn_momentum,
                           block_order=config.block_order)
    shuffle_rng = substream(config.seed, "shuffle")
    adam = AdamState.for_params(params.trainable())

    history = TrainHistory()
    best_params = None
    best_loss = math.inf
    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            perm = shuffle_rng.permutation(n)
            loss_sum = 0.0
            seen = 0
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                if len(idx) < 2:
                    continue
                logp, cache = head_mod.forward(x_train[idx], params, train_state)
                loss = head_mod.nll_loss(logp, y_train[idx])
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"diverged at epoch {epoch}, batch {start // config.batch_size}: "
                        f"loss={loss}"
                    )
                grads = head_mod.backward(cache, y_train[idx], params)
                grads = clip_gradients(grads, config.clip_norm)
                updated, adam = adam_step(params.trainable(), grads, adam, config.lr,
                                          config.beta1, config.beta2, config.eps)
                params = params.with_trainable(updated)
                loss_sum += loss * len(idx)
                seen += len(idx)

            train_loss = loss_sum / seen
            vlogp, _ = head_mod.forward(x_valid, params, eval_state)
            valid_loss = head_mod.nll_loss(vlogp, y_valid)
            valid_acc = float((vlogp.argmax(axis=1) == y_valid).mean())
            history.train_loss.append(train_loss)
            history.valid_loss.append(valid_loss)
            history.valid_accuracy.append(valid_acc)

            if valid_loss < best_loss:
                best_loss = valid_loss
                best_params = params.clone()
                history.best_epoch = epoch
                if checkpoint_dir is not None:
                    save_head_checkpoint(checkpoint_dir, best_params, config,
                                         best_epoch=epoch)
            if log_fh is not None:
                log_fh.write(json.dumps({
                    "epoch": epoch, "train_loss": train_loss,
                    "valid_loss": valid_loss, "valid_accuracy": valid_acc,
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                }) + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()

    return best_params, history


def evaluate(params: HeadParams, test) -> MetricsReport:
    """Eval-mode metrics on a (X, y) pair; argmax prediction, ties go to ham."""
    x_test, y_test = _as_xy(test)
    if x_test.shape[0] == 0:
        raise ValueError("test set must be non-empty")
    logp, _ = head_mod.forward(x_test, params, HeadState(mode="eval"))
    preds = logp.argmax(axis=1)
    return MetricsReport.from_predictions(preds.tolist(), y_test.tolist())


# ---------------------------------------------------------------------------
# head checkpoints (same container format as encoder checkpoints)
# ---------------------------------------------------------------------------

_HEAD_FIELDS = ("w1", "b1", "gamma1", "beta1", "run_mean1", "run_var1",
                "w2", "b2", "gamma2", "beta2", "run_mean2", "run_var2",
                "w3", "b3")


def save_head_checkpoint(out_dir, params: HeadParams, config: TrainConfig,
                         best_epoch: int | None = None) -> Path:
    tensors = {name: getattr(params, name) for name in _HEAD_FIELDS}
    meta = {
        "head_state": {
            "dropout_p": config.dropout_p,
            "bn_momentum": config.bn_momentum,
            "block_order": config.block_order,
        },
        "train_meta": {
            "seed": config.seed,
            "config_hash": config.digest(),
            "lr": config.lr,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "best_epoch": best_epoch,
        },
    }
    shape_config = {
        "d_model": params.d_model,
        "hidden1": head_mod.HIDDEN1,
        "hidden2": head_mod.HIDDEN2,
        "n_classes": head_mod.N_CLASSES,
    }
    return save_tensors(out_dir, tensors, shape_config, extra=meta)


def load_head_checkpoint(src_dir) -> tuple[HeadParams, dict]:
    tensors, manifest = load_tensors(src_dir)
    missing = [name for name in _HEAD_FIELDS if name not in tensors]
    if missing:
        raise TrainingError(f"head checkpoint is missing tensors: {missing}")
    params = HeadParams(**{
        name: tensors[name].astype(np.float64) for name in _HEAD_FIELDS
    })
    return params, manifest
