"""Loss, RMSProp, training loop and autoregressive rollout."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError, NumericGuardError
from .data import WindowDataset, build_windows, feature_range
from .model import ModelConfig, TransformerModel, backward, forward

log = logging.getLogger(__name__)


def mse_loss(Y, Y_hat) -> float:
    """Mean of squared errors over samples and features."""
    Y, Y_hat = np.asarray(Y, dtype=float), np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape:
        raise DomainError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    if Y.size == 0:
        raise DomainError("empty input")
    return float(np.mean((Y - Y_hat) ** 2))


@dataclass
class RMSPropState:
    cache: dict = field(default_factory=dict)
    steps: int = 0


def rmsprop_step(params: dict, grads: dict, state: RMSPropState, lr: float = 1e-3,
                 decay: float = 0.9, eps: float = 1e-8) -> RMSPropState:
    """In-place update ``p -= lr * g / (sqrt(cache) + eps)`` with a running mean-square cache."""
    for k, g in grads.items():
        c = state.cache.get(k)
        if c is None:
            c = np.zeros_like(g)
        c = decay * c + (1.0 - decay) * g * g
        state.cache[k] = c
        params[k] -= lr * g / (np.sqrt(c) + eps)
    state.steps += 1
    return state


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    lr_final: Optional[float] = None


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    val_mse: float


def prepare_model(config: ModelConfig, train_features: Sequence[np.ndarray], seed: int = 0) -> TransformerModel:
    """Initialise weights and fit normalisation statistics on training trajectories."""
    model = TransformerModel.initialize(config, seed)
    lo, hi = feature_range(train_features)
    model.feat_min, model.feat_max = lo, hi
    if config.residual:
        inc = np.concatenate([np.diff((np.asarray(f) - lo) / (hi - lo), axis=0) for f in train_features])
        model.delta_scale = np.maximum(inc.std(axis=0), 1e-6)
    return model


def normalized(model: TransformerModel, data: WindowDataset) -> WindowDataset:
    return WindowDataset(model.normalize(data.inputs), model.normalize(data.targets), data.episode_index)


def output_targets(model: TransformerModel, inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Training targets in output space (standardized increments when residual)."""
    if model.config.residual:
        return (targets - inputs[:, -1, :]) / model.delta_scale
    return targets


def predict_batch(model: TransformerModel, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [forward(model, inputs[i:i + batch_size]) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.empty((0, model.config.n_outputs))


def evaluate_mse(model: TransformerModel, data: WindowDataset) -> float:
    """One-step MSE in normalised [0, 1] units on normalised windows."""
    return mse_loss(data.targets, predict_batch(model, data.inputs))


def loss_and_grads(model, inputs, targets, train_mode=False, rng=None, masks=None):
    _, out, cache = forward(model, inputs, train_mode=train_mode, rng=rng, masks=masks, return_cache=True)
    tgt = output_targets(model, inputs, targets)
    loss = mse_loss(tgt, out)
    grads = backward(model, cache, 2.0 * (out - tgt) / out.size)
    return loss, grads


def train(model: TransformerModel, dataset: WindowDataset, epochs: int = 20, batch_size: int = 64,
          seed: int = 0, lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-8,
          val: Optional[WindowDataset] = None, eval_subset: int = 2048,
          lr_final: Optional[float] = None):
    """Mini-batch RMSProp on normalised windows; returns ``(model, history)``.

    The training objective is the MSE in output space.  ``history`` holds one
    :class:`EpochLog` per epoch with the one-step MSE in normalised units on
    (a fixed subset of) the training set and on ``val``.  Shuffling and
    dropout draw from separate streams of ``seed``.  With ``lr_final`` the
    step size follows a cosine schedule from ``lr`` down to ``lr_final``.
    """
    if len(dataset) == 0:
        raise DomainError("empty training set")
    shuffle_ss, drop_ss, eval_ss = np.random.SeedSequence([seed, 0x7A1]).spawn(3)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))
    eval_idx = np.sort(np.random.Generator(np.random.PCG64(eval_ss)).permutation(len(dataset))[:eval_subset])
    train_eval = dataset[eval_idx]
    state = RMSPropState()
    history = []
    good = model.copy()
    n_batches = -(-len(dataset) // batch_size)
    total = max(1, epochs * n_batches - 1)
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            try:
                loss, grads = loss_and_grads(model, dataset.inputs[b], dataset.targets[b], True, drop_rng)
            except NumericGuardError as exc:
                raise NumericGuardError(str(exc), checkpoint=good) from exc
            if not np.isfinite(loss):
                raise NumericGuardError(f"non-finite loss in epoch {epoch}", checkpoint=good)
            step_lr = lr
            if lr_final is not None:
                step_lr = lr_final + 0.5 * (lr - lr_final) * (1.0 + np.cos(np.pi * state.steps / total))
            rmsprop_step(model.params, grads, state, step_lr, decay, eps)
        for k, v in model.params.items():
            if not np.all(np.isfinite(v)):
                raise NumericGuardError(f"non-finite parameter {k} after epoch {epoch}", checkpoint=good)
        good = model.copy()
        tr = evaluate_mse(model, train_eval)
        va = evaluate_mse(model, val) if val is not None and len(val) else float("nan")
        history.append(EpochLog(epoch, tr, va))
        log.info("epoch %d train_mse=%.6g val_mse=%.6g", epoch, tr, va)
    return model, history


def save_history_csv(history: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for h in history:
            w.writerow([h.epoch, repr(h.train_mse), repr(h.val_mse)])


def rollout_predict(model: TransformerModel, history, horizon_steps: int, normalized_io: bool = False):
    """Iterated one-step prediction feeding each output back as input.

    ``history`` is ``(n, 4)`` or ``(B, n, 4)`` in physical units (normalised
    units if ``normalized_io``) with ``n >= window``.  Returns the next
    ``horizon_steps`` rows in the same units.
    """
    H = np.asarray(history, dtype=float)
    single = H.ndim == 2
    if single:
        H = H[None]
    w = model.config.window
    if H.shape[1] < w:
        raise DomainError(f"history of {H.shape[1]} steps is shorter than the window ({w})")
    if horizon_steps <= 0:
        out = np.empty((H.shape[0], 0, H.shape[2]))
        return out[0] if single else out
    Z = H[:, -w:, :] if normalized_io else model.normalize(H[:, -w:, :])
    buf = np.concatenate([Z, np.empty((Z.shape[0], horizon_steps, Z.shape[2]))], axis=1)
    for s in range(horizon_steps):
        buf[:, w + s, :] = forward(model, buf[:, s:s + w, :])
    pred = buf[:, w:, :]
    if not normalized_io:
        pred = model.denormalize(pred)
    return pred[0] if single else pred


@dataclass
class TrainedPredictor:
    model: TransformerModel
    history: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    val_mse: float


def fit_style_model(features: Sequence[np.ndarray], config: ModelConfig, train_idx, test_idx,
                    seed: int = 0, stride: int = 1, train_cfg: Optional[TrainConfig] = None,
                    val_stride: Optional[int] = None) -> TrainedPredictor:
    """Normalise, window and train one predictor on the episodes in ``train_idx``."""
    train_cfg = train_cfg or TrainConfig()
    tr_feats = [features[i] for i in train_idx]
    te_feats = [features[i] for i in test_idx]
    model = prepare_model(config, tr_feats, seed)
    tr = normalized(model, build_windows(tr_feats, config.window, stride))
    te = normalized(model, build_windows(te_feats, config.window, val_stride or stride))
    model, hist = train(model, tr, train_cfg.epochs, train_cfg.batch_size, seed,
                        train_cfg.lr, train_cfg.decay, train_cfg.eps, val=te, lr_final=train_cfg.lr_final)
    val_mse = evaluate_mse(model, te) if len(te) else float("nan")
    return TrainedPredictor(model, hist, np.asarray(train_idx), np.asarray(test_idx), val_mse)
