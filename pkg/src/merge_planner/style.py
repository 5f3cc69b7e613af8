"""Early prediction of merging style from lateral change rates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError, SchemaError
from .trajectory import AGGRESSIVE, DT, NORMAL, MergingEpisode, change_rate


@dataclass(frozen=True)
class LogisticModel:
    bias: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def horizon(self) -> int:
        return len(self.weights)

    def to_dict(self):
        return {"bias": self.bias, "weights": self.weights.tolist(), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d):
        try:
            m = cls(float(d["bias"]), np.array(d["weights"], dtype=float))
        except KeyError as exc:
            raise SchemaError(f"logistic model missing key {exc}") from None
        if "horizon" in d and d["horizon"] != m.horizon:
            raise SchemaError("horizon does not match weight count")
        return m


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with aggressive (label 0) as the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def p(self) -> int:
        return self.tp + self.fn

    @property
    def n(self) -> int:
        return self.fp + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.tn + self.fp + self.fn)


def build_feature_vector(episode: MergingEpisode, i_steps: int) -> np.ndarray:
    """Change rates ``K_1..K_i`` at ``t_s + j*DT`` for ``j = 1..i_steps``."""
    if i_steps < 1:
        raise DomainError("i_steps must be at least 1")
    i_s = episode.track.index_of(episode.t_s)
    i_lc = episode.track.index_of(episode.t_lc)
    if i_s + i_steps > i_lc:
        raise DomainError(f"{i_steps} steps run past the lane-change point ({i_lc - i_s} available)")
    return np.array([change_rate(episode, float(episode.track.t[i_s + j])) for j in range(1, i_steps + 1)])


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def decision_value(model: LogisticModel, features) -> np.ndarray | float:
    X = np.asarray(features, dtype=float)
    if X.shape[-1] != model.horizon:
        raise DomainError(f"expected {model.horizon} features, got {X.shape[-1]}")
    return model.bias + X @ model.weights


def predict_style(model: LogisticModel, features):
    """Probability that the driver is normal (label 1)."""
    return sigmoid(decision_value(model, features))


def classify(model: LogisticModel, features):
    """Hard labels; a probability of exactly 0.5 predicts normal."""
    p = predict_style(model, features)
    return np.where(np.asarray(p) >= 0.5, NORMAL, AGGRESSIVE)


def logistic_objective(bias: float, weights: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross-entropy plus ``l2/2 * |w|^2`` (bias unpenalised)."""
    z = bias + X @ weights
    # log(1+exp(z)) - y z, computed stably
    ce = np.logaddexp(0.0, z) - y * z
    return float(ce.mean() + 0.5 * l2 * weights @ weights)


def logistic_gradient(bias: float, weights: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    r = sigmoid(bias + X @ weights) - y
    return float(r.mean()), X.T @ r / len(y) + l2 * weights


def fit_logistic(X, y, l2: float = 1e-3, lr: float = 0.1, iters: int = 5000,
                 standardize: bool = True, history: list | None = None) -> LogisticModel:
    """Full-batch gradient descent on mean cross-entropy with L2.

    With ``standardize`` the descent runs on z-scored features and the
    result is folded back so the returned model acts on raw change rates.
    Objective values per iteration are appended to ``history`` if given.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise DomainError("X and y must be non-empty and of equal length")
    if len(np.unique(y)) < 2:
        raise DegenerateInputError("need at least one example of each class")
    if standardize:
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
    else:
        mu, sd = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mu) / sd
    b, w = 0.0, np.zeros(X.shape[1])
    for _ in range(iters):
        if history is not None:
            history.append(logistic_objective(b, w, Z, y, l2))
        gb, gw = logistic_gradient(b, w, Z, y, l2)
        b -= lr * gb
        w = w - lr * gw
    if history is not None:
        history.append(logistic_objective(b, w, Z, y, l2))
    w_raw = w / sd
    return LogisticModel(float(b - w_raw @ mu), w_raw)


def evaluate_accuracy(preds, labels):
    """Confusion matrix (aggressive positive) and accuracy."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if len(preds) != len(labels):
        raise DomainError("preds and labels differ in length")
    if len(preds) == 0:
        raise DomainError("no predictions to evaluate")
    tp = int(np.sum((preds == AGGRESSIVE) & (labels == AGGRESSIVE)))
    fn = int(np.sum((preds == NORMAL) & (labels == AGGRESSIVE)))
    fp = int(np.sum((preds == AGGRESSIVE) & (labels == NORMAL)))
    tn = int(np.sum((preds == NORMAL) & (labels == NORMAL)))
    cm = ConfusionMatrix(tp, fn, fp, tn)
    return cm, cm.accuracy


def stratified_split(labels: Sequence[int], test_fraction: float = 0.2, seed: int = 0):
    """Seeded stratified split; returns sorted ``(train_idx, test_idx)``."""
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5F11])))
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(len(idx) * test_fraction))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def max_prefix_steps(episodes: Sequence[MergingEpisode]) -> int:
    return min(ep.track.index_of(ep.t_lc) - ep.track.index_of(ep.t_s) for ep in episodes)


@dataclass
class SweepRow:
    i_steps: int
    seconds: float
    accuracy: float
    confusion: ConfusionMatrix
    model: LogisticModel


def accuracy_sweep(episodes: Sequence[MergingEpisode], labels: Sequence[int], max_steps: int = 10,
                   test_fraction: float = 0.2, seed: int = 0, l2: float = 1e-3, lr: float = 0.1,
                   iters: int = 5000) -> list[SweepRow]:
    """Fit one model per prefix length ``i = 1..max_steps`` and score it on a held-out split."""
    labels = np.asarray(labels)
    max_steps = min(max_steps, max_prefix_steps(episodes))
    train, test = stratified_split(labels, test_fraction, seed)
    rows = []
    full = np.array([build_feature_vector(ep, max_steps) for ep in episodes])
    for i in range(1, max_steps + 1):
        X = full[:, :i]
        model = fit_logistic(X[train], labels[train], l2=l2, lr=lr, iters=iters)
        cm, acc = evaluate_accuracy(classify(model, X[test]), labels[test])
        rows.append(SweepRow(i, i * DT, acc, cm, model))
    return rows


def save_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "seconds", "accuracy", "tp", "fn", "fp", "tn"])
        for r in rows:
            w.writerow([r.i_steps, repr(r.seconds), repr(r.accuracy),
                        r.confusion.tp, r.confusion.fn, r.confusion.fp, r.confusion.tn])


def save_models(models: dict, path) -> None:
    """Persist ``{i_steps: LogisticModel}`` as JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format": "style-logistic", "version": 1,
                   "models": {str(k): m.to_dict() for k, m in sorted(models.items())}}, fh, indent=1)
        fh.write("\n")


def load_models(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "models" not in d:
        raise SchemaError(f"{path}: missing 'models'")
    return {int(k): LogisticModel.from_dict(v) for k, v in d["models"].items()}


def logistic(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))
