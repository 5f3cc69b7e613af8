"""Two-style K-means grouping of merging episodes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError, SchemaError
from .trajectory import AGGRESSIVE, NORMAL, MergingEpisode

FEATURE_NAMES = ("lcd", "gap_lead", "rr_lead", "gap_follow", "rr_follow")


@dataclass(frozen=True)
class StyleFeatures:
    lcd: float
    gap_lead: float
    rr_lead: float
    gap_follow: float
    rr_follow: float
    lead_valid: bool = True
    follow_valid: bool = True

    @property
    def valid(self) -> bool:
        return self.lead_valid and self.follow_valid

    def vector(self, names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)


def extract_style_features(episode: MergingEpisode) -> StyleFeatures:
    """LCD plus leader/follower gap and range rate at the lane-change point."""
    i = episode.track.index_of(episode.t_lc)
    nb = episode.neighbors
    lv, fv = bool(nb.lead_valid[i]), bool(nb.follow_valid[i])
    return StyleFeatures(
        lcd=episode.t_e - episode.t_s,
        gap_lead=float(nb.gap_lead[i]) if lv else float("nan"),
        rr_lead=float(nb.range_rate_lead[i]) if lv else float("nan"),
        gap_follow=float(nb.gap_follow[i]) if fv else float("nan"),
        rr_follow=float(nb.range_rate_follow[i]) if fv else float("nan"),
        lead_valid=lv,
        follow_valid=fv,
    )


def feature_matrix(features: Sequence[StyleFeatures], names: Sequence[str] = FEATURE_NAMES):
    """Stack valid feature vectors; returns ``(X, kept_indices)``."""
    keep = [i for i, f in enumerate(features) if f.valid]
    if not keep:
        return np.empty((0, len(names))), np.array([], dtype=int)
    return np.array([features[i].vector(names) for i in keep]), np.array(keep)


def kmeans_objective(X: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Within-cluster sum of squared distances."""
    return float(np.sum((X - centers[labels]) ** 2))


def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp_init(X, k, rng):
    """D-squared seeding: each further center is drawn with probability proportional
    to its squared distance from the centers chosen so far."""
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d = _sq_dists(X, np.array(centers)).min(axis=1)
        centers.append(X[rng.choice(len(X), p=d / d.sum())])
    return np.array(centers, dtype=float)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 100, tol: float = 0.0):
    """Lloyd iterations from ``centers``.

    Returns ``(centers, labels, objective_history)``; the history holds the
    objective after every assignment step.  Stops when assignments no longer
    change, when the objective improves by at most ``tol`` or after
    ``max_iter`` rounds.  An emptied cluster is re-seeded at the point
    farthest from its assigned center.
    """
    centers = centers.astype(float).copy()
    labels = np.argmin(_sq_dists(X, centers), axis=1)
    history = [kmeans_objective(X, centers, labels)]
    for _ in range(max_iter):
        for j in range(len(centers)):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                far = int(np.argmax(((X - centers[labels]) ** 2).sum(axis=1)))
                centers[j] = X[far]
                labels[far] = j
        new = np.argmin(_sq_dists(X, centers), axis=1)
        obj = kmeans_objective(X, centers, new)
        history.append(obj)
        changed = np.any(new != labels)
        labels = new
        if not changed or history[-2] - obj <= tol and tol > 0:
            break
    return centers, labels, history


def hartigan_refine(X: np.ndarray, labels: np.ndarray, k: int):
    """Single-point moves that strictly lower the within-cluster sum of squares.

    Moving ``x`` from cluster ``a`` (size ``n_a``) to ``b`` changes the
    objective by ``n_b/(n_b+1)|x-m_b|^2 - n_a/(n_a-1)|x-m_a|^2``; the best
    negative move is applied until none is left.  Every fixed point of this
    search is also a Lloyd fixed point, so it only ever improves on
    :func:`lloyd`.  Returns ``(centers, labels, objective_history)`` with one
    history entry per sweep over the points.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(float)
    sums = np.array([X[labels == j].sum(axis=0) for j in range(k)])
    history = []
    while True:
        moved = False
        for i, x in enumerate(X):
            a = labels[i]
            if counts[a] <= 1:
                continue
            means = sums / np.maximum(counts, 1.0)[:, None]
            d = ((x - means) ** 2).sum(axis=1)
            leave = counts[a] / (counts[a] - 1) * d[a]
            join = counts / (counts + 1) * d
            join[a] = np.inf
            b = int(np.argmin(join))
            if join[b] < leave - 1e-12 * max(1.0, leave):
                counts[a] -= 1
                counts[b] += 1
                sums[a] -= x
                sums[b] += x
                labels[i] = b
                moved = True
        centers = sums / counts[:, None]
        history.append(kmeans_objective(X, centers, labels))
        if not moved:
            return centers, labels, history


@dataclass
class ClusterModel:
    centers: np.ndarray            # standardized space, shape (J, d)
    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple = FEATURE_NAMES
    label_map: dict = field(default_factory=dict)
    objective: float = float("nan")
    labels: Optional[np.ndarray] = None
    history: list = field(default_factory=list)
    restart_histories: list = field(default_factory=list)

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def style_of(self, features: StyleFeatures) -> int:
        return self.label_map[kmeans_assign(self, features)]

    def to_dict(self):
        return {
            "format": "style-kmeans", "version": 1,
            "feature_names": list(self.feature_names),
            "centers": self.centers.tolist(),
            "mean": self.mean.tolist(), "std": self.std.tolist(),
            "label_map": {str(k): v for k, v in self.label_map.items()},
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(np.array(d["centers"]), np.array(d["mean"]), np.array(d["std"]),
                       tuple(d["feature_names"]), {int(k): v for k, v in d["label_map"].items()},
                       d.get("objective", float("nan")))
        except KeyError as exc:
            raise SchemaError(f"cluster model missing key {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def kmeans_fit(features, J: int = 2, seed: int = 0, max_iter: int = 100, tol: float = 0.0,
               restarts: int = 20, names: Sequence[str] = FEATURE_NAMES,
               standardize: bool = True) -> ClusterModel:
    """Fit J-means: ``restarts`` runs of D-squared seeding, Lloyd iterations
    and single-point refinement.

    ``features`` is a sequence of :class:`StyleFeatures` (invalid ones are
    dropped) or a plain ``(n, d)`` array.  The lowest-objective restart wins;
    ties go to the earlier restart.  ``labels`` on the returned model index
    the rows that were actually clustered; ``restart_histories`` keeps the
    objective trace of every restart.
    """
    if isinstance(features, np.ndarray):
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[0] == 1 and features.ndim == 1:
            X = X.T
        names = tuple(f"f{i}" for i in range(X.shape[1]))
    else:
        X, _ = feature_matrix(features, names)
    if len(np.unique(X, axis=0)) < J:
        raise DegenerateInputError(f"need at least {J} distinct points, got {len(np.unique(X, axis=0))}")
    if standardize:
        mean, std = X.mean(axis=0), X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mean) / std

    best = None
    histories = []
    for s in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.Generator(np.random.PCG64(s))
        c0 = _kmeanspp_init(Z, J, rng)
        _, labels, hist = lloyd(Z, c0, max_iter, tol)
        centers, labels, more = hartigan_refine(Z, labels, J)
        hist = hist + more
        histories.append(hist)
        if best is None or hist[-1] < best[2][-1]:
            best = (centers, labels, hist)
    centers, labels, hist = best
    return ClusterModel(centers, mean, std, tuple(names), {}, hist[-1], labels, hist, histories)


def kmeans_assign(model: ClusterModel, f) -> int:
    """Index of the nearest center (squared Euclidean); ties go to the lower index."""
    x = f.vector(model.feature_names) if isinstance(f, StyleFeatures) else np.atleast_1d(np.asarray(f, float))
    d = ((model.centers - model.standardize(x)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def label_clusters(model: ClusterModel, features) -> dict:
    """Map the cluster with the shorter mean LCD to aggressive, the other to normal."""
    if isinstance(features, np.ndarray):
        lcd = np.asarray(features, float).reshape(len(features), -1)[:, 0]
        assign = np.array([kmeans_assign(model, row) for row in np.asarray(features, float)])
    else:
        X, _ = feature_matrix(features, model.feature_names)
        lcd = X[:, list(model.feature_names).index("lcd")]
        assign = np.array([kmeans_assign(model, row) for row in X])
    if len(model.centers) != 2:
        raise DomainError("labelling requires exactly two clusters")
    means = []
    for j in range(2):
        sel = lcd[assign == j]
        means.append(sel.mean() if len(sel) else np.nan)
    if not np.all(np.isfinite(means)) or means[0] == means[1]:
        raise DegenerateInputError("cluster mean LCDs are equal or undefined; labels unresolved")
    aggr = int(np.argmin(means))
    model.label_map = {aggr: AGGRESSIVE, 1 - aggr: NORMAL}
    return model.label_map


def cluster_styles(episodes: Sequence[MergingEpisode], seed: int = 0, restarts: int = 20,
                   max_iter: int = 100, names: Sequence[str] = FEATURE_NAMES):
    """Cluster episodes and return ``(model, styles)``; ``styles[i]`` is None for excluded episodes."""
    feats = [extract_style_features(e) for e in episodes]
    model = kmeans_fit(feats, 2, seed=seed, max_iter=max_iter, restarts=restarts, names=names)
    label_clusters(model, feats)
    styles = [model.style_of(f) if f.valid else None for f in feats]
    return model, styles


def purity(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of items whose cluster's majority label matches their own."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    hits = 0
    for c in np.unique(pred):
        sel = truth[pred == c]
        hits += np.bincount(sel).max()
    return hits / len(truth)
