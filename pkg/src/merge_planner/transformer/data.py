"""Sliding-window samples for one-step trajectory prediction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..trajectory import DT, MergingEpisode

log = logging.getLogger(__name__)

TABLE_WINDOWS_S = (1.67, 3.33, 5.0, 6.67, 8.33, 10.0, 11.67)


def seconds_to_steps(seconds: float, dt: float = DT) -> int:
    """Whole steps that fit in ``seconds`` (1.67 s -> 50, 30 s -> 909)."""
    if seconds < 0:
        raise DomainError("duration must be non-negative")
    return int(math.floor(seconds / dt + 1e-9))


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray   # (w, 4) rows X_k .. X_{k+w-1}
    target: np.ndarray  # (4,) row X_{k+w}


class WindowDataset:
    """Stacked window samples; indexable as a sequence of :class:`WindowSample`.

    ``episode_index`` records which source episode each sample came from and
    ``skipped`` counts episodes too short for the window.
    """

    def __init__(self, inputs, targets, episode_index, skipped: int = 0):
        self.inputs = np.asarray(inputs, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.episode_index = np.asarray(episode_index, dtype=int)
        self.skipped = skipped

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return WindowDataset(self.inputs[i], self.targets[i], self.episode_index[i])
        return WindowSample(self.inputs[i], self.targets[i])

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


def episode_features(episodes: Sequence[MergingEpisode]) -> list[np.ndarray]:
    return [ep.track.features() for ep in episodes]


def build_windows(episodes, w_steps: int, stride: int = 1) -> WindowDataset:
    """All windows of ``w_steps`` rows with the following row as target.

    ``episodes`` holds :class:`MergingEpisode` objects or ``(n, 4)`` feature
    arrays.  An episode of ``n`` steps yields ``n - w_steps`` samples (every
    ``stride``-th of them); shorter episodes are skipped and counted.
    """
    if w_steps < 1:
        raise DomainError("window must be at least one step")
    xs, ys, idx = [], [], []
    skipped = 0
    for e, ep in enumerate(episodes):
        F = ep.track.features() if isinstance(ep, MergingEpisode) else np.asarray(ep, dtype=float)
        n = len(F)
        if n <= w_steps:
            skipped += 1
            continue
        starts = np.arange(0, n - w_steps, stride)
        view = np.lib.stride_tricks.sliding_window_view(F, (w_steps, F.shape[1]))[:, 0]
        xs.append(view[starts])
        ys.append(F[starts + w_steps])
        idx.append(np.full(len(starts), e))
    if skipped:
        log.warning("skipped %d episode(s) shorter than %d steps", skipped, w_steps + 1)
    if not xs:
        return WindowDataset(np.empty((0, w_steps, 4)), np.empty((0, 4)), np.empty(0, int), skipped)
    return WindowDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(idx), skipped)


def feature_range(arrays: Sequence[np.ndarray]):
    """Per-feature min and max over a set of ``(n, 4)`` arrays."""
    stacked = np.concatenate([np.asarray(a, dtype=float) for a in arrays])
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def split_episodes(n: int, train_fraction: float = 0.7, seed: int = 0):
    """Seeded episode-level split into sorted ``(train_idx, test_idx)``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7030])))
    perm = rng.permutation(n)
    n_train = int(round(n * train_fraction))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
