"""Time-to-collision, scenario runs and the prediction-horizon sweep."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .planner import (HDVTrack, LogRow, Planner, PlannerConfig, Prediction, World,
                      step_simulation)
from .synthetic import ScenarioSpec
from .trajectory import DT, MergingEpisode, VehicleState
from .transformer.data import seconds_to_steps
from .transformer.model import TransformerModel
from .transformer.training import rollout_predict

TABLE_HORIZONS_S = (3.33, 6.67, 10.0, 13.33, 16.67, 20.0, 23.33, 26.67, 30.0)
BASELINE_LABEL = "without prediction"
WINDOW_BEFORE_LC = 5.0
WINDOW_AFTER_END = 10.0
ADS_LENGTH = 4.5


def ttc_value(x_hdv: float, x_ads: float, length: float, v_ads: float, v_hdv: float):
    """Time to collision with the leading HDV; returns ``(seconds, collided)``.

    ``x_*`` are front-bumper positions and ``length`` is the HDV length.
    Non-closing pairs give ``+inf``; overlapping bumpers give ``(0.0, True)``.
    """
    if x_hdv < x_ads:
        raise DomainError("HDV is behind the ADS")
    gap = x_hdv - x_ads - length
    if gap < 0:
        return 0.0, True
    closing = v_ads - v_hdv
    if closing <= 0:
        return math.inf, False
    return gap / closing, False


def ttc(hdv: VehicleState, ads: VehicleState) -> float:
    """Time to collision in seconds between two same-time states (``+inf`` if not closing)."""
    if abs(hdv.t - ads.t) > 1e-9:
        raise DomainError("states must share a timestamp")
    return ttc_value(hdv.y, ads.y, hdv.length, ads.v_y, hdv.v_y)[0]


def ttc_series(y_hdv, y_ads, length: float, v_ads, v_hdv):
    """Vectorised TTC; entries where the HDV is behind the ADS are NaN.

    Returns ``(ttc, overlap)`` arrays.
    """
    y_hdv, y_ads = np.asarray(y_hdv, float), np.asarray(y_ads, float)
    v_ads, v_hdv = np.asarray(v_ads, float), np.asarray(v_hdv, float)
    gap = y_hdv - y_ads - length
    closing = v_ads - v_hdv
    ahead = y_hdv >= y_ads
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(closing > 0, gap / closing, np.inf)
    overlap = ahead & (gap < 0)
    out = np.where(overlap, 0.0, out)
    out = np.where(ahead, out, np.nan)
    return out, overlap


@dataclass(frozen=True)
class TTCStats:
    minimum: float
    mean: float
    total: float
    n_finite: int
    n_infinite: int


def ttc_statistics(values: np.ndarray, dt: float = DT) -> TTCStats:
    """Minimum, time-averaged and time-summed TTC over finite entries."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    n_inf = int(np.isinf(values).sum())
    if finite.size == 0:
        return TTCStats(math.inf, math.inf, 0.0, 0, n_inf)
    return TTCStats(float(finite.min()), float(finite.mean()), float(finite.sum() * dt), int(finite.size), n_inf)


@dataclass
class SimulationResult:
    logs: list
    ttc: np.ndarray
    collisions: np.ndarray
    min_gap: float
    gap_at_merge: float
    merge_index: int
    window: tuple
    stats: TTCStats
    any_clamped: bool = False
    prediction: Optional[Prediction] = None

    @property
    def score(self) -> float:
        """Aggregate TTC score: time-averaged finite TTC over the interaction window."""
        return self.stats.mean

    @property
    def collided(self) -> bool:
        return bool(self.collisions.any())

    def modes(self) -> list:
        return [r.mode for r in self.logs]

    def save_log_csv(self, path) -> None:
        save_log_csv(self.logs, path)

    def summary(self) -> dict:
        return {
            "ttc_mean": self.stats.mean, "ttc_min": self.stats.minimum, "ttc_sum": self.stats.total,
            "ttc_finite_steps": self.stats.n_finite, "ttc_infinite_steps": self.stats.n_infinite,
            "gap_at_merge": self.gap_at_merge, "min_gap": self.min_gap,
            "collisions": int(self.collisions.sum()), "reference_clamped": self.any_clamped,
            "window": list(self.window),
        }


def save_log_csv(logs: Sequence[LogRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LogRow.FIELDS)
        for r in logs:
            w.writerow([repr(getattr(r, f)) if f != "mode" else r.mode for f in LogRow.FIELDS])


class NoPrediction:
    """The ADS only reacts once the HDV is in its lane."""

    horizon = 0.0

    def prediction(self, episode: MergingEpisode) -> Optional[Prediction]:
        return None


@dataclass
class WithPrediction:
    """Plan from a rolled-out HDV trajectory starting ``horizon`` seconds before the merge.

    ``models`` maps style code to a trained trajectory model; ``style``
    overrides which one is used (default: the episode's style label).
    """

    models: Mapping[int, TransformerModel]
    horizon: float = 10.0
    style: Optional[int] = None
    extra_seconds: float = 10.0

    def __post_init__(self):
        if self.horizon < 0:
            raise DomainError("horizon must be non-negative")

    def model_for(self, episode: MergingEpisode) -> TransformerModel:
        style = episode.style if self.style is None else self.style
        if style not in self.models:
            raise ConfigError(f"no trajectory model for style {style}")
        model = self.models[style]
        if model.config.n_features != 4 or model.config.n_outputs != 4:
            raise ConfigError("trajectory model must map 4 features to 4 outputs")
        return model

    def prediction(self, episode: MergingEpisode) -> Optional[Prediction]:
        steps = seconds_to_steps(self.horizon)
        if steps == 0:
            return None
        model = self.model_for(episode)
        track = episode.track
        k0 = track.index_of(episode.t_lc) - steps
        w = model.config.window
        if k0 - w + 1 < 0:
            raise ConfigError(f"horizon {self.horizon} s leaves less than one window of history")
        history = track.features()[k0 - w + 1:k0 + 1]
        n = steps + seconds_to_steps(self.extra_seconds)
        pred = rollout_predict(model, history, n)
        crossed = np.nonzero(_in_target(pred[:, 0], episode))[0]
        offset = int(crossed[0]) + 1 if crossed.size else None
        return Prediction(k0, pred[:, 1].copy(), pred[:, 3].copy(), offset)


def _in_target(x, episode: MergingEpisode):
    """Whether lateral positions lie past the boundary shared with the target lane."""
    tgt, org = episode.target_lane, episode.origin_lane
    if tgt.center_x < org.center_x:
        return x < tgt.right_boundary_x
    return x > tgt.left_boundary_x


def hdv_track(episode: MergingEpisode) -> HDVTrack:
    tr = episode.track
    merged = np.asarray(tr.lane_id) == episode.target_lane.lane_id
    return HDVTrack(np.asarray(tr.t), np.asarray(tr.y), np.asarray(tr.v_y), merged, float(tr.length[0]))


def initial_ads_position(episode: MergingEpisode, spec: ScenarioSpec) -> float:
    if spec.ads_y0 is not None:
        return spec.ads_y0
    tr = episode.track
    k = tr.index_of(episode.t_lc)
    return float(tr.y[k] - tr.length[k] - spec.ads_merge_gap - spec.ads_speed * (tr.t[k] - tr.t[0]))


def interaction_window(episode: MergingEpisode):
    t = episode.track.t
    return max(float(t[0]), episode.t_lc - WINDOW_BEFORE_LC), min(float(t[-1]), episode.t_e + WINDOW_AFTER_END)


def run_scenario(spec: ScenarioSpec, strategy=None, planner_cfg: Optional[PlannerConfig] = None,
                 episode: Optional[MergingEpisode] = None) -> SimulationResult:
    """Simulate the ADS behind one merging HDV episode."""
    strategy = strategy or NoPrediction()
    cfg = planner_cfg or PlannerConfig(v_c=spec.ads_speed, v_initial=spec.ads_speed)
    episode = episode if episode is not None else spec.episode()
    hdv = hdv_track(episode)
    world = World(0, initial_ads_position(episode, spec), cfg.v_initial, hdv, strategy.prediction(episode))
    planner = Planner(cfg)
    logs = []
    for _ in range(len(hdv.t)):
        world, row = step_simulation(world, planner)
        logs.append(row)
    y_ads = np.array([r.y_ads for r in logs])
    v_ads = np.array([r.v_ads for r in logs])
    values, overlap = ttc_series(hdv.y, y_ads, hdv.length, v_ads, hdv.v)
    collisions = overlap & hdv.merged
    merge_index = int(np.argmax(hdv.merged))
    gaps = hdv.y - hdv.length - y_ads
    t0, t1 = interaction_window(episode)
    in_win = (hdv.t >= t0 - 1e-9) & (hdv.t <= t1 + 1e-9)
    stats = ttc_statistics(values[in_win])
    return SimulationResult(
        logs=logs, ttc=values, collisions=collisions,
        min_gap=float(gaps[merge_index:].min()), gap_at_merge=float(gaps[merge_index]),
        merge_index=merge_index, window=(t0, t1), stats=stats,
        any_clamped=any(r.clamped for r in logs), prediction=world.prediction,
    )


@dataclass
class SweepReport:
    horizons: list
    normal: list
    aggressive: list
    baseline: tuple = (math.nan, math.nan)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise DomainError("horizons must be strictly increasing")

    def rows(self):
        yield BASELINE_LABEL, self.baseline[0], self.baseline[1]
        for h, n, a in zip(self.horizons, self.normal, self.aggressive):
            yield h, n, a

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["prediction_horizon_s", "ttc_normal", "ttc_aggressive"])
            for h, n, a in self.rows():
                w.writerow([h if isinstance(h, str) else repr(float(h)), repr(float(n)), repr(float(a))])

    def save_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.details, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def best_horizon(self, style: str = "normal") -> float:
        scores = self.normal if style == "normal" else self.aggressive
        return float(self.horizons[int(np.argmax(scores))])


def horizon_sweep(normal_spec: ScenarioSpec, aggressive_spec: ScenarioSpec,
                  models: Mapping[int, TransformerModel], horizons: Sequence[float] = TABLE_HORIZONS_S,
                  planner_cfg: Optional[PlannerConfig] = None) -> SweepReport:
    """TTC score per prediction horizon for one normal and one aggressive scenario."""
    horizons = [float(h) for h in horizons]
    if not horizons:
        raise DomainError("empty horizon list")
    specs = {"normal": normal_spec, "aggressive": aggressive_spec}
    episodes = {k: s.episode() for k, s in specs.items()}
    scores = {k: [] for k in specs}
    details = {}
    base = {}
    for name, spec in specs.items():
        res = run_scenario(spec, NoPrediction(), planner_cfg, episodes[name])
        base[name] = res.score
        details[f"{name}/{BASELINE_LABEL}"] = res.summary()
        for h in horizons:
            res = run_scenario(spec, WithPrediction(models, h), planner_cfg, episodes[name])
            scores[name].append(res.score)
            details[f"{name}/{h!r}"] = res.summary()
    return SweepReport(horizons, scores["normal"], scores["aggressive"], (base["normal"], base["aggressive"]), details)
