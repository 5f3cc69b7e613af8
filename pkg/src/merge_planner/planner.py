"""Four-state longitudinal decision strategy for the ADS behind a merging HDV.

States: cruise, following, real-time avoidance (RTA, maximum braking once
the HDV is in the unsafe zone) and avoidance in advance (AIA, a constant
deceleration planned from a predicted HDV trajectory before it merges).
Distances are bumper-to-bumper; ``delta_d`` is HDV rear bumper minus ADS
front bumper.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DomainError
from .trajectory import DT


class Mode(str, enum.Enum):
    CRUISE = "cruise"
    FOLLOWING = "following"
    RTA = "rta"
    AIA = "aia"


@dataclass(frozen=True)
class PlannerConfig:
    """Strategy parameters.

    ``d_s0`` (safe-distance intercept) has no published value; 5 m is a
    placeholder.  ``d_s_gain`` multiplies speed in the safe distance,
    ``gamma`` in the following distance, ``alpha`` in the cruise distance.
    """

    d_c0: float = 30.0
    d_f0: float = 9.0
    d_s0: float = 5.0
    alpha: float = 2.0
    d_s_gain: float = 0.7
    gamma: float = 0.3
    delta: float = 0.4
    v_c: float = 13.72
    v_initial: float = 13.72
    a_d_max: float = 4.0
    a_acc_max: float = 2.0
    t_p: float = 10.0
    lag: float = 0.4

    def __post_init__(self):
        if min(self.d_c0, self.d_f0, self.d_s0) < 0:
            raise ConfigError("distances must be non-negative")
        if not self.d_c0 > self.d_f0 > self.d_s0 >= 0:
            raise ConfigError("need d_c0 > d_f0 > d_s0 >= 0")
        if self.a_d_max <= 0 or self.a_acc_max <= 0:
            raise ConfigError("acceleration limits must be positive")
        if self.lag <= 0:
            raise ConfigError("velocity lag must be positive")


class Thresholds(NamedTuple):
    d_c: float
    d_f: float
    d_s: float


def thresholds(v_prev: float, cfg: PlannerConfig) -> Thresholds:
    """Cruise, following and safe distances for the previous-step ADS speed."""
    if v_prev < 0:
        raise DomainError("speed must be non-negative")
    return Thresholds(cfg.d_c0 + cfg.alpha * v_prev,
                      cfg.d_f0 + cfg.gamma * v_prev,
                      cfg.d_s0 + cfg.d_s_gain * v_prev)


def classify_state(delta_d: float, thr: Thresholds, predicted_unsafe: bool = False) -> Mode:
    """Select the driving state.

    ``delta_d`` is +inf when no vehicle leads the ADS in its lane.
    ``predicted_unsafe`` is set while a prediction shows the HDV entering the
    unsafe zone before it has merged; it takes precedence.
    """
    if predicted_unsafe:
        return Mode.AIA
    if delta_d > thr.d_c:
        return Mode.CRUISE
    if delta_d > thr.d_s:
        return Mode.FOLLOWING
    return Mode.RTA


def aia_deceleration(d_f: float, d0: float, v0: float, v_hdv: float, t_p: float) -> float:
    """Constant deceleration closing the gap from ``d0`` to ``d_f`` over ``t_p``.

    Solves ``integral_0^t_p (v_hdv - (v0 - a*s)) ds = d_f - d0`` for ``a``.
    """
    if t_p <= 0:
        raise DomainError("planning horizon must be positive")
    return 2.0 * (d_f - d0 + (v0 - v_hdv) * t_p) / t_p ** 2


@dataclass
class PlannerState:
    mode: Mode = Mode.CRUISE
    v0_rta: Optional[float] = None
    t0_rta: Optional[float] = None
    v0_aia: Optional[float] = None
    d0_aia: Optional[float] = None
    t0_aia: Optional[float] = None
    tp_aia: Optional[float] = None
    a_aia: Optional[float] = None
    commanded_decel: float = 0.0
    clamped: bool = False


def enter_mode(state: PlannerState, mode: Mode, t: float, v_ads: float, cfg: PlannerConfig,
               **aia) -> PlannerState:
    """Transition bookkeeping: snapshots are taken only on entry."""
    if mode is state.mode:
        return state
    if mode is Mode.RTA:
        return replace(state, mode=mode, v0_rta=v_ads, t0_rta=t, commanded_decel=cfg.a_d_max)
    if mode is Mode.AIA:
        return replace(state, mode=mode, v0_aia=v_ads, t0_aia=t, commanded_decel=aia["a_aia"], **aia)
    return replace(state, mode=mode, commanded_decel=0.0)


def reference_velocity(mode: Mode, state: PlannerState, v_hdv: float, delta_d: float,
                       cfg: PlannerConfig, t: float, thr: Optional[Thresholds] = None):
    """Reference ADS speed for the current state.

    Returns ``(v_ref, clamped)``; negative references are clamped to 0 and
    flagged.
    """
    if mode is Mode.CRUISE:
        v = cfg.v_c
    elif mode is Mode.FOLLOWING:
        if thr is None:
            raise DomainError("following needs the current thresholds")
        v = v_hdv + cfg.delta * (delta_d - thr.d_f)
    elif mode is Mode.RTA:
        if state.v0_rta is None:
            raise DomainError("RTA reference needs the entry snapshot")
        v = state.v0_rta - cfg.a_d_max * (t - state.t0_rta)
    else:
        if state.v0_aia is None or state.a_aia is None:
            raise DomainError("AIA reference needs the entry snapshot")
        elapsed = t - state.t0_aia
        if state.tp_aia is not None:
            elapsed = min(elapsed, state.tp_aia)
        v = state.v0_aia - state.a_aia * elapsed
    if v < 0:
        return 0.0, True
    return float(v), False


@dataclass(frozen=True)
class HDVTrack:
    """What the ADS observes of the HDV: positions, speeds and lane status."""

    t: np.ndarray
    y: np.ndarray
    v: np.ndarray
    merged: np.ndarray
    length: float


@dataclass(frozen=True)
class Prediction:
    """A rolled-out HDV trajectory available from ``start_index`` on.

    ``y``/``v`` cover steps ``start_index+1 .. start_index+len``;
    ``merge_offset`` is the predicted number of steps until the lane change,
    or ``None`` when the rollout shows no lane change.
    """

    start_index: int
    y: np.ndarray
    v: np.ndarray
    merge_offset: Optional[int]


@dataclass(frozen=True)
class World:
    k: int
    y_ads: float
    v_ads: float
    hdv: HDVTrack
    prediction: Optional[Prediction] = None


@dataclass(frozen=True)
class LogRow:
    t: float
    mode: str
    delta_d: float
    d_c: float
    d_f: float
    d_s: float
    v_ads_ref: float
    v_ads: float
    v_hdv: float
    y_ads: float
    y_hdv: float
    merged: bool
    clamped: bool

    FIELDS = ("t", "mode", "delta_d", "d_c", "d_f", "d_s", "v_ads_ref", "v_ads", "v_hdv",
              "y_ads", "y_hdv")


class Planner:
    """Mutable decision state of one ADS run."""

    def __init__(self, cfg: PlannerConfig):
        self.cfg = cfg
        self.state = PlannerState()

    def _predicted_unsafe(self, world: World, t: float, d_now: float, thr: Thresholds) -> bool:
        pred = world.prediction
        st = self.state
        if pred is None or world.hdv.merged[world.k] or world.k < pred.start_index:
            return False
        if st.mode is Mode.AIA:
            # hold the planned terminal speed until the HDV actually merges
            return True
        if pred.merge_offset is None:
            return False
        steps_to_merge = pred.merge_offset - (world.k - pred.start_index)
        if steps_to_merge <= 0:
            return False
        tp = steps_to_merge * DT
        y_m = pred.y[pred.merge_offset - 1]
        gap_at_merge = y_m - world.hdv.length - (world.y_ads + world.v_ads * tp)
        if gap_at_merge > thr.d_s:
            return False
        v_hdv_mean = (y_m - world.hdv.y[world.k]) / tp
        a = aia_deceleration(thr.d_f, d_now, world.v_ads, v_hdv_mean, tp)
        a_c = min(max(a, 0.0), self.cfg.a_d_max)
        self.state = enter_mode(st, Mode.AIA, t, world.v_ads, self.cfg, d0_aia=d_now, tp_aia=tp, a_aia=a_c)
        return True

    def decide(self, world: World):
        cfg, hdv, k = self.cfg, world.hdv, world.k
        t = float(hdv.t[k])
        thr = thresholds(world.v_ads, cfg)
        d_now = float(hdv.y[k] - hdv.length - world.y_ads)
        leading = bool(hdv.merged[k]) and hdv.y[k] > world.y_ads
        delta_d = d_now if leading else math.inf
        unsafe = self._predicted_unsafe(world, t, d_now, thr)
        mode = classify_state(delta_d, thr, unsafe)
        self.state = enter_mode(self.state, mode, t, world.v_ads, cfg)
        v_ref, clamped = reference_velocity(mode, self.state, float(hdv.v[k]), delta_d, cfg, t, thr)
        self.state.clamped = clamped
        return mode, thr, delta_d if leading else d_now, v_ref, clamped


def track_velocity(v: float, v_ref: float, cfg: PlannerConfig, dt: float = DT) -> float:
    """First-order lag towards ``v_ref``, rate-limited and floored at zero."""
    dv = (v_ref - v) * min(1.0, dt / cfg.lag)
    dv = min(max(dv, -cfg.a_d_max * dt), cfg.a_acc_max * dt)
    return max(0.0, v + dv)


def step_simulation(world: World, planner: Planner, dt: float = DT):
    """Advance one step; returns ``(next_world, log_row)``."""
    if abs(dt - DT) > 1e-12:
        raise DomainError(f"simulation step must be {DT} s")
    mode, thr, delta_d, v_ref, clamped = planner.decide(world)
    hdv, k = world.hdv, world.k
    row = LogRow(float(hdv.t[k]), mode.value, delta_d, thr.d_c, thr.d_f, thr.d_s, v_ref,
                 world.v_ads, float(hdv.v[k]), world.y_ads, float(hdv.y[k]), bool(hdv.merged[k]), clamped)
    v_new = track_velocity(world.v_ads, v_ref, planner.cfg, dt)
    y_new = world.y_ads + 0.5 * (world.v_ads + v_new) * dt
    return replace(world, k=k + 1, y_ads=y_new, v_ads=v_new), row
