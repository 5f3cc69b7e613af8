"""Deterministic generator of synthetic merging episodes and ADS scenarios.

Stands in for drone-extracted trajectories.  Each episode is built from an
:class:`EpisodeProfile` drawn once from the style parameters; the HDV's
lateral motion is a normalised logistic S-curve between lane centrelines and
its longitudinal speed is a closed-form template (base speed, a Gaussian
speed bump around the lane change, a sinusoidal oscillation and optional
Gaussian deceleration pulses).  Positions are exact integrals of the
template, so noiseless episodes are reproducible to machine precision.

Randomness: every episode owns a PCG64 generator seeded from
``SeedSequence(seed)``; child streams 0/1/2 drive the HDV profile, the
neighbour vehicles and the measurement noise respectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import DomainError
from .trajectory import (
    AGGRESSIVE,
    DT,
    NORMAL,
    ONSET_RATE,
    RAMP_LANE,
    SETTLE_BAND,
    TARGET_LANE,
    MergingEpisode,
    Track,
)

ADS_INITIAL_SPEED = 13.72

STREAM_PROFILE, STREAM_NEIGHBOURS, STREAM_NOISE = 0, 1, 2


@dataclass(frozen=True)
class NoiseStd:
    x: float = 0.005
    y: float = 0.02
    v_x: float = 0.005
    v_y: float = 0.03
    a_y: float = 0.05

    def __post_init__(self):
        if min(self.x, self.y, self.v_x, self.v_y, self.a_y) < 0:
            raise DomainError("noise std must be non-negative")


@dataclass(frozen=True)
class StyleParams:
    """Population parameters for one driving style.

    Gaps are bumper-to-bumper at the lane-change point, to the leader and the
    follower in the target lane.  Pulse times are absolute episode times.
    """

    mean_lcd: float = 6.0
    lcd_jitter: float = 0.6
    base_speed: float = 13.0
    base_speed_jitter: float = 0.8
    bump_amplitude: float = 2.0
    bump_offset: float = 0.0
    bump_width: float = 3.0
    osc_amplitude: float = 0.3
    osc_period: float = 15.0
    pulse_times: tuple = ()
    pulse_widths: tuple = ()
    pulse_depths: tuple = ()
    pulse_jitter: float = 1.0
    steepness: float = 6.0
    gap_at_merge: float = 20.0
    gap_jitter: float = 4.0
    follow_gap: float = 15.0
    follow_gap_jitter: float = 3.0
    lead_rr_mean: float = -0.5
    follow_rr_mean: float = 0.3
    rr_jitter: float = 0.6
    merge_time: float = 33.0
    merge_time_jitter: float = 1.0
    duration: float = 46.0
    noise: NoiseStd = field(default_factory=NoiseStd)

    def __post_init__(self):
        if self.mean_lcd <= 0:
            raise DomainError("mean_lcd must be positive")
        if min(self.lcd_jitter, self.base_speed_jitter, self.bump_width, self.osc_amplitude,
               self.gap_jitter, self.follow_gap_jitter, self.rr_jitter, self.pulse_jitter,
               self.merge_time_jitter) < 0:
            raise DomainError("amplitudes and jitters must be non-negative")
        if self.gap_at_merge < 0 or self.follow_gap < 0:
            raise DomainError("gap_at_merge must be non-negative")
        if self.steepness <= 0 or self.osc_period <= 0:
            raise DomainError("steepness and oscillation period must be positive")
        if not len(self.pulse_times) == len(self.pulse_widths) == len(self.pulse_depths):
            raise DomainError("pulse_times, pulse_widths and pulse_depths must align")
        if self.merge_time + self.mean_lcd + 3 * self.lcd_jitter + 1.0 > self.duration:
            raise DomainError("duration too short for the merge timeline")


NORMAL_PARAMS = StyleParams()
AGGRESSIVE_PARAMS = StyleParams(
    mean_lcd=3.5, lcd_jitter=0.4, base_speed=13.5, base_speed_jitter=1.0,
    bump_amplitude=1.5, bump_offset=3.0, bump_width=2.0,
    osc_amplitude=1.0, osc_period=6.0,
    pulse_times=(14.5, 33.5), pulse_widths=(0.8, 1.3), pulse_depths=(2.5, 2.0),
    gap_at_merge=8.0, gap_jitter=2.0, follow_gap=6.0, follow_gap_jitter=2.0,
)


def default_params(style: int) -> StyleParams:
    return AGGRESSIVE_PARAMS if style == AGGRESSIVE else NORMAL_PARAMS


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class LateralProfile:
    """Normalised logistic lane change from ``x_from`` to ``x_to``.

    Motion starts at ``t_on`` and lasts ``duration``; ``S(0) = 0``,
    ``S(1) = 1``.
    """

    x_from: float
    x_to: float
    t_on: float
    duration: float
    steepness: float

    def _s(self, u):
        s = self.steepness
        lo, hi = _sigmoid(-s / 2), _sigmoid(s / 2)
        return (_sigmoid(s * (u - 0.5)) - lo) / (hi - lo)

    def _ds(self, u):
        s = self.steepness
        lo, hi = _sigmoid(-s / 2), _sigmoid(s / 2)
        g = _sigmoid(s * (u - 0.5))
        return s * g * (1 - g) / (hi - lo)

    def position(self, t):
        u = np.clip((np.asarray(t, dtype=float) - self.t_on) / self.duration, 0.0, 1.0)
        return self.x_from + (self.x_to - self.x_from) * self._s(u)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        u = (t - self.t_on) / self.duration
        inside = (u > 0) & (u < 1)
        v = (self.x_to - self.x_from) / self.duration * self._ds(np.clip(u, 0, 1))
        return np.where(inside, v, 0.0)

    def settle_fraction(self, band: float) -> float:
        """Fraction of the motion after which the vehicle is within ``band`` of ``x_to``."""
        s = self.steepness
        lo, hi = _sigmoid(-s / 2), _sigmoid(s / 2)
        target = 1.0 - band / abs(self.x_to - self.x_from)
        g = target * (hi - lo) + lo
        return 0.5 + math.log(g / (1 - g)) / s


def _gauss(t, c, w):
    return np.exp(-0.5 * ((t - c) / w) ** 2)


def _gauss_integral(t, c, w):
    """Integral of ``_gauss`` from 0 to ``t``."""
    k = w * math.sqrt(math.pi / 2)
    r = math.sqrt(2) * w
    return k * (erf((t - c) / r) - erf((0.0 - c) / r))


@dataclass(frozen=True)
class SpeedProfile:
    """Closed-form longitudinal speed template."""

    base: float
    bump_amplitude: float
    bump_center: float
    bump_width: float
    osc_amplitude: float
    osc_period: float
    osc_phase: float
    pulses: tuple = ()  # (center, width, depth)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        v = self.base + self.bump_amplitude * _gauss(t, self.bump_center, self.bump_width)
        v = v + self.osc_amplitude * np.sin(2 * np.pi * t / self.osc_period + self.osc_phase)
        for c, w, d in self.pulses:
            v = v - d * _gauss(t, c, w)
        return v

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        c, w = self.bump_center, self.bump_width
        a = -self.bump_amplitude * _gauss(t, c, w) * (t - c) / w ** 2
        om = 2 * np.pi / self.osc_period
        a = a + self.osc_amplitude * om * np.cos(om * t + self.osc_phase)
        for c, w, d in self.pulses:
            a = a + d * _gauss(t, c, w) * (t - c) / w ** 2
        return a

    def displacement(self, t):
        """Distance covered between time 0 and ``t``."""
        t = np.asarray(t, dtype=float)
        s = self.base * t + self.bump_amplitude * _gauss_integral(t, self.bump_center, self.bump_width)
        om = 2 * np.pi / self.osc_period
        s = s + self.osc_amplitude / om * (np.cos(self.osc_phase) - np.cos(om * t + self.osc_phase))
        for c, w, d in self.pulses:
            s = s - d * _gauss_integral(t, c, w)
        return s


@dataclass(frozen=True)
class EpisodeProfile:
    """One realisation of a style: everything random about an HDV episode."""

    style: int
    lateral: LateralProfile
    speed: SpeedProfile
    length: float
    width: float
    t_s: float
    t_lc: float
    t_e: float
    n_steps: int

    @classmethod
    def sample(cls, style: int, params: StyleParams, seed: int) -> "EpisodeProfile":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(3)[STREAM_PROFILE]))
        return _sample_profile(style, params, rng)


def _sample_profile(style, params: StyleParams, rng) -> EpisodeProfile:
    n_steps = int(round(params.duration / DT)) + 1
    lcd = max(1.0, params.mean_lcd + params.lcd_jitter * rng.standard_normal())
    lat = LateralProfile(RAMP_LANE.center_x, TARGET_LANE.center_x, 0.0, 1.0, params.steepness)
    u_band = lat.settle_fraction(SETTLE_BAND)
    dur = (lcd - DT / 2) / u_band
    t_lc_target = params.merge_time + params.merge_time_jitter * rng.uniform(-1, 1)
    # onset half-way between samples: the quiet sample before it is point A
    k_on = int(round((t_lc_target - dur / 2) / DT))
    t_on = (k_on + 0.5) * DT
    lat = replace(lat, t_on=t_on, duration=dur)
    v0 = abs(lat.x_to - lat.x_from) / dur * lat._ds(0.0)
    if v0 <= ONSET_RATE:
        raise DomainError("lane change too slow for the onset threshold; shorten mean_lcd")

    t_grid = np.arange(n_steps) * DT
    x = lat.position(t_grid)
    i_lc = int(np.flatnonzero(x < RAMP_LANE.left_boundary_x)[0])
    i_e = int(np.flatnonzero((np.abs(x - TARGET_LANE.center_x) <= SETTLE_BAND) & (t_grid > t_grid[i_lc]))[0])

    pulses = []
    for c, w, d in zip(params.pulse_times, params.pulse_widths, params.pulse_depths):
        pulses.append((c + params.pulse_jitter * rng.uniform(-1, 1), w, d))
    speed = SpeedProfile(
        base=params.base_speed + params.base_speed_jitter * rng.standard_normal(),
        bump_amplitude=params.bump_amplitude,
        bump_center=t_grid[i_lc] + params.bump_offset,
        bump_width=params.bump_width,
        osc_amplitude=params.osc_amplitude,
        osc_period=params.osc_period,
        osc_phase=rng.uniform(0, 2 * np.pi),
        pulses=tuple(pulses),
    )
    length = rng.uniform(4.2, 4.8)
    return EpisodeProfile(style, lat, speed, length, 1.8, float(k_on * DT), float(t_grid[i_lc]),
                          float(t_grid[i_e]), n_steps)


def _lane_ids(x):
    return np.where(x < RAMP_LANE.left_boundary_x, TARGET_LANE.lane_id, RAMP_LANE.lane_id)


def generate_episode(style: int, params: Optional[StyleParams] = None, seed: int = 0,
                     vehicle_id: int = 1) -> MergingEpisode:
    """Generate one merging episode; a pure function of ``(style, params, seed)``.

    The recorded ``t_s``, ``t_lc`` and ``t_e`` are the noiseless ground truth
    on the sample grid.  Leader and follower ids are ``vehicle_id + 1`` and
    ``vehicle_id + 2``.
    """
    if style not in (AGGRESSIVE, NORMAL):
        raise DomainError(f"style must be 0 (aggressive) or 1 (normal), got {style!r}")
    params = default_params(style) if params is None else params
    streams = np.random.SeedSequence(seed).spawn(3)
    prof = _sample_profile(style, params, np.random.Generator(np.random.PCG64(streams[STREAM_PROFILE])))
    rng_nb = np.random.Generator(np.random.PCG64(streams[STREAM_NEIGHBOURS]))
    rng_noise = np.random.Generator(np.random.PCG64(streams[STREAM_NOISE]))

    n = prof.n_steps
    t = np.arange(n) * DT
    x = prof.lateral.position(t)
    lane = _lane_ids(x)
    v_x = prof.lateral.velocity(t)
    v_y = prof.speed.velocity(t)
    a_y = prof.speed.acceleration(t)
    y = prof.speed.displacement(t)

    nz = params.noise
    noisy = [c + s * rng_noise.standard_normal(n) if s > 0 else c
             for c, s in ((x, nz.x), (y, nz.y), (v_x, nz.v_x), (v_y, nz.v_y), (a_y, nz.a_y))]
    hdv = Track(vehicle_id, t, noisy[0], noisy[1], noisy[2], noisy[3], noisy[4], lane,
                np.full(n, prof.length), np.full(n, prof.width))

    i_lc = int(round(prof.t_lc / DT))
    y_lc, v_lc = float(y[i_lc]), float(v_y[i_lc])
    gap_l = max(1.0, params.gap_at_merge + params.gap_jitter * rng_nb.standard_normal())
    gap_f = max(1.0, params.follow_gap + params.follow_gap_jitter * rng_nb.standard_normal())
    v_l = v_lc - (params.lead_rr_mean + params.rr_jitter * rng_nb.standard_normal())
    v_f = v_lc - (params.follow_rr_mean + params.rr_jitter * rng_nb.standard_normal())
    len_l, len_f = rng_nb.uniform(4.2, 4.8, size=2)

    def neighbour(vid, y_at_lc, v, length):
        yy = y_at_lc + v * (t - prof.t_lc)
        return Track(vid, t, np.full(n, TARGET_LANE.center_x), yy, np.zeros(n), np.full(n, v),
                     np.zeros(n), np.full(n, TARGET_LANE.lane_id), np.full(n, length), np.full(n, 1.8))

    lead = neighbour(vehicle_id + 1, y_lc + gap_l + len_l, v_l, len_l)
    follow = neighbour(vehicle_id + 2, y_lc - prof.length - gap_f, v_f, len_f)
    return MergingEpisode(hdv, prof.t_s, prof.t_lc, prof.t_e, RAMP_LANE, TARGET_LANE,
                          lead=lead, follow=follow, style=style)


def episode_seeds(seed: int, n: int) -> list[int]:
    if n == 0:
        return []
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def generate_dataset(n: int, aggressive_fraction: float = 0.49, seed: int = 0,
                     normal_params: Optional[StyleParams] = None,
                     aggressive_params: Optional[StyleParams] = None) -> list[MergingEpisode]:
    """``n`` episodes, exactly ``round(n * aggressive_fraction)`` of them aggressive.

    Styles are interleaved by a seeded permutation; episode ``i`` uses vehicle
    ids ``3i+1`` (HDV), ``3i+2`` (leader) and ``3i+3`` (follower).
    """
    if not 0 <= aggressive_fraction <= 1:
        raise DomainError("aggressive_fraction must lie in [0, 1]")
    if n < 0:
        raise DomainError("n must be non-negative")
    if n == 0:
        return []
    n_aggr = int(round(n * aggressive_fraction))
    styles = np.array([AGGRESSIVE] * n_aggr + [NORMAL] * (n - n_aggr))
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    styles = styles[order_rng.permutation(n)]
    seeds = episode_seeds(seed, n)
    out = []
    for i, (st, sd) in enumerate(zip(styles, seeds)):
        p = (aggressive_params or AGGRESSIVE_PARAMS) if st == AGGRESSIVE else (normal_params or NORMAL_PARAMS)
        out.append(generate_episode(int(st), p, sd, vehicle_id=3 * i + 1))
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    """Initial conditions for one HDV/ADS interaction run.

    ``ads_merge_gap`` places the ADS so that, cruising at ``ads_speed``, its
    bumper gap to the HDV at the lane-change point would equal that value;
    ``ads_y0`` overrides the placement with an absolute start position.
    """

    style: int
    params: Optional[StyleParams] = None
    seed: int = 0
    ads_speed: float = ADS_INITIAL_SPEED
    ads_merge_gap: float = 1.0
    ads_y0: Optional[float] = None
    duration: Optional[float] = None

    def __post_init__(self):
        if self.style not in (AGGRESSIVE, NORMAL):
            raise DomainError("style must be 0 or 1")
        if self.duration is not None and self.duration < self.style_params.duration:
            raise DomainError("scenario duration shorter than the episode")

    @property
    def style_params(self) -> StyleParams:
        return default_params(self.style) if self.params is None else self.params

    def episode(self) -> MergingEpisode:
        return generate_episode(self.style, self.style_params, self.seed)


def default_scenario(style: int, seed: int = 2024) -> ScenarioSpec:
    """Tight merge: the ADS would sit about a metre behind the HDV at the lane change."""
    gap = 0.41 if style == AGGRESSIVE else 1.11
    return ScenarioSpec(style=style, seed=seed, ads_merge_gap=gap)
