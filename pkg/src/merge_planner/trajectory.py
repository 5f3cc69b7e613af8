"""Trajectory types, merge-event extraction and trajectory CSV I/O.

Coordinates follow the drone-frame convention used throughout the package:
``x`` is lateral (increasing to the right, towards the on-ramp) and ``y`` is
longitudinal, measured at the *front bumper* of the vehicle.  With that
convention the bumper-to-bumper spacing to a leader is ``y_lead - L_lead - y``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DomainError,
    ExtractionError,
    MultiLaneChangeError,
    ParseError,
    SchemaError,
)

DT = 0.033
STEP_TOL = 1e-9

AGGRESSIVE = 0
NORMAL = 1
STYLE_NAMES = {AGGRESSIVE: "aggressive", NORMAL: "normal"}

CSV_COLUMNS = ("vehicle_id", "frame", "t", "x", "y", "v_x", "v_y", "a_y",
               "lane_id", "length", "width")

ONSET_RATE = 0.05       # m/s, |dD/dt| below this counts as "not yet merging"
ONSET_SUSTAIN = 0.2     # s
SETTLE_BAND = 0.2       # m around the target centreline
SETTLE_SUSTAIN = 0.5    # s


def style_from_name(name):
    for k, v in STYLE_NAMES.items():
        if v == name:
            return k
    raise DomainError(f"unknown style {name!r}")


@dataclass(frozen=True)
class VehicleState:
    """Kinematic sample of one vehicle at one instant."""

    t: float
    x: float
    y: float
    v_x: float
    v_y: float
    a_y: float = 0.0
    lane_id: int = 0
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise DomainError("t must be finite")
        if self.length <= 0 or self.width <= 0:
            raise DomainError("vehicle length and width must be positive")
        if self.lane_id < 0:
            raise DomainError("lane_id must be non-negative")


@dataclass(frozen=True)
class LaneGeometry:
    lane_id: int
    left_boundary_x: float
    right_boundary_x: float

    def __post_init__(self):
        if not self.right_boundary_x - self.left_boundary_x > 0:
            raise DomainError("lane must have positive width")

    @property
    def lane_width(self) -> float:
        return self.right_boundary_x - self.left_boundary_x

    @property
    def center_x(self) -> float:
        return 0.5 * (self.left_boundary_x + self.right_boundary_x)

    def contains(self, x: float) -> bool:
        return self.left_boundary_x <= x < self.right_boundary_x


LANE_WIDTH = 3.75
TARGET_LANE = LaneGeometry(1, 0.0, LANE_WIDTH)
RAMP_LANE = LaneGeometry(2, LANE_WIDTH, 2 * LANE_WIDTH)
DEFAULT_LANES = (TARGET_LANE, RAMP_LANE)


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Track:
    """Column-oriented trajectory of a single vehicle at a fixed step."""

    vehicle_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v_x: np.ndarray
    v_y: np.ndarray
    a_y: np.ndarray
    lane_id: np.ndarray
    length: np.ndarray
    width: np.ndarray
    frame: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.t)
        for name in ("t", "x", "y", "v_x", "v_y", "a_y", "length", "width"):
            arr = _readonly(getattr(self, name))
            if arr.shape != (n,):
                raise DomainError(f"column {name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lane_id", _readonly(self.lane_id, np.int64))
        frame = np.arange(n) if self.frame is None else self.frame
        object.__setattr__(self, "frame", _readonly(frame, np.int64))
        if np.any(self.length <= 0) or np.any(self.width <= 0):
            raise DomainError("vehicle length and width must be positive")
        if np.any(self.lane_id < 0):
            raise DomainError("lane_id must be non-negative")
        if not np.all(np.isfinite(self.t)):
            raise DomainError("timestamps must be finite")

    @classmethod
    def from_states(cls, vehicle_id: int, states: Sequence[VehicleState]) -> "Track":
        cols = {c: [getattr(s, c) for s in states]
                for c in ("t", "x", "y", "v_x", "v_y", "a_y", "lane_id", "length", "width")}
        return cls(vehicle_id=vehicle_id, **cols)

    def __len__(self):
        return len(self.t)

    def state(self, i: int) -> VehicleState:
        return VehicleState(float(self.t[i]), float(self.x[i]), float(self.y[i]),
                            float(self.v_x[i]), float(self.v_y[i]), float(self.a_y[i]),
                            int(self.lane_id[i]), float(self.length[i]), float(self.width[i]))

    @property
    def states(self) -> list[VehicleState]:
        return [self.state(i) for i in range(len(self))]

    def index_of(self, t: float) -> int:
        """Index of the sample at time ``t``; ``t`` must lie on the sample grid."""
        k = int(round((t - self.t[0]) / DT))
        if k < 0 or k >= len(self.t) or abs(self.t[k] - t) > 1e-6:
            raise DomainError(f"t={t} is not a sample instant of vehicle {self.vehicle_id}")
        return k

    def features(self) -> np.ndarray:
        """``(n, 4)`` array of (x, y, v_x, v_y), the trajectory model inputs."""
        return np.column_stack([self.x, self.y, self.v_x, self.v_y])

    def same_as(self, other: "Track") -> bool:
        return self.vehicle_id == other.vehicle_id and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("frame", "t", "x", "y", "v_x", "v_y", "a_y", "lane_id", "length", "width"))


def check_fixed_step(t: np.ndarray, dt: float = DT) -> None:
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return
    d = np.diff(t)
    if np.any(d <= 0):
        raise DomainError("timestamps must be strictly increasing")
    if np.max(np.abs(d - dt)) > STEP_TOL:
        raise DomainError(f"samples must be spaced at a constant {dt} s (resampling is not supported)")


@dataclass(frozen=True, eq=False)
class NeighborContext:
    """Gap / range-rate series to the leader and follower in the target lane.

    Entries are NaN wherever the corresponding ``*_valid`` flag is False.
    """

    gap_lead: np.ndarray
    range_rate_lead: np.ndarray
    gap_follow: np.ndarray
    range_rate_follow: np.ndarray
    lead_valid: np.ndarray
    follow_valid: np.ndarray

    def __post_init__(self):
        for name in ("gap_lead", "range_rate_lead", "gap_follow", "range_rate_follow"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        for name in ("lead_valid", "follow_valid"):
            object.__setattr__(self, name, _readonly(getattr(self, name), bool))
        if np.any(self.gap_lead[self.lead_valid] < 0) or np.any(self.gap_follow[self.follow_valid] < 0):
            raise DomainError("valid gaps must be non-negative")

    @classmethod
    def empty(cls, n: int) -> "NeighborContext":
        nan = np.full(n, np.nan)
        no = np.zeros(n, dtype=bool)
        return cls(nan, nan, nan, nan, no, no)


def lateral_deviation(state: VehicleState, lane: LaneGeometry) -> float:
    """Lateral offset of the vehicle centre from the lane's left boundary."""
    if state.lane_id != lane.lane_id:
        raise DomainError(f"state is in lane {state.lane_id}, geometry describes lane {lane.lane_id}")
    return state.x - lane.left_boundary_x


def gap_and_range_rate(ego: VehicleState, other: VehicleState) -> tuple[float, float]:
    """Bumper-to-bumper gap and range rate ``v_ego - v_other``.

    The length subtracted is that of whichever vehicle is ahead, since ``y``
    marks the front bumper.
    """
    if abs(ego.t - other.t) > 1e-9:
        raise DomainError("states must share a timestamp")
    ahead = other if other.y >= ego.y else ego
    gap = abs(other.y - ego.y) - ahead.length
    return gap, ego.v_y - other.v_y


def _pair_series(ego: Track, other: Optional[Track], other_ahead: bool):
    n = len(ego)
    if other is None:
        return np.full(n, np.nan), np.full(n, np.nan), np.zeros(n, dtype=bool)
    if len(other) != n or np.max(np.abs(other.t - ego.t)) > 1e-9:
        raise DomainError(f"neighbour {other.vehicle_id} is not sampled on the ego time grid")
    ahead_len = other.length if other_ahead else ego.length
    gap = np.abs(other.y - ego.y) - ahead_len
    rr = ego.v_y - other.v_y
    valid = gap >= 0
    gap = np.where(valid, gap, np.nan)
    rr = np.where(valid, rr, np.nan)
    return gap, rr, valid


@dataclass(frozen=True, eq=False)
class MergingEpisode:
    """One merging manoeuvre of a human-driven vehicle.

    ``t_s``, ``t_lc`` and ``t_e`` are sample instants of ``track`` marking
    merge onset (point A), the lane-change point and merge end (point B).
    ``origin_lane`` is the lane the vehicle starts in; its left boundary is
    the fixed reference for the lateral deviation throughout the episode.
    """

    track: Track
    t_s: float
    t_lc: float
    t_e: float
    origin_lane: LaneGeometry
    target_lane: LaneGeometry
    lead: Optional[Track] = None
    follow: Optional[Track] = None
    style: Optional[int] = None
    neighbors: NeighborContext = field(init=False, repr=False)

    def __post_init__(self):
        check_fixed_step(self.track.t)
        if not self.t_s < self.t_lc < self.t_e:
            raise DomainError(f"need t_s < t_lc < t_e, got {self.t_s}, {self.t_lc}, {self.t_e}")
        for t in (self.t_s, self.t_lc, self.t_e):
            self.track.index_of(t)
        if self.style not in (None, AGGRESSIVE, NORMAL):
            raise DomainError(f"style must be 0, 1 or None, got {self.style!r}")
        gl, rl, vl = _pair_series(self.track, self.lead, other_ahead=True)
        gf, rf, vf = _pair_series(self.track, self.follow, other_ahead=False)
        object.__setattr__(self, "neighbors", NeighborContext(gl, rl, gf, rf, vl, vf))

    @property
    def vehicle_id(self) -> int:
        return self.track.vehicle_id

    @property
    def states(self) -> list[VehicleState]:
        return self.track.states

    @property
    def lcd(self) -> float:
        return self.t_e - self.t_s

    @property
    def deviation(self) -> np.ndarray:
        """Lateral deviation series from the origin lane's left boundary."""
        return self.track.x - self.origin_lane.left_boundary_x

    @property
    def d_a(self) -> float:
        return float(self.deviation[self.track.index_of(self.t_s)])

    def with_style(self, style: Optional[int]) -> "MergingEpisode":
        return replace(self, style=style)

    def same_as(self, other: "MergingEpisode") -> bool:
        def tracks_eq(a, b):
            return (a is None and b is None) or (a is not None and b is not None and a.same_as(b))
        return (self.track.same_as(other.track) and self.t_s == other.t_s and self.t_lc == other.t_lc
                and self.t_e == other.t_e and self.origin_lane == other.origin_lane
                and self.target_lane == other.target_lane and self.style == other.style
                and tracks_eq(self.lead, other.lead) and tracks_eq(self.follow, other.follow))


def change_rate(episode: MergingEpisode, t: float) -> float:
    """Mean rate of lateral-deviation change since merge onset, ``(D_t - D_A)/(t - t_s)``."""
    if not t > episode.t_s:
        raise DomainError(f"change rate needs t > t_s ({t} <= {episode.t_s})")
    dev = episode.deviation
    d_t = dev[episode.track.index_of(t)]
    return float((d_t - episode.d_a) / (t - episode.t_s))


def _sustained(mask: np.ndarray, n: int) -> np.ndarray:
    """``out[i]`` is True when ``mask[i:i+n]`` is all True (False near the end)."""
    m = len(mask)
    if n <= 1:
        return mask.copy()
    c = np.concatenate([[0], np.cumsum(mask.astype(np.int64))])
    out = np.zeros(m, dtype=bool)
    if m >= n:
        out[: m - n + 1] = (c[n:] - c[: m - n + 1]) == n
    return out


def _lane_by_id(lanes: Iterable[LaneGeometry], lane_id: int) -> LaneGeometry:
    for lane in lanes:
        if lane.lane_id == lane_id:
            return lane
    raise ExtractionError(f"no geometry for lane {lane_id}")


def extract_merging_episode(trajectory, lanes: Sequence[LaneGeometry] = DEFAULT_LANES, *,
                            onset_rate: float = ONSET_RATE, onset_sustain: float = ONSET_SUSTAIN,
                            settle_band: float = SETTLE_BAND, settle_sustain: float = SETTLE_SUSTAIN,
                            lead: Optional[Track] = None, follow: Optional[Track] = None,
                            style: Optional[int] = None) -> MergingEpisode:
    """Locate merge onset, lane-change point and merge end in a trajectory.

    ``trajectory`` is a :class:`Track` or an ordered sequence of
    :class:`VehicleState`.  The lane-change point is the first sample whose
    centre lies past the boundary shared by origin and target lane.  Onset is
    the last earlier sample that ends a quiet stretch of ``onset_sustain``
    seconds with ``|dD/dt| <= onset_rate``; the merge ends at the first later
    sample that starts a stay of ``settle_sustain`` seconds within
    ``settle_band`` of the target centreline.
    """
    track = trajectory if isinstance(trajectory, Track) else Track.from_states(0, list(trajectory))
    check_fixed_step(track.t)
    lane_ids = track.lane_id
    changes = np.flatnonzero(np.diff(lane_ids) != 0)
    if len(changes) == 0:
        raise ExtractionError(f"vehicle {track.vehicle_id} never changes lane")
    if len(changes) > 1:
        raise MultiLaneChangeError(f"vehicle {track.vehicle_id} changes lane {len(changes)} times")
    origin = _lane_by_id(lanes, int(lane_ids[0]))
    target = _lane_by_id(lanes, int(lane_ids[-1]))
    if target.center_x < origin.center_x:
        boundary = origin.left_boundary_x
        past = track.x < boundary
    else:
        boundary = origin.right_boundary_x
        past = track.x >= boundary
    past_idx = np.flatnonzero(past)
    if len(past_idx) == 0:
        raise ExtractionError(f"vehicle {track.vehicle_id} never crosses the lane boundary")
    i_lc = int(past_idx[0])
    if i_lc == 0:
        raise ExtractionError("trajectory starts past the lane boundary")

    n_on = max(1, int(round(onset_sustain / DT)))
    quiet = np.abs(track.v_x) <= onset_rate
    # quiet_end[i]: samples i-n_on+1..i are all quiet
    quiet_end = np.zeros(len(track), dtype=bool)
    q = _sustained(quiet, n_on)
    quiet_end[n_on - 1:] = q[: len(track) - n_on + 1]
    cand = np.flatnonzero(quiet_end[:i_lc])
    if len(cand) == 0:
        raise ExtractionError("no quiet stretch before the lane-change point (merge onset not found)")
    i_s = int(cand[-1])

    n_set = max(1, int(round(settle_sustain / DT)))
    settled = _sustained(np.abs(track.x - target.center_x) <= settle_band, n_set)
    cand = np.flatnonzero(settled[i_lc + 1:])
    if len(cand) == 0:
        raise ExtractionError("vehicle never settles on the target-lane centreline")
    i_e = i_lc + 1 + int(cand[0])
    return MergingEpisode(track, float(track.t[i_s]), float(track.t[i_lc]), float(track.t[i_e]),
                          origin, target, lead=lead, follow=follow, style=style)


# --------------------------------------------------------------------------
# CSV + metadata sidecar

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _fmt(v) -> str:
    return repr(float(v))


def _track_rows(track: Track):
    for i in range(len(track)):
        yield (str(track.vehicle_id), str(int(track.frame[i])), _fmt(track.t[i]), _fmt(track.x[i]),
               _fmt(track.y[i]), _fmt(track.v_x[i]), _fmt(track.v_y[i]), _fmt(track.a_y[i]),
               str(int(track.lane_id[i])), _fmt(track.length[i]), _fmt(track.width[i]))


def _lane_dict(lane: LaneGeometry):
    return {"lane_id": lane.lane_id, "left_boundary_x": lane.left_boundary_x,
            "right_boundary_x": lane.right_boundary_x}


def save_trajectories(episodes: Sequence[MergingEpisode], path) -> None:
    """Write the trajectory CSV plus a JSON sidecar with merge events."""
    path = Path(path)
    meta = []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for ep in episodes:
            for tr in (ep.track, ep.lead, ep.follow):
                if tr is not None:
                    w.writerows(_track_rows(tr))
            meta.append({
                "vehicle_id": ep.vehicle_id,
                "lead_id": None if ep.lead is None else ep.lead.vehicle_id,
                "follow_id": None if ep.follow is None else ep.follow.vehicle_id,
                "t_s": ep.t_s, "t_lc": ep.t_lc, "t_e": ep.t_e,
                "style": ep.style,
                "origin_lane": _lane_dict(ep.origin_lane),
                "target_lane": _lane_dict(ep.target_lane),
            })
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump({"format": "merge-episodes", "version": 1, "episodes": meta}, fh, indent=1)
        fh.write("\n")


def read_tracks(path) -> dict[int, Track]:
    """Parse a trajectory CSV into one :class:`Track` per vehicle id."""
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        col = [header.index(c) for c in CSV_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [row[j] for j in col]
            except IndexError:
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno) from None
            try:
                vid, frame, lane = int(vals[0]), int(vals[1]), int(vals[8])
                nums = [float(vals[k]) for k in (2, 3, 4, 5, 6, 7, 9, 10)]
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", lineno) from None
            rows.setdefault(vid, []).append((frame, lane, nums))
    tracks = {}
    for vid, rs in rows.items():
        rs.sort(key=lambda r: r[0])
        a = np.array([r[2] for r in rs], dtype=float)
        tracks[vid] = Track(vid, t=a[:, 0], x=a[:, 1], y=a[:, 2], v_x=a[:, 3], v_y=a[:, 4],
                            a_y=a[:, 5], lane_id=[r[1] for r in rs], length=a[:, 6],
                            width=a[:, 7], frame=[r[0] for r in rs])
    return tracks


def _nearest_neighbours(ego: Track, others: Sequence[Track], i_lc: int, target: LaneGeometry):
    """Closest vehicles ahead/behind in the target lane at the lane-change sample."""
    lead = follow = None
    best_ahead = best_behind = math.inf
    for o in others:
        if len(o) != len(ego) or np.max(np.abs(o.t - ego.t)) > 1e-9:
            continue
        if o.lane_id[i_lc] != target.lane_id:
            continue
        dy = o.y[i_lc] - ego.y[i_lc]
        if dy >= 0 and dy < best_ahead:
            lead, best_ahead = o, dy
        elif dy < 0 and -dy < best_behind:
            follow, best_behind = o, -dy
    return lead, follow


def load_trajectories(path, lanes: Sequence[LaneGeometry] = DEFAULT_LANES) -> list[MergingEpisode]:
    """Read episodes written by :func:`save_trajectories`.

    Without a sidecar every vehicle that changes lane exactly once is treated
    as a merging vehicle; its events are extracted from ``lanes`` and its
    neighbours are the nearest target-lane vehicles at the lane-change point.
    """
    tracks = read_tracks(path)
    meta_file = sidecar_path(path)
    if meta_file.exists():
        with open(meta_file, encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{meta_file}: {exc.msg}", exc.lineno) from None
        if "episodes" not in meta:
            raise SchemaError(f"{meta_file}: missing 'episodes'")
        episodes = []
        for m in meta["episodes"]:
            try:
                track = tracks[m["vehicle_id"]]
                lead = tracks[m["lead_id"]] if m["lead_id"] is not None else None
                follow = tracks[m["follow_id"]] if m["follow_id"] is not None else None
                episodes.append(MergingEpisode(
                    track, m["t_s"], m["t_lc"], m["t_e"],
                    LaneGeometry(**m["origin_lane"]), LaneGeometry(**m["target_lane"]),
                    lead=lead, follow=follow, style=m["style"]))
            except KeyError as exc:
                raise SchemaError(f"{meta_file}: missing key or vehicle {exc}") from None
        return episodes

    episodes = []
    ordered = [tracks[k] for k in sorted(tracks)]
    for tr in ordered:
        if np.count_nonzero(np.diff(tr.lane_id)) != 1:
            continue
        ep = extract_merging_episode(tr, lanes)
        i_lc = tr.index_of(ep.t_lc)
        lead, follow = _nearest_neighbours(tr, [o for o in ordered if o is not tr], i_lc, ep.target_lane)
        episodes.append(replace(ep, lead=lead, follow=follow))
    return episodes
