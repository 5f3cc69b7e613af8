"""Driving-style-aware prediction of merging vehicles and ADS longitudinal planning.

Pipeline: synthetic or recorded merging trajectories -> driving-style
clustering -> early style prediction -> per-style transformer trajectory
prediction -> four-state ADS planner evaluated by time to collision.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateInputError,
    DomainError,
    ExtractionError,
    MergePlannerError,
    MultiLaneChangeError,
    NumericGuardError,
    ParseError,
    SchemaError,
)
from .trajectory import (
    AGGRESSIVE,
    DT,
    NORMAL,
    LaneGeometry,
    MergingEpisode,
    Track,
    VehicleState,
    extract_merging_episode,
    load_trajectories,
    save_trajectories,
)
