"""T-junction geometry and the ego's turn paths.

The main road runs along x with two lanes: the near lane (y = -2) carries
traffic towards +x, the far lane (y = +2) towards -x. The ego waits on the
minor-road stem at x = +2, facing +y, with its centre on the stop line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .kinematics import path_pose


class Turn(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Lane:
    index: int
    center_y: float
    direction: float  # +1 towards +x, -1 towards -x
    entry_x: float
    exit_x: float

    @property
    def heading(self) -> float:
        return math.pi / 2 if self.direction > 0 else -math.pi / 2


@dataclass(frozen=True)
class IntersectionLayout:
    lane_width: float = 4.0
    road_length: float = 120.0
    stop_line_gap: float = 4.0
    right_radius: float = 6.0
    left_radius: float = 10.0
    exit_straight: float = 4.0
    waypoint_spacing: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lane_width, self.road_length, self.right_radius, self.left_radius) <= 0:
            raise ValueError("layout dimensions must be positive")

    @property
    def half_length(self) -> float:
        return 0.5 * self.road_length

    @property
    def stop_line_y(self) -> float:
        return -self.lane_width - self.stop_line_gap

    @property
    def ego_lane_x(self) -> float:
        return 0.5 * self.lane_width

    @property
    def lanes(self) -> tuple[Lane, Lane]:
        h = self.half_length
        w = 0.5 * self.lane_width
        return (
            Lane(0, -w, +1.0, -h, +h),
            Lane(1, +w, -1.0, +h, -h),
        )

    def conflict_zone(self) -> np.ndarray:
        """Corners of the junction box shared by the stem and both lanes."""
        w = self.lane_width
        return np.array([[-w, -w], [w, -w], [w, w], [-w, w]], dtype=float)

    def lane_strip(self, lane: Lane) -> tuple[float, float]:
        """y-interval occupied by a lane; the region a traffic vehicle yields in."""
        w = 0.5 * self.lane_width
        return lane.center_y - w, lane.center_y + w

    def lane_of(self, y: float) -> Lane:
        """Main-road lane whose centre line is nearest to ``y``."""
        return min(self.lanes, key=lambda lane: abs(lane.center_y - y))

    def conflict_lanes(self, path: "PathSpec", half_width: float = 0.9) -> tuple[Lane, ...]:
        """Lanes whose strip is reached by a body of ``half_width`` swept along ``path``."""
        lo = float(path.ys.min()) - half_width
        hi = float(path.ys.max()) + half_width
        out = []
        for lane in self.lanes:
            a, b = self.lane_strip(lane)
            if hi > a and lo < b:
                out.append(lane)
        return tuple(out)

    def path(self, turn: Turn | str) -> "PathSpec":
        return build_path(self, Turn(turn))


@dataclass(frozen=True, eq=False)
class PathSpec:
    turn: Turn
    xs: np.ndarray
    ys: np.ndarray
    ss: np.ndarray
    hs: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return float(self.ss[-1])

    def pose(self, s: float) -> tuple[float, float, float]:
        return path_pose(float(s), self.xs, self.ys, self.ss, self.hs)


def polyline_path(turn: Turn, points: np.ndarray) -> PathSpec:
    points = np.asarray(points, dtype=float)
    seg = np.diff(points, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths <= 0):
        raise ValueError("path waypoints must be distinct")
    ss = np.concatenate([[0.0], np.cumsum(lengths)])
    hs = np.arctan2(seg[:, 0], seg[:, 1])
    return PathSpec(turn, points[:, 0].copy(), points[:, 1].copy(), ss, hs)


def straight_path(x0: float, y0: float, heading: float, length: float, turn: Turn = Turn.RIGHT) -> PathSpec:
    """Single-segment path, mostly for tests."""
    pts = np.array([[x0, y0], [x0 + length * math.sin(heading), y0 + length * math.cos(heading)]])
    return polyline_path(turn, pts)


def build_path(layout: IntersectionLayout, turn: Turn) -> PathSpec:
    x0 = layout.ego_lane_x
    y0 = layout.stop_line_y
    if turn is Turn.RIGHT:
        r = layout.right_radius
        cx, cy = x0 + r, y0
        n = max(2, math.ceil(0.5 * math.pi * r / layout.waypoint_spacing))
        phi = np.linspace(0.0, 0.5 * math.pi, n + 1)
        arc = np.column_stack([cx - r * np.cos(phi), cy + r * np.sin(phi)])
        end = arc[-1] + np.array([layout.exit_straight, 0.0])
    else:
        r = layout.left_radius
        cx, cy = x0 - r, y0
        n = max(2, math.ceil(0.5 * math.pi * r / layout.waypoint_spacing))
        phi = np.linspace(0.0, 0.5 * math.pi, n + 1)
        arc = np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi)])
        end = arc[-1] + np.array([-layout.exit_straight, 0.0])
    k = max(1, math.ceil(layout.exit_straight / layout.waypoint_spacing))
    tail = [arc[-1] + (end - arc[-1]) * (i / k) for i in range(1, k + 1)]
    return polyline_path(turn, np.vstack([arc, tail]))
