"""Planar geometry: oriented boxes, SAT overlap, Frenet projection, ray casting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    return math.pi if r <= -math.pi else r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    r = np.remainder(np.asarray(a, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(r <= -math.pi, math.pi, r)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])


@dataclass(frozen=True)
class Obb:
    center: Pose2D
    length: float
    width: float

    def __post_init__(self):
        if not (self.length >= self.width > 0):
            raise ValueError(f"need length >= width > 0, got {self.length} x {self.width}")

    def as_row(self) -> np.ndarray:
        c = self.center
        return np.array([c.x, c.y, c.yaw, self.length, self.width])


@dataclass(frozen=True)
class FrenetCoord:
    s: float
    d: float


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered 2D points with cumulative arclength."""

    points: np.ndarray
    cumulative_arclength: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 2))
        if pts.shape[0] < 2:
            raise ValueError("polyline needs at least 2 points")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg <= 0):
            raise ValueError("polyline has repeated consecutive points")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        pts.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cumulative_arclength", cum)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def to_list(self) -> list:
        return self.points.tolist()

    def point_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, tangent yaw) at arclength ``s`` (clamped to the polyline)."""
        cum = self.cumulative_arclength
        s = min(max(s, 0.0), cum[-1])
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(max(k, 0), len(cum) - 2)
        a, b = self.points[k], self.points[k + 1]
        t = (s - cum[k]) / (cum[k + 1] - cum[k])
        p = a + t * (b - a)
        return float(p[0]), float(p[1]), math.atan2(b[1] - a[1], b[0] - a[0])

    def tangent_yaw(self, s: float) -> float:
        return self.point_at(s)[2]

    def resample(self, spacing: float) -> np.ndarray:
        n = max(2, int(math.ceil(self.length / spacing)) + 1)
        return np.array([self.point_at(s)[:2] for s in np.linspace(0.0, self.length, n)])


def obb_corners(box: Obb) -> np.ndarray:
    """Corners (4, 2), counter-clockwise from front-left."""
    c = box.center
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    hl, hw = 0.5 * box.length, 0.5 * box.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[cs, -sn], [sn, cs]])
    return local @ rot.T + np.array([c.x, c.y])


def sat_overlap(a: Obb, b: Obb) -> bool:
    """Separating-axis overlap test; touching boxes count as overlapping."""
    return bool(kernels.sat_overlap_pairs(a.as_row()[None, :], b.as_row()[None, :])[0])


def frenet_project(p, lane: Polyline) -> FrenetCoord:
    """Closest-point projection; d > 0 to the left of travel, ties go to lower s."""
    out = kernels.frenet_project_points(
        np.asarray(p, dtype=np.float64).reshape(1, 2), lane.points, lane.cumulative_arclength
    )
    return FrenetCoord(float(out[0, 0]), float(out[0, 1]))


def frenet_project_many(pts: np.ndarray, lane: Polyline) -> np.ndarray:
    pts = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 2))
    return kernels.frenet_project_points(pts, lane.points, lane.cumulative_arclength)


def frenet_to_cartesian(s: float, d: float, lane: Polyline) -> tuple[float, float]:
    x, y, yaw = lane.point_at(s)
    return x - d * math.sin(yaw), y + d * math.cos(yaw)


def ray_cast(origin: Pose2D, angle: float, max_range: float, boxes) -> float:
    """Distance along a ray at ``angle`` (relative to the origin heading) to the nearest box."""
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    rows = _box_rows(boxes)
    out = kernels.ray_cast_boxes(
        origin.x, origin.y, np.array([origin.yaw + angle]), float(max_range), rows
    )
    return float(out[0])


def _box_rows(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return np.ascontiguousarray(boxes.reshape(-1, 5), dtype=np.float64)
    if not boxes:
        return np.zeros((0, 5))
    return np.ascontiguousarray(np.stack([b.as_row() for b in boxes]))
