"""Corridor geometry: wall segments, scenario construction and distance queries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from formnav.team import FORMATION_KINDS, formation_template

D_CAP = 10.0
ROBOT_RADIUS = 0.15
SCENARIO_VERSION = 1


class GeometryError(ValueError):
    """Raised for infeasible or malformed corridor geometry."""


@dataclass(frozen=True)
class Segment2:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        dx, dy = self.b[0] - self.a[0], self.b[1] - self.a[1]
        # also catches lengths so small that the squared length underflows
        if dx * dx + dy * dy == 0.0:
            raise GeometryError(f"degenerate segment {self.a} -> {self.b}")

    def as_row(self) -> list[float]:
        return [self.a[0], self.a[1], self.b[0], self.b[1]]


@dataclass
class Scenario:
    walls: list[Segment2]
    starts: np.ndarray
    goals: np.ndarray
    axis: tuple[float, float] = (1.0, 0.0)
    corridor_width_wide: float = 6.0
    corridor_width_narrow: float = 2.0
    narrow_span: tuple[float, float] = (0.0, 0.0)
    robot_radius: float = ROBOT_RADIUS
    formation: str = "circle"
    formation_scale: float = 1.0
    max_steps: int = 400
    length: float = 20.0
    taper: float = 4.0
    _wall_arrays: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.float64).reshape(-1, 2)
        self.goals = np.asarray(self.goals, dtype=np.float64).reshape(-1, 2)
        if self.n_robots < 2:
            raise GeometryError(f"need at least 2 robots, got {self.n_robots}")
        if self.goals.shape != self.starts.shape:
            raise GeometryError("starts and goals must have the same shape")
        if self.corridor_width_narrow <= 2 * self.robot_radius:
            raise GeometryError(
                f"narrow width {self.corridor_width_narrow} must exceed 2*robot_radius "
                f"= {2 * self.robot_radius}"
            )
        if self.corridor_width_wide < self.corridor_width_narrow:
            raise GeometryError("wide width must be >= narrow width")
        if self.max_steps <= 0:
            raise GeometryError("max_steps must be positive")

    @property
    def n_robots(self) -> int:
        return len(self.starts)

    @property
    def start_centroid(self) -> np.ndarray:
        return self.starts.mean(axis=0)

    @property
    def goal_centroid(self) -> np.ndarray:
        return self.goals.mean(axis=0)

    def wall_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Wall endpoints as two (m, 2) arrays, cached."""
        if self._wall_arrays is None:
            a = np.array([w.a for w in self.walls], dtype=np.float64).reshape(-1, 2)
            b = np.array([w.b for w in self.walls], dtype=np.float64).reshape(-1, 2)
            self._wall_arrays = (a, b)
        return self._wall_arrays

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {
            "version": SCENARIO_VERSION,
            "walls": [w.as_row() for w in self.walls],
            "axis": list(self.axis),
            "starts": self.starts.tolist(),
            "goals": self.goals.tolist(),
            "robot_radius": self.robot_radius,
            "max_steps": self.max_steps,
            "formation": {"kind": self.formation, "scale": self.formation_scale},
            "widths": {"wide": self.corridor_width_wide, "narrow": self.corridor_width_narrow},
            "narrow_span": list(self.narrow_span),
            "corridor": {"length": self.length, "taper": self.taper},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if doc.get("version") != SCENARIO_VERSION:
            raise GeometryError(f"unsupported scenario version {doc.get('version')!r}")
        formation = doc["formation"]
        corridor = doc.get("corridor", {})
        return cls(
            walls=[Segment2((r[0], r[1]), (r[2], r[3])) for r in doc["walls"]],
            starts=np.array(doc["starts"], dtype=np.float64),
            goals=np.array(doc["goals"], dtype=np.float64),
            axis=tuple(doc["axis"]),
            corridor_width_wide=doc["widths"]["wide"],
            corridor_width_narrow=doc["widths"]["narrow"],
            narrow_span=tuple(doc["narrow_span"]),
            robot_radius=doc["robot_radius"],
            formation=formation["kind"],
            formation_scale=formation["scale"],
            max_steps=doc["max_steps"],
            length=corridor.get("length", 0.0),
            taper=corridor.get("taper", 0.0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def _polyline_segments(points: list[tuple[float, float]]) -> list[Segment2]:
    """Segments along a polyline, dropping zero-length pieces and merging collinear runs."""
    pts = [points[0]]
    for p in points[1:]:
        if p != pts[-1]:
            pts.append(p)
    merged = [pts[0]]
    for k in range(1, len(pts)):
        if len(merged) >= 2 and k < len(pts):
            o, m, p = merged[-2], merged[-1], pts[k]
            cross = (m[0] - o[0]) * (p[1] - m[1]) - (m[1] - o[1]) * (p[0] - m[0])
            dot = (m[0] - o[0]) * (p[0] - m[0]) + (m[1] - o[1]) * (p[1] - m[1])
            if abs(cross) < 1e-12 and dot > 0:
                merged[-1] = p
                continue
        merged.append(pts[k])
    return [Segment2(merged[k], merged[k + 1]) for k in range(len(merged) - 1)]


def corridor_layout(length: float, taper: float) -> tuple[float, float, float, float]:
    """Arc-length breakpoints (entry end, narrow begin, narrow end, exit end).

    The wide entry section and the narrow section share the length left after
    the two tapers.
    """
    straight = (length - 2 * taper) / 2
    return straight, straight + taper, 2 * straight + taper, length


def build_corridor(
    n_robots: int,
    formation_kind: str = "circle",
    wide: float = 6.0,
    narrow: float = 2.0,
    length: float = 20.0,
    taper: float = 4.0,
    seed: int | None = None,
    *,
    scale: float = 1.0,
    robot_radius: float = ROBOT_RADIUS,
    max_steps: int = 400,
    goal_past: float = 2.0,
) -> Scenario:
    """Build a symmetric funnel corridor along +x and place the team at its mouth.

    Each wall is a polyline: wide entry, taper in, narrow section, taper back
    out to the wide width where the corridor ends.  The team starts in its
    template pose inside the entry section and its goals are the same template
    ``goal_past`` metres beyond the corridor exit.  ``seed`` is accepted for
    interface symmetry; the construction itself is deterministic.
    """
    del seed
    if n_robots < 2:
        raise GeometryError(f"need at least 2 robots, got {n_robots}")
    if formation_kind not in FORMATION_KINDS:
        raise GeometryError(f"unknown formation {formation_kind!r}")
    if narrow <= 2 * robot_radius:
        raise GeometryError(
            f"infeasible corridor: narrow={narrow} must exceed 2*robot_radius={2 * robot_radius}"
        )
    if wide < narrow:
        raise GeometryError(f"wide={wide} must be >= narrow={narrow}")
    if taper < 0:
        raise GeometryError(f"taper={taper} must be non-negative")
    if length <= 2 * taper:
        raise GeometryError(f"length={length} must exceed 2*taper={2 * taper}")

    x_entry, x_n0, x_n1, x_end = corridor_layout(length, taper)
    hw, hn = wide / 2, narrow / 2
    walls = []
    for side in (1.0, -1.0):
        pts = [
            (0.0, side * hw),
            (x_entry, side * hw),
            (x_n0, side * hn),
            (x_n1, side * hn),
            (x_end, side * hw),
        ]
        walls.extend(_polyline_segments(pts))

    offsets = np.array(formation_template(formation_kind, n_robots, scale))
    back = -offsets[:, 0].min()
    start_x = min(back + 0.5, x_entry / 2) if x_entry > 0 else back + 0.5
    start = np.array([start_x, 0.0])
    goal = np.array([x_end + goal_past, 0.0])
    return Scenario(
        walls=walls,
        starts=offsets + start,
        goals=offsets + goal,
        axis=(1.0, 0.0),
        corridor_width_wide=wide,
        corridor_width_narrow=narrow,
        narrow_span=(0.0, x_end) if wide == narrow else (x_n0, x_n1),
        robot_radius=robot_radius,
        formation=formation_kind,
        formation_scale=scale,
        max_steps=max_steps,
        length=length,
        taper=taper,
    )


def point_segment_distance(p, s: Segment2) -> float:
    """Euclidean distance from ``p`` to the closest point of segment ``s``."""
    ax, ay = s.a
    bx, by = s.b
    dx, dy = bx - ax, by - ay
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)
    t = min(1.0, max(0.0, t))
    return float(np.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy)))


def closest_points(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closest point on every segment for every point, shape (n, m, 2)."""
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("nmk,mk->nm", ap, ab) / np.einsum("mk,mk->m", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    return a[None] + t[..., None] * ab[None]


def distances_to_walls(points: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Raw distance from each point to each wall, shape (n, m)."""
    a, b = scenario.wall_arrays()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0:
        return np.empty((len(pts), 0))
    c = closest_points(pts, a, b)
    diff = pts[:, None, :] - c
    return np.sqrt(np.einsum("nmk,nmk->nm", diff, diff))


def nearest_obstacle_distances(points: np.ndarray, scenario: Scenario) -> np.ndarray:
    d = distances_to_walls(points, scenario)
    if d.shape[1] == 0:
        return np.full(d.shape[0], D_CAP)
    return np.minimum(d.min(axis=1), D_CAP)


def nearest_obstacle_distance(p, scenario: Scenario) -> float:
    """Distance from ``p`` to the nearest wall surface, capped at ``D_CAP``."""
    return float(nearest_obstacle_distances(np.asarray(p, dtype=np.float64), scenario)[0])


def check_collisions(positions, scenario: Scenario, active=None, wall_distance=None) -> np.ndarray:
    """Per-robot collision flags against walls and teammates.

    Robots outside ``active`` (e.g. parked at their goal) neither collide nor
    cause collisions.
    """
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(p)
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    r = scenario.robot_radius
    if wall_distance is None:
        wall_distance = nearest_obstacle_distances(p, scenario)
    flags = np.asarray(wall_distance) < r
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    close = dist < 2 * r
    np.fill_diagonal(close, False)
    close &= active[:, None] & active[None, :]
    flags = (flags | close.any(axis=1)) & active
    return flags


def local_width(scenario: Scenario, s: float) -> float:
    """Corridor width across the axis at arc length ``s``.

    Measured between the nearest wall crossings on either side of the axis;
    where no wall crosses (beyond the corridor ends) the wide width is used.
    """
    ax = np.asarray(scenario.axis, dtype=np.float64)
    perp = np.array([-ax[1], ax[0]])
    a, b = scenario.wall_arrays()
    sa, sb = a @ ax, b @ ax
    lo, hi = np.minimum(sa, sb), np.maximum(sa, sb)
    hit = (lo <= s) & (s <= hi) & (hi > lo)
    if not hit.any():
        return scenario.corridor_width_wide
    t = (s - sa[hit]) / (sb[hit] - sa[hit])
    off = (a[hit] + t[:, None] * (b[hit] - a[hit])) @ perp
    pos, neg = off[off > 0], off[off < 0]
    if len(pos) == 0 or len(neg) == 0:
        return scenario.corridor_width_wide
    return float(pos.min() - neg.max())
