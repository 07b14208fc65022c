"""Geometric primitives, anchor layouts and declarative scenario descriptions.

All coordinates are meters on a 2D plane; all tags are assumed to sit at the
same height so the problem is purely planar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# coincidence threshold for tag/anchor or tag/tag degeneracy
DEGENERATE_DISTANCE = 1e-3


class GeometryError(ValueError):
    """Raised when a position coincides with an anchor or peer."""


class ConfigurationError(ValueError):
    """Raised for unsatisfiable scenario or sampling requests."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def of(cls, xy: Sequence[float] | "Point2") -> "Point2":
        if isinstance(xy, Point2):
            return xy
        x, y = xy
        return cls(float(x), float(y))


@dataclass(frozen=True)
class Room:
    """Axis-aligned rectangle."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def contains(self, p: Point2, tol: float = 1e-9) -> bool:
        return (self.x_min - tol <= p.x <= self.x_max + tol
                and self.y_min - tol <= p.y <= self.y_max + tol)

    def grid(self, step: float) -> list[Point2]:
        """Grid points ``(x_min + i*step, y_min + j*step)`` inside the room, edges included.

        Ordered row by row (y outer, x inner); this order defines the
        tie-break used by grid-search initialization.
        """
        if step <= 0:
            raise ConfigurationError("grid step must be positive")
        nx = int(math.floor((self.x_max - self.x_min) / step + 1e-9)) + 1
        ny = int(math.floor((self.y_max - self.y_min) / step + 1e-9)) + 1
        return [Point2(self.x_min + i * step, self.y_min + j * step)
                for j in range(ny) for i in range(nx)]


@dataclass(frozen=True)
class AnchorSet:
    positions: tuple[Point2, ...]
    reference_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(Point2.of(p) for p in self.positions))

    @property
    def array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.positions], dtype=float)

    def __len__(self) -> int:
        return len(self.positions)

    def problems(self) -> list[str]:
        out = []
        if len(self.positions) < 3:
            out.append("insufficient anchors: need at least 3 for 2D TDOA")
        if not 0 <= self.reference_index < max(len(self.positions), 1):
            out.append(f"reference_index {self.reference_index} out of range")
        seen = set()
        for i, p in enumerate(self.positions):
            if (p.x, p.y) in seen:
                out.append(f"anchor {i} duplicates another anchor position")
            seen.add((p.x, p.y))
        return out


@dataclass(frozen=True)
class Scenario:
    """Full description of one simulated experiment.

    The fields after ``failed_tags`` configure the estimator rather than the
    world; they carry defaults so scenario files may omit them.
    """

    room: Room
    anchors: AnchorSet
    tag_truths: tuple[Point2, ...]
    sigma_toa: float = 1e-9
    sigma_twr: float = 0.06
    periods: int = 300
    grid_step: float = 0.5
    seed: int = 0
    cooperative: bool = True
    reply_delays: tuple[float, ...] = ()
    clock_ppm: tuple[float, ...] = ()
    failed_tags: frozenset[int] = field(default_factory=frozenset)
    dt: float = 0.1
    q_accel: float = 0.01
    tdoa_correlated: bool = True
    burn_in: int = 50
    peer_uncertainty: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag_truths", tuple(Point2.of(p) for p in self.tag_truths))
        n = len(self.tag_truths)
        if not self.reply_delays:
            object.__setattr__(self, "reply_delays", (1e-3,) * n)
        if not self.clock_ppm:
            object.__setattr__(self, "clock_ppm", (0.0,) * n)
        object.__setattr__(self, "reply_delays", tuple(float(d) for d in self.reply_delays))
        object.__setattr__(self, "clock_ppm", tuple(float(e) for e in self.clock_ppm))
        object.__setattr__(self, "failed_tags", frozenset(int(t) for t in self.failed_tags))

    @property
    def n_tags(self) -> int:
        return len(self.tag_truths)

    def with_tags(self, tags: Iterable[Point2]) -> "Scenario":
        """Copy with a new tag placement; per-tag vectors are resized with defaults if needed."""
        tags = tuple(tags)
        changes: dict = {"tag_truths": tags}
        if len(tags) != self.n_tags:
            changes.update(reply_delays=(), clock_ppm=(), failed_tags=frozenset())
        return replace(self, **changes)


def distance(a: Point2, b: Point2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def true_range_difference(p: Point2, anchor_i: Point2, anchor_ref: Point2) -> float:
    """Range difference ``|p - anchor_i| - |p - anchor_ref|`` in meters."""
    d_i = distance(p, anchor_i)
    d_ref = distance(p, anchor_ref)
    if d_i < DEGENERATE_DISTANCE or d_ref < DEGENERATE_DISTANCE:
        raise GeometryError(f"point ({p.x}, {p.y}) coincides with an anchor")
    return d_i - d_ref


def sample_tag_configuration(room: Room, grid_step: float, n_tags: int,
                             rng: np.random.Generator,
                             exclude: Sequence[Point2] = ()) -> list[Point2]:
    """Draw ``n_tags`` distinct grid points uniformly without replacement.

    Grid points within 1 mm of any point in ``exclude`` (typically the
    anchors) are not eligible.
    """
    candidates = [g for g in room.grid(grid_step)
                  if all(distance(g, e) >= DEGENERATE_DISTANCE for e in exclude)]
    if n_tags > len(candidates):
        raise ConfigurationError(
            f"grid has {len(candidates)} eligible points, cannot place {n_tags} tags")
    idx = rng.choice(len(candidates), size=n_tags, replace=False)
    return [candidates[i] for i in idx]


def validate_scenario(s: Scenario) -> list[str]:
    """Return every invariant violation of ``s``; an empty list means valid."""
    errors = list(s.anchors.problems())
    r = s.room
    if not (r.x_max > r.x_min and r.y_max > r.y_min):
        errors.append("room has non-positive extent")
    if s.n_tags < 1:
        errors.append("no tags declared")
    for i, t in enumerate(s.tag_truths):
        if not r.contains(t):
            errors.append(f"tag {i} out of bounds: ({t.x}, {t.y})")
    if s.sigma_toa < 0:
        errors.append("sigma_toa must be >= 0")
    if s.sigma_twr < 0:
        errors.append("sigma_twr must be >= 0")
    if s.periods < 1:
        errors.append("periods must be >= 1")
    if s.grid_step <= 0:
        errors.append("grid_step must be > 0")
    if len(s.reply_delays) != s.n_tags:
        errors.append(f"reply_delays has {len(s.reply_delays)} entries for {s.n_tags} tags")
    elif any(d <= 0 for k, d in enumerate(s.reply_delays) if k > 0):
        errors.append("reply_delays must be > 0 for replying tags")
    if len(s.clock_ppm) != s.n_tags:
        errors.append(f"clock_ppm has {len(s.clock_ppm)} entries for {s.n_tags} tags")
    bad = sorted(t for t in s.failed_tags if not 0 <= t < s.n_tags)
    if bad:
        errors.append(f"failed_tags reference unknown tags {bad}")
    if s.dt <= 0:
        errors.append("dt must be > 0")
    if s.q_accel < 0:
        errors.append("q_accel must be >= 0")
    if not 0 <= s.burn_in < max(s.periods, 1):
        errors.append("burn_in must be in [0, periods)")
    return errors


def reference_room() -> Room:
    return Room(0.0, 0.0, 10.0, 10.0)


def wall_anchors() -> AnchorSet:
    """Reference layout for the 10 x 10 m room: the four wall midpoints plus (2.5, 0).

    Anchor 0, the midpoint of the south wall, is the TDOA reference.
    """
    return AnchorSet((Point2(5, 0), Point2(10, 5), Point2(5, 10), Point2(0, 5), Point2(2.5, 0)), 0)


def corner_anchors() -> AnchorSet:
    """Alternative layout: four corners plus the south-wall midpoint, corner (0, 0) as reference."""
    return AnchorSet((Point2(0, 0), Point2(10, 0), Point2(10, 10), Point2(0, 10), Point2(5, 0)), 0)
