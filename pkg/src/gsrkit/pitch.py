"""Canonical 3D soccer pitch and its keypoint catalogue.

World frame: origin at the centre spot, x toward the right goal line, y toward
the far touchline, z up. Ground markings lie in z = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

# Version of the keypoint / line enumeration written into annotation files.
ENUMERATION_VERSION = "gsrkit-pitch-1"


class InvalidDimensionsError(ValueError):
    pass


@dataclass(frozen=True)
class PitchDimensions:
    length: float = 105.0
    width: float = 68.0
    center_circle_radius: float = 9.15
    penalty_area_depth: float = 16.5
    penalty_area_width: float = 40.32
    goal_area_depth: float = 5.5
    goal_area_width: float = 18.32
    penalty_mark_distance: float = 11.0
    goal_width: float = 7.32
    goal_height: float = 2.44

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidDimensionsError(f"{name} must be a positive finite number, got {value!r}")
        if self.penalty_area_width >= self.width:
            raise InvalidDimensionsError("penalty_area_width must be smaller than width")
        if self.goal_area_depth >= self.penalty_area_depth:
            raise InvalidDimensionsError("goal_area_depth must be smaller than penalty_area_depth")
        if self.goal_area_width >= self.penalty_area_width:
            raise InvalidDimensionsError("goal_area_width must be smaller than penalty_area_width")
        if self.goal_width >= self.goal_area_width:
            raise InvalidDimensionsError("goal_width must be smaller than goal_area_width")
        if 2 * self.penalty_area_depth >= self.length or 2 * self.center_circle_radius >= self.width:
            raise InvalidDimensionsError("areas overlap the halfway line or touchlines")
        if not (self.penalty_area_depth - self.penalty_mark_distance < self.center_circle_radius
                and self.penalty_mark_distance < self.penalty_area_depth):
            # the penalty arc must poke out of the penalty area
            raise InvalidDimensionsError("penalty mark / arc geometry is inconsistent")


@dataclass(frozen=True)
class Segment3:
    a: tuple[float, float, float]
    b: tuple[float, float, float]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.b, self.a)))

    def point_at(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        a = np.asarray(self.a)
        return a + s * (np.asarray(self.b) - a)

    def distance(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = np.asarray(self.a)
        d = np.asarray(self.b) - a
        s = np.clip((p - a) @ d / (d @ d), 0.0, 1.0)
        return np.linalg.norm(a + s[:, None] * d - p, axis=1)


@dataclass(frozen=True)
class Arc3:
    """Circular arc in the ground plane, counter-clockwise from start to end."""

    center: tuple[float, float, float]
    radius: float
    start: float
    end: float

    @property
    def sweep(self) -> float:
        return self.end - self.start

    @property
    def is_full_circle(self) -> bool:
        return abs(self.sweep - 2 * math.pi) < 1e-12

    @property
    def length(self) -> float:
        return self.radius * self.sweep

    def point_at(self, s):
        theta = self.start + np.asarray(s, dtype=float) * self.sweep
        c = np.asarray(self.center)
        out = np.empty(theta.shape + (3,))
        out[..., 0] = c[0] + self.radius * np.cos(theta)
        out[..., 1] = c[1] + self.radius * np.sin(theta)
        out[..., 2] = c[2]
        return out

    def contains_angle(self, theta: float, tol: float = 1e-12) -> bool:
        if self.is_full_circle:
            return True
        rel = (theta - self.start) % (2 * math.pi)
        return rel <= self.sweep + tol or rel >= 2 * math.pi - tol

    def distance(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.asarray(self.center)
        rel = p - c
        planar = np.hypot(rel[:, 0], rel[:, 1])
        theta = np.arctan2(rel[:, 1], rel[:, 0])
        on_arc = np.array([self.contains_angle(t, 1e-9) for t in theta])
        d_circle = np.hypot(planar - self.radius, rel[:, 2])
        ends = self.point_at(np.array([0.0, 1.0]))
        d_ends = np.min(np.linalg.norm(p[:, None, :] - ends[None], axis=2), axis=1)
        return np.where(on_arc, d_circle, d_ends)


Geometry = Union[Segment3, Arc3]


@dataclass(frozen=True)
class PitchElement:
    name: str
    geometry: Geometry

    @property
    def on_ground(self) -> bool:
        g = self.geometry
        if isinstance(g, Arc3):
            return g.center[2] == 0.0
        return g.a[2] == 0.0 and g.b[2] == 0.0

    @property
    def is_straight(self) -> bool:
        return isinstance(self.geometry, Segment3)


@dataclass(frozen=True)
class PitchKeypoint:
    id: int
    position: tuple[float, float, float]
    description: str


@dataclass(frozen=True)
class PitchModel:
    dims: PitchDimensions
    elements: tuple[PitchElement, ...]
    _index: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        index = {e.name: e for e in self.elements}
        if len(index) != len(self.elements):
            raise ValueError("element names must be unique")
        object.__setattr__(self, "_index", index)

    def element(self, name: str) -> PitchElement:
        return self._index[name]

    def __contains__(self, name) -> bool:
        return name in self._index

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.elements)


def build_pitch(dims: PitchDimensions | None = None) -> PitchModel:
    """Assemble the canonical marking set for ``dims`` (defaults: 105 x 68 m)."""
    d = dims or PitchDimensions()
    hl, hw = d.length / 2, d.width / 2
    pa_x = hl - d.penalty_area_depth
    pa_y = d.penalty_area_width / 2
    ga_x = hl - d.goal_area_depth
    ga_y = d.goal_area_width / 2
    gy = d.goal_width / 2
    gz = d.goal_height

    def seg(name, a, b):
        return PitchElement(name, Segment3(tuple(map(float, a)), tuple(map(float, b))))

    elements = [
        seg("Side line top", (-hl, hw, 0), (hl, hw, 0)),
        seg("Side line bottom", (-hl, -hw, 0), (hl, -hw, 0)),
        seg("Side line left", (-hl, -hw, 0), (-hl, hw, 0)),
        seg("Side line right", (hl, -hw, 0), (hl, hw, 0)),
        seg("Middle line", (0, -hw, 0), (0, hw, 0)),
        PitchElement("Circle central", Arc3((0.0, 0.0, 0.0), float(d.center_circle_radius), 0.0, 2 * math.pi)),
    ]
    # the penalty arc is the part of the circle around the penalty mark that
    # lies outside the penalty area
    half_angle = math.acos((d.penalty_area_depth - d.penalty_mark_distance) / d.center_circle_radius)
    for side, sx in (("left", -1.0), ("right", 1.0)):
        elements += [
            seg(f"Big rect. {side} top", (sx * hl, pa_y, 0), (sx * pa_x, pa_y, 0)),
            seg(f"Big rect. {side} main", (sx * pa_x, -pa_y, 0), (sx * pa_x, pa_y, 0)),
            seg(f"Big rect. {side} bottom", (sx * hl, -pa_y, 0), (sx * pa_x, -pa_y, 0)),
            seg(f"Small rect. {side} top", (sx * hl, ga_y, 0), (sx * ga_x, ga_y, 0)),
            seg(f"Small rect. {side} main", (sx * ga_x, -ga_y, 0), (sx * ga_x, ga_y, 0)),
            seg(f"Small rect. {side} bottom", (sx * hl, -ga_y, 0), (sx * ga_x, -ga_y, 0)),
        ]
        mark = (sx * (hl - d.penalty_mark_distance), 0.0, 0.0)
        mid = 0.0 if sx < 0 else math.pi
        elements.append(
            PitchElement(f"Circle {side}", Arc3(mark, float(d.center_circle_radius), mid - half_angle, mid + half_angle))
        )
    # Goal posts, named as seen by someone at the centre spot facing that goal.
    for side, sx in (("left", -1.0), ("right", 1.0)):
        left_y = -gy if sx < 0 else gy
        elements += [
            seg(f"Goal {side} crossbar", (sx * hl, -gy, gz), (sx * hl, gy, gz)),
            seg(f"Goal {side} post left", (sx * hl, left_y, 0), (sx * hl, left_y, gz)),
            seg(f"Goal {side} post right", (sx * hl, -left_y, 0), (sx * hl, -left_y, gz)),
        ]
    return PitchModel(d, tuple(elements))


# ---------------------------------------------------------------------------
# intersections
# ---------------------------------------------------------------------------
_TOL = 1e-9


def _seg_seg(s1: Segment3, s2: Segment3) -> list[np.ndarray]:
    a = np.asarray(s1.a)
    d1 = np.asarray(s1.b) - a
    c = np.asarray(s2.a)
    d2 = np.asarray(s2.b) - c
    cross = np.cross(d1, d2)
    if np.linalg.norm(cross) <= _TOL * np.linalg.norm(d1) * np.linalg.norm(d2):
        # parallel: only shared endpoints count
        out = []
        for p in (s1.a, s1.b):
            if s2.distance(p)[0] <= _TOL:
                out.append(np.asarray(p, dtype=float))
        return out
    A = np.stack([d1, -d2], axis=1)
    (s, u), *_ = np.linalg.lstsq(A, c - a, rcond=None)
    if not (-_TOL <= s <= 1 + _TOL and -_TOL <= u <= 1 + _TOL):
        return []
    p = a + np.clip(s, 0, 1) * d1
    q = c + np.clip(u, 0, 1) * d2
    if np.linalg.norm(p - q) > 1e-7:
        return []
    # snap to an endpoint when the hit is one, so positions are exact
    for e in (s1.a, s1.b, s2.a, s2.b):
        if np.linalg.norm(p - np.asarray(e)) <= 1e-7:
            return [np.asarray(e, dtype=float)]
    return [p]


def _seg_arc(s: Segment3, arc: Arc3) -> list[np.ndarray]:
    a = np.asarray(s.a)
    d = np.asarray(s.b) - a
    cz = arc.center[2]
    if abs(d[2]) > _TOL:
        # segment crosses the arc plane at one point
        t = (cz - a[2]) / d[2]
        if not (-_TOL <= t <= 1 + _TOL):
            return []
        cands = [a + t * d]
    elif abs(a[2] - cz) > _TOL:
        return []
    else:
        rel = a[:2] - np.asarray(arc.center[:2])
        qa = d[:2] @ d[:2]
        qb = 2 * rel @ d[:2]
        qc = rel @ rel - arc.radius**2
        disc = qb * qb - 4 * qa * qc
        if disc < -_TOL * max(1.0, qb * qb):
            return []
        disc = max(disc, 0.0)
        roots = {(-qb - math.sqrt(disc)) / (2 * qa), (-qb + math.sqrt(disc)) / (2 * qa)}
        cands = [a + t * d for t in sorted(roots) if -_TOL <= t <= 1 + _TOL]
    out = []
    for p in cands:
        rel = p - np.asarray(arc.center)
        if abs(math.hypot(rel[0], rel[1]) - arc.radius) > 1e-7:
            continue
        if arc.contains_angle(math.atan2(rel[1], rel[0]), 1e-9):
            out.append(p)
    return out


def _arc_arc(a1: Arc3, a2: Arc3) -> list[np.ndarray]:
    if a1.center[2] != a2.center[2]:
        return []
    c1 = np.asarray(a1.center[:2])
    c2 = np.asarray(a2.center[:2])
    dist = float(np.linalg.norm(c2 - c1))
    r1, r2 = a1.radius, a2.radius
    if dist == 0.0 or dist > r1 + r2 + _TOL or dist < abs(r1 - r2) - _TOL:
        return []
    x = (dist * dist + r1 * r1 - r2 * r2) / (2 * dist)
    h = math.sqrt(max(r1 * r1 - x * x, 0.0))
    e = (c2 - c1) / dist
    base = c1 + x * e
    perp = np.array([-e[1], e[0]])
    pts = [base + h * perp] if h == 0.0 else [base + h * perp, base - h * perp]
    out = []
    for p in pts:
        ok1 = a1.contains_angle(math.atan2(p[1] - c1[1], p[0] - c1[0]), 1e-9)
        ok2 = a2.contains_angle(math.atan2(p[1] - c2[1], p[0] - c2[0]), 1e-9)
        if ok1 and ok2:
            out.append(np.array([p[0], p[1], a1.center[2]]))
    return out


def intersect(e1: PitchElement, e2: PitchElement) -> list[np.ndarray]:
    g1, g2 = e1.geometry, e2.geometry
    if isinstance(g1, Segment3) and isinstance(g2, Segment3):
        return _seg_seg(g1, g2)
    if isinstance(g1, Segment3):
        return _seg_arc(g1, g2)
    if isinstance(g2, Segment3):
        return _seg_arc(g2, g1)
    return _arc_arc(g1, g2)


@lru_cache(maxsize=32)
def keypoint_catalogue(model: PitchModel) -> tuple[PitchKeypoint, ...]:
    """All marking intersections plus the centre spot and penalty marks.

    Ids start at 1 and follow the fixed element order, so a given id names the
    same structural point for any pitch dimensions.
    """
    found: list[tuple[np.ndarray, str]] = []

    def add(p, desc):
        for q, _ in found:
            if np.linalg.norm(q - p) <= 1e-7:
                return
        found.append((np.asarray(p, dtype=float), desc))

    els = model.elements
    for i in range(len(els)):
        for j in range(i + 1, len(els)):
            for p in intersect(els[i], els[j]):
                add(p, f"{els[i].name} x {els[j].name}")
    d = model.dims
    hl = d.length / 2
    add(np.zeros(3), "Centre spot")
    add(np.array([-hl + d.penalty_mark_distance, 0.0, 0.0]), "Penalty mark left")
    add(np.array([hl - d.penalty_mark_distance, 0.0, 0.0]), "Penalty mark right")
    # +0.0 clears negative zeros so identical inputs give identical bytes
    return tuple(
        PitchKeypoint(k + 1, tuple(float(v) + 0.0 for v in p), desc) for k, (p, desc) in enumerate(found)
    )


def keypoint_positions(model: PitchModel) -> dict[int, np.ndarray]:
    return {kp.id: np.asarray(kp.position) for kp in keypoint_catalogue(model)}


def sample_element(elem: PitchElement | Geometry, spacing: float) -> np.ndarray:
    """Points along the element with arc-length gaps no larger than ``spacing``.

    Segments always include both endpoints. A full circle omits the duplicate
    closing point.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    g = elem.geometry if isinstance(elem, PitchElement) else elem
    length = g.length
    n = max(1, math.ceil(length / spacing - 1e-9))
    if isinstance(g, Arc3) and g.is_full_circle:
        s = np.arange(n) / n
    else:
        s = np.linspace(0.0, 1.0, n + 1)
    pts = g.point_at(s)
    if isinstance(g, Segment3):
        pts[0] = g.a
        pts[-1] = g.b
    return pts


@lru_cache(maxsize=64)
def sampled_elements(model: PitchModel, spacing: float) -> dict[str, np.ndarray]:
    out = {}
    for e in model.elements:
        pts = sample_element(e, spacing)
        pts.flags.writeable = False
        out[e.name] = pts
    return out


def catalogue_table(model: PitchModel) -> list[dict]:
    """Rows for the keypoint/line reference table (JSON-serializable)."""
    rows = [
        {"kind": "keypoint", "id": kp.id, "position": list(kp.position), "description": kp.description}
        for kp in keypoint_catalogue(model)
    ]
    for e in model.elements:
        g = e.geometry
        if isinstance(g, Segment3):
            rows.append({"kind": "line", "name": e.name, "a": list(g.a), "b": list(g.b)})
        else:
            rows.append(
                {"kind": "arc", "name": e.name, "center": list(g.center), "radius": g.radius,
                 "start": g.start, "end": g.end}
            )
    return rows


def mirror_name(name: str, axis: str) -> str:
    """Element name after reflecting the pitch through x=0 (``"x"``) or y=0 (``"y"``)."""
    swaps = {"x": [("left", "right")], "y": [("top", "bottom")]}[axis]
    if axis == "y" and name.startswith("Goal") and "post" in name:
        swaps = [("post left", "post right")]
    if axis == "x" and name.startswith("Goal") and "post" in name:
        swaps = [("Goal left", "Goal right"), ("post left", "post right")]
    out = name
    for a, b in swaps:
        out = out.replace(a, "\0").replace(b, a).replace("\0", b)
    return out
