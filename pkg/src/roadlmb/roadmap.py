"""Rectangle approximation of lane reference lines.

Dense lane polylines are simplified with iterative end-point fit, each
remaining segment becomes an oriented rectangle, and rectangles are chained
through successor links. A uniform grid answers point-containment queries.
"""
from __future__ import annotations

import json
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import wrap_angle

log = logging.getLogger(__name__)

DEFAULT_LANE_WIDTH = 3.5
DEFAULT_TOLERANCE = 0.1


class InvalidPolylineError(ValueError):
    pass


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Rectangle:
    id: int
    center: tuple[float, float]
    length: float
    width: float
    orientation: float
    successors: tuple[int, ...] = ()

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise MapError(f"rectangle {self.id}: length and width must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "orientation", float(wrap_angle(self.orientation)))
        object.__setattr__(self, "successors", tuple(int(s) for s in self.successors))

    def local(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Along-lane (u) and cross-lane (w) coordinates of points in this rectangle's frame."""
        p = np.asarray(points, dtype=float)
        dx = p[..., 0] - self.center[0]
        dy = p[..., 1] - self.center[1]
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, points, eps: float = 1e-9) -> np.ndarray:
        u, w = self.local(points)
        return (np.abs(u) <= 0.5 * self.length + eps) & (np.abs(w) <= 0.5 * self.width + eps)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center)

    def bounds(self) -> tuple[float, float, float, float]:
        c = self.corners()
        return c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max()


@dataclass(frozen=True)
class RoadMap:
    """Immutable set of rectangles with a grid index over their bounding boxes.

    ``lanes`` optionally records which rectangle ids were fitted from which
    named lane, in driving order.
    """

    rectangles: Mapping[int, Rectangle]
    lanes: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        rects = dict(self.rectangles)
        for r in rects.values():
            for s in r.successors:
                if s not in rects:
                    raise MapError(f"rectangle {r.id} links to unknown successor {s}")
        object.__setattr__(self, "rectangles", rects)
        object.__setattr__(self, "lanes", {k: tuple(v) for k, v in dict(self.lanes).items()})
        preds: dict[int, list[int]] = defaultdict(list)
        for r in rects.values():
            for s in r.successors:
                preds[s].append(r.id)
        object.__setattr__(self, "_predecessors", {k: tuple(v) for k, v in preds.items()})
        self._build_index()

    @classmethod
    def from_rectangles(cls, rects: Iterable[Rectangle], lanes=None) -> "RoadMap":
        d = {}
        for r in rects:
            if r.id in d:
                raise MapError(f"duplicate rectangle id {r.id}")
            d[r.id] = r
        return cls(d, lanes or {})

    def _build_index(self):
        grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        if self.rectangles:
            cell = max(math.hypot(r.length, r.width) for r in self.rectangles.values())
        else:
            cell = 1.0
        for r in self.rectangles.values():
            x0, y0, x1, y1 = r.bounds()
            for i in range(math.floor(x0 / cell), math.floor(x1 / cell) + 1):
                for j in range(math.floor(y0 / cell), math.floor(y1 / cell) + 1):
                    grid[(i, j)].append(r.id)
        object.__setattr__(self, "_cell", cell)
        object.__setattr__(self, "_grid", dict(grid))

    def __getitem__(self, rect_id: int) -> Rectangle:
        return self.rectangles[rect_id]

    def __contains__(self, rect_id) -> bool:
        return rect_id in self.rectangles

    def __len__(self) -> int:
        return len(self.rectangles)

    def predecessors(self, rect_id: int) -> tuple[int, ...]:
        return self._predecessors.get(rect_id, ())

    def candidates(self, point) -> list[int]:
        key = (math.floor(point[0] / self._cell), math.floor(point[1] / self._cell))
        return self._grid.get(key, [])

    def rectangles_containing(self, point) -> frozenset[int]:
        """Ids of every rectangle containing ``point`` (boundary inclusive)."""
        p = (float(point[0]), float(point[1]))
        return frozenset(i for i in self.candidates(p) if self.rectangles[i].contains(p))

    def canonical(self, rect_ids: Iterable[int], heading: float) -> int | None:
        """The rectangle among ``rect_ids`` whose orientation is closest to ``heading``."""
        best, best_d = None, math.inf
        for i in sorted(rect_ids):
            d = abs(float(wrap_angle(self.rectangles[i].orientation - heading)))
            if d < best_d:
                best, best_d = i, d
        return best

    def downstream(self, start: int, max_hops: int) -> set[int]:
        """Rectangles reachable from ``start`` by at most ``max_hops`` successor links (start included)."""
        seen = {start}
        frontier = deque([(start, 0)])
        while frontier:
            rid, depth = frontier.popleft()
            if depth == max_hops:
                continue
            for s in self.rectangles[rid].successors:
                if s not in seen:
                    seen.add(s)
                    frontier.append((s, depth + 1))
        return seen

    def branches(self, rect_ids: Iterable[int], heading: float | None = None, hops: int = 5) -> list[int]:
        """Distinct driving options among overlapping rectangles.

        Rectangles whose direction differs from ``heading`` by more than 90
        degrees are ignored, and a rectangle is dropped when another member of
        the set lies within ``hops`` successor links downstream of it (short
        consecutive rectangles of one lane overlap on curves and must not
        count as a fork).
        """
        ids = set(rect_ids)
        if heading is not None:
            ids = {i for i in ids if abs(float(wrap_angle(self.rectangles[i].orientation - heading))) <= 0.5 * math.pi}
        if len(ids) < 2:
            return sorted(ids)
        return sorted(i for i in ids if not (self.downstream(i, hops) - {i}) & ids)

    def bounds(self) -> tuple[float, float, float, float]:
        b = np.array([r.bounds() for r in self.rectangles.values()])
        return b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()

    def to_dict(self) -> dict:
        return {
            "rectangles": [
                {
                    "id": r.id,
                    "center": list(r.center),
                    "length": r.length,
                    "width": r.width,
                    "orientation": r.orientation,
                    "successors": list(r.successors),
                }
                for r in sorted(self.rectangles.values(), key=lambda r: r.id)
            ],
            "lanes": {k: list(v) for k, v in self.lanes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadMap":
        rects = [
            Rectangle(r["id"], tuple(r["center"]), r["length"], r["width"], r["orientation"], tuple(r.get("successors", ())))
            for r in d["rectangles"]
        ]
        return cls.from_rectangles(rects, {k: tuple(v) for k, v in d.get("lanes", {}).items()})


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to segment ab (to a itself when the segment is degenerate)."""
    ab = b - a
    denom = ab @ ab
    if denom == 0.0:
        return np.hypot(*(points - a).T)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(points - proj).T)


def simplify_polyline(points: Sequence, tolerance: float) -> list[tuple[float, float]]:
    """Iterative end-point fit (Ramer-Douglas-Peucker).

    Splits recursively at the point farthest from the chord until every
    dropped point is within ``tolerance`` of the kept segment that spans it.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise InvalidPolylineError("a polyline needs at least two points")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _segment_distances(pts[i + 1 : j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > tolerance:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    return [tuple(p) for p in pts[keep]]


def fit_rectangles(simplified: Sequence, width: float = DEFAULT_LANE_WIDTH, id_seed: int = 0) -> list[Rectangle]:
    """One rectangle per consecutive point pair, chained by successor links."""
    pts = np.asarray(simplified, dtype=float)
    if len(pts) < 2:
        raise InvalidPolylineError("need at least two points to fit rectangles")
    specs = []
    for a, b in zip(pts[:-1], pts[1:]):
        length = float(np.hypot(*(b - a)))
        if length == 0.0:
            log.warning("skipping zero-length segment at %s", tuple(a))
            continue
        specs.append((tuple((a + b) / 2), length, math.atan2(b[1] - a[1], b[0] - a[0])))
    rects = []
    for n, (center, length, orientation) in enumerate(specs):
        succ = (id_seed + n + 1,) if n + 1 < len(specs) else ()
        rects.append(Rectangle(id_seed + n, center, length, width, orientation, succ))
    return rects


def link_lanes(road_map: RoadMap, from_rect: int, to_rect: int) -> RoadMap:
    if from_rect not in road_map or to_rect not in road_map:
        raise MapError(f"unknown rectangle id in link {from_rect} -> {to_rect}")
    if from_rect == to_rect:
        raise MapError(f"rectangle {from_rect} cannot succeed itself")
    src = road_map[from_rect]
    if to_rect in src.successors:
        return road_map
    rects = dict(road_map.rectangles)
    rects[from_rect] = Rectangle(src.id, src.center, src.length, src.width, src.orientation, src.successors + (to_rect,))
    return RoadMap(rects, road_map.lanes)


def distance_to_exit(rect: Rectangle, point, heading: float | None = None) -> float:
    """Along-lane distance from ``point`` to the rectangle's downstream short edge.

    ``heading`` is accepted for interface symmetry; the downstream edge is fixed
    by the rectangle orientation.
    """
    if not rect.contains(point):
        raise MapError(f"point {tuple(point)} is outside rectangle {rect.id}")
    u, _ = rect.local(point)
    return float(np.clip(0.5 * rect.length - u, 0.0, rect.length))


def build_map(lanes: Mapping[str, dict], links: Iterable = (), width: float = DEFAULT_LANE_WIDTH,
              tolerance: float = DEFAULT_TOLERANCE) -> RoadMap:
    """Simplify, fit and link a set of named lanes.

    ``lanes`` maps a lane name to ``{"points": [...], "id_prefix": int, "width": ..., "tolerance": ...}``
    (width, tolerance and id_prefix optional). ``links`` holds ``(from, to)``
    pairs of rectangle ids, or lane names meaning last rectangle of ``from`` to
    first rectangle of ``to``.
    """
    rects: dict[int, Rectangle] = {}
    lane_ids: dict[str, tuple[int, ...]] = {}
    next_id = 0
    for name, spec in lanes.items():
        seed = int(spec.get("id_prefix", next_id))
        simplified = simplify_polyline(spec["points"], float(spec.get("tolerance", tolerance)))
        fitted = fit_rectangles(simplified, float(spec.get("width", width)), seed)
        for r in fitted:
            if r.id in rects:
                raise MapError(f"lane {name!r}: rectangle id {r.id} already used")
            rects[r.id] = r
        lane_ids[name] = tuple(r.id for r in fitted)
        next_id = max(rects) + 1
    road_map = RoadMap(rects, lane_ids)
    for a, b in links:
        if isinstance(a, str):
            a = lane_ids[a][-1]
        if isinstance(b, str):
            b = lane_ids[b][0]
        road_map = link_lanes(road_map, int(a), int(b))
    return road_map


def load_map(source) -> RoadMap:
    """Load a map document (path or already-parsed dict).

    Schema: ``{"width": w, "tolerance": t, "lanes": [{"id_prefix", "name"?, "width"?,
    "tolerance"?, "points": [[x, y], ...]}], "links": [[from_id, to_id], ...]}``.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except OSError as exc:
            raise MapError(f"cannot read map file {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MapError(f"map file {source} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "lanes" not in doc:
        raise MapError("map document has no 'lanes'")
    lanes = {}
    for n, lane in enumerate(doc["lanes"]):
        if "points" not in lane:
            raise MapError(f"lanes[{n}] has no 'points'")
        lanes[str(lane.get("name", lane.get("id_prefix", n)))] = lane
    return build_map(
        lanes,
        doc.get("links", ()),
        width=float(doc.get("width", DEFAULT_LANE_WIDTH)),
        tolerance=float(doc.get("tolerance", DEFAULT_TOLERANCE)),
    )
