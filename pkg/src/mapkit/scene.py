"""Domain types for maps, scenes and poses, plus scene-file ingestion,
ego-aligned cropping, and arc-length resampling.

All types are frozen dataclasses: immutable after construction and safe to
share across threads.  Coordinates are meters, traffic-element boxes are
pixels in a virtual 2480x1550 image plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# virtual image plane for traffic elements (width x height in pixels)
IMAGE_WIDTH = 2480.0
IMAGE_HEIGHT = 1550.0
TRAFFIC_CLASS_COUNT = 13

# SD-map road taxonomy
ROAD_CLASSES = ("motorway", "trunk", "primary", "secondary",
                "residential", "service", "pedestrian")
ROAD_CLASS_COUNT = len(ROAD_CLASSES)

# lane endpoints closer than this are connected in adj_ll
EPS_CONN = 0.5

DEFAULT_EXTENT = (50.0, 25.0)

_MIN_POINT_GAP = 1e-9


class SceneValidationError(ValueError):
    """A scene or one of its members violates a structural invariant."""


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.yaw)):
            raise SceneValidationError("Pose2D fields must be finite")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray  # (n, 2) float64
    class_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise SceneValidationError(f"polyline points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise SceneValidationError("polyline needs at least 2 points")
        if not np.isfinite(pts).all():
            raise SceneValidationError("polyline contains non-finite coordinates")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if (seg <= _MIN_POINT_GAP).any():
            raise SceneValidationError("polyline has consecutive duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True)
class SDMap:
    lines: tuple[Polyline, ...]
    class_count: int = ROAD_CLASS_COUNT

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for ln in self.lines:
            if not (0 <= ln.class_id < self.class_count):
                raise SceneValidationError(
                    f"line class_id {ln.class_id} outside [0, {self.class_count})")


@dataclass(frozen=True)
class LaneSegment:
    centerline: Polyline
    left_boundary: Polyline
    right_boundary: Polyline
    class_id: int = 0


@dataclass(frozen=True)
class AreaInstance:
    """Closed ring; first vertex not repeated at the end."""

    boundary: np.ndarray  # (n, 2)
    class_id: int  # 0 = pedestrian crossing, 1 = road boundary

    def __post_init__(self):
        ring = np.asarray(self.boundary, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 3:
            raise SceneValidationError("area ring needs at least 3 (x, y) vertices")
        if not np.isfinite(ring).all():
            raise SceneValidationError("area ring contains non-finite coordinates")
        if np.linalg.norm(ring[0] - ring[-1]) <= _MIN_POINT_GAP:
            raise SceneValidationError("area ring must not duplicate its first vertex")
        if abs(signed_area(ring)) < 1e-12:
            raise SceneValidationError("area ring has zero signed area")
        ring.setflags(write=False)
        object.__setattr__(self, "boundary", ring)


def signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class TrafficElement:
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise SceneValidationError(f"degenerate bbox {self.bbox}")
        if not (0.0 <= x0 and x1 <= IMAGE_WIDTH and 0.0 <= y0 and y1 <= IMAGE_HEIGHT):
            raise SceneValidationError(f"bbox {self.bbox} outside image plane")
        if not (0 <= self.class_id < TRAFFIC_CLASS_COUNT):
            raise SceneValidationError(f"traffic class_id {self.class_id} out of range")
        if not (0.0 <= self.score <= 1.0):
            raise SceneValidationError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Scene:
    sd_map: SDMap
    lane_segments: tuple[LaneSegment, ...]
    areas: tuple[AreaInstance, ...]
    traffic_elements: tuple[TrafficElement, ...]
    adj_ll: np.ndarray  # bool (n_lanes, n_lanes)
    adj_lt: np.ndarray  # bool (n_lanes, n_te)
    ego: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "lane_segments", tuple(self.lane_segments))
        object.__setattr__(self, "areas", tuple(self.areas))
        object.__setattr__(self, "traffic_elements", tuple(self.traffic_elements))
        n, m = len(self.lane_segments), len(self.traffic_elements)
        adj_ll = np.asarray(self.adj_ll, dtype=bool)
        if adj_ll.size == 0 and n == 0:
            adj_ll = adj_ll.reshape(0, 0)
        adj_lt = np.asarray(self.adj_lt, dtype=bool)
        if adj_ll.shape != (n, n):
            raise SceneValidationError(
                f"adj_ll shape {np.asarray(self.adj_ll).shape} != ({n}, {n})")
        if adj_lt.shape != (n, m):
            if not (adj_lt.size == 0 and n * m == 0):
                raise SceneValidationError(
                    f"adj_lt shape {adj_lt.shape} != ({n}, {m})")
            adj_lt = adj_lt.reshape(n, m)
        if n > 0 and adj_ll.diagonal().any():
            raise SceneValidationError("adj_ll diagonal must be false")
        for i, j in zip(*np.nonzero(adj_ll)):
            tail = self.lane_segments[i].centerline.points[-1]
            head = self.lane_segments[j].centerline.points[0]
            if np.linalg.norm(tail - head) > EPS_CONN:
                raise SceneValidationError(
                    f"adj_ll[{i}][{j}] set but endpoints are "
                    f"{np.linalg.norm(tail - head):.3f} m apart (> {EPS_CONN})")
        adj_ll.setflags(write=False)
        adj_lt.setflags(write=False)
        object.__setattr__(self, "adj_ll", adj_ll)
        object.__setattr__(self, "adj_lt", adj_lt)


@dataclass(frozen=True)
class LocalView:
    lines: tuple[Polyline, ...]
    extent: tuple[float, float]  # (E_x, E_y): window is [-E_x, E_x] x [-E_y, E_y]

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        ex, ey = self.extent
        tol = 1e-6
        for ln in self.lines:
            p = ln.points
            if (np.abs(p[:, 0]) > ex + tol).any() or (np.abs(p[:, 1]) > ey + tol).any():
                raise SceneValidationError("local-view point outside extent")


# ---------------------------------------------------------------------------
# geometry operations

def transform_to_ego(points: np.ndarray, ego: Pose2D) -> np.ndarray:
    """World -> ego frame: translate by -(x, y), then rotate by -yaw."""
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    shifted = points - np.array([ego.x, ego.y])
    rot = np.array([[c, s], [-s, c]])
    return shifted @ rot.T


def _clip_segment_to_box(p: np.ndarray, q: np.ndarray, ex: float, ey: float):
    """Liang-Barsky clip of segment p->q against [-ex, ex] x [-ey, ey].

    Returns (t0, t1) parameters of the surviving sub-segment, or None.
    """
    d = q - p
    t0, t1 = 0.0, 1.0
    for dim, bound in ((0, ex), (1, ey)):
        for sign in (1.0, -1.0):
            # inside condition: sign * coord <= bound
            denom = sign * d[dim]
            num = bound - sign * p[dim]
            if abs(denom) < 1e-15:
                if num < 0:
                    return None
            else:
                t = num / denom
                if denom > 0:
                    t1 = min(t1, t)
                else:
                    t0 = max(t0, t)
            if t0 > t1:
                return None
    return t0, t1


def crop_local_view(sd_map: SDMap, ego: Pose2D,
                    extent: tuple[float, float] = DEFAULT_EXTENT) -> LocalView:
    """Crop the map to an ego-aligned axis window.

    Lines crossing the window boundary are split into separate in-window
    pieces; pieces with fewer than 2 points are dropped.
    """
    ex, ey = extent
    if ex <= 0 or ey <= 0:
        raise ValueError("extent must be positive")
    out: list[Polyline] = []
    for line in sd_map.lines:
        pts = transform_to_ego(line.points, ego)
        run: list[np.ndarray] = []
        for a, b in zip(pts[:-1], pts[1:]):
            clip = _clip_segment_to_box(a, b, ex, ey)
            if clip is None:
                _flush_run(run, out, line.class_id)
                continue
            t0, t1 = clip
            pa = a + t0 * (b - a)
            pb = a + t1 * (b - a)
            if np.linalg.norm(pb - pa) <= _MIN_POINT_GAP:
                continue
            if run and np.linalg.norm(run[-1] - pa) <= _MIN_POINT_GAP:
                run.append(pb)
            else:
                _flush_run(run, out, line.class_id)
                run = [pa, pb]
            if t1 < 1.0:  # exits the window: close this piece
                _flush_run(run, out, line.class_id)
                run = []
        _flush_run(run, out, line.class_id)
    return LocalView(tuple(out), extent)


def _flush_run(run: list[np.ndarray], out: list[Polyline], class_id: int) -> None:
    if len(run) >= 2:
        out.append(Polyline(np.array(run), class_id))
    run.clear()


def resample_polyline(line: Polyline, n: int) -> Polyline:
    """Place n points at equal arc-length spacing; endpoints preserved."""
    if n < 2:
        raise ValueError(f"resample target must be >= 2, got {n}")
    pts = resample_points(line.points, n)
    return Polyline(pts, line.class_id)


def resample_points(pts: np.ndarray, n: int) -> np.ndarray:
    """Equal arc-length resampling of an open point chain to n points."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        raise ValueError("cannot resample a zero-length chain")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, 2))
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    t = (targets - cum[idx]) / seg[idx]
    out = pts[idx] + t[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_ring(ring: np.ndarray, n: int) -> np.ndarray:
    """Equal arc-length resampling of a closed ring to n points (start kept,
    closure implicit: the n-th point stops one step short of the start)."""
    closed = np.vstack([ring, ring[0]])
    dense = resample_points(closed, n + 1)
    return dense[:-1]


# ---------------------------------------------------------------------------
# scene file IO (schema shared with the generator)

def _polyline_to_json(line: Polyline) -> dict:
    return {"points": _round_pts(line.points), "class_id": int(line.class_id)}


def _round_pts(pts: np.ndarray) -> list[list[float]]:
    # 9 significant digits: lossless at the 1e-6 m geometric tolerance
    return [[float(f"{x:.9g}"), float(f"{y:.9g}")] for x, y in pts]


def _polyline_from_json(obj: dict) -> Polyline:
    return Polyline(np.asarray(obj["points"], dtype=np.float64),
                    int(obj.get("class_id", 0)))


def scene_to_json(scene: Scene) -> dict:
    return {
        "sd_map": {
            "class_count": scene.sd_map.class_count,
            "lines": [_polyline_to_json(l) for l in scene.sd_map.lines],
        },
        "lane_segments": [
            {
                "centerline": _polyline_to_json(ls.centerline),
                "left_boundary": _polyline_to_json(ls.left_boundary),
                "right_boundary": _polyline_to_json(ls.right_boundary),
                "class_id": int(ls.class_id),
            }
            for ls in scene.lane_segments
        ],
        "areas": [
            {"boundary": _round_pts(a.boundary), "class_id": int(a.class_id)}
            for a in scene.areas
        ],
        "traffic_elements": [
            {"bbox": [float(f"{v:.9g}") for v in te.bbox],
             "class_id": int(te.class_id), "score": float(f"{te.score:.9g}")}
            for te in scene.traffic_elements
        ],
        "adj_ll": scene.adj_ll.astype(int).tolist(),
        "adj_lt": scene.adj_lt.astype(int).tolist(),
        "ego": {"x": scene.ego.x, "y": scene.ego.y, "yaw": scene.ego.yaw},
    }


def scene_from_json(obj: dict) -> Scene:
    required = {"sd_map", "lane_segments", "areas", "traffic_elements",
                "adj_ll", "adj_lt", "ego"}
    missing = required - set(obj)
    if missing:
        raise SceneValidationError(f"scene file missing keys: {sorted(missing)}")
    sd = SDMap(tuple(_polyline_from_json(l) for l in obj["sd_map"]["lines"]),
               int(obj["sd_map"].get("class_count", ROAD_CLASS_COUNT)))
    lanes = tuple(
        LaneSegment(
            centerline=_polyline_from_json(ls["centerline"]),
            left_boundary=_polyline_from_json(ls["left_boundary"]),
            right_boundary=_polyline_from_json(ls["right_boundary"]),
            class_id=int(ls.get("class_id", 0)),
        )
        for ls in obj["lane_segments"]
    )
    areas = tuple(AreaInstance(np.asarray(a["boundary"], dtype=np.float64),
                               int(a["class_id"])) for a in obj["areas"])
    tes = tuple(TrafficElement(tuple(te["bbox"]), int(te["class_id"]),
                               float(te.get("score", 1.0)))
                for te in obj["traffic_elements"])
    n, m = len(lanes), len(tes)
    adj_ll = np.asarray(obj["adj_ll"], dtype=bool)
    if adj_ll.size == 0:
        adj_ll = adj_ll.reshape(0, 0) if n == 0 else adj_ll
    adj_lt = np.asarray(obj["adj_lt"], dtype=bool)
    if adj_lt.size == 0:
        adj_lt = adj_lt.reshape(n, 0) if m == 0 else adj_lt
    ego = Pose2D(float(obj["ego"]["x"]), float(obj["ego"]["y"]),
                 float(obj["ego"]["yaw"]))
    return Scene(sd, lanes, areas, tes, adj_ll, adj_lt, ego)


def load_scene(path: str | Path) -> Scene:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SceneValidationError(f"malformed scene file {path}: {e}") from e
    return scene_from_json(obj)


def write_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scene_to_json(scene), separators=(",", ":")) + "\n",
        encoding="utf-8")
