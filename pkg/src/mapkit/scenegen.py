"""Deterministic synthetic scene generation.

Scenes are built from "corridors": smooth constant-curvature paths crossed
by the ego window, cut into connected lane segments.  The SD map is derived
from the centerlines by degradation (subsampling + Gaussian jitter), which
mirrors the coarse-prior vs HD-truth relationship and makes the map-fusion
ablation meaningful.

All randomness flows through numpy's PCG64 so a (seed, cfg) pair yields
byte-identical corpora across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import (EPS_CONN, IMAGE_HEIGHT, IMAGE_WIDTH, ROAD_CLASS_COUNT,
                    TRAFFIC_CLASS_COUNT, AreaInstance, LaneSegment, Polyline,
                    Pose2D, Scene, SDMap, TrafficElement, write_scene)

LANE_HALF_WIDTH = 1.75

# skewed class frequencies: the tail classes are deliberately scarce to
# exercise resampling weights
TRAFFIC_CLASS_PROBS = np.array(
    [0.20, 0.15, 0.12, 0.10, 0.09, 0.08, 0.07, 0.06, 0.05, 0.04,
     0.02, 0.012, 0.008])
assert abs(TRAFFIC_CLASS_PROBS.sum() - 1.0) < 1e-12
assert len(TRAFFIC_CLASS_PROBS) == TRAFFIC_CLASS_COUNT


@dataclass(frozen=True)
class GenConfig:
    n_scenes: int = 20
    lanes_min: int = 2
    lanes_max: int = 6
    area_prob: float = 0.8
    traffic_min: int = 1
    traffic_max: int = 4
    sdmap_sigma: float = 0.5
    sdmap_stride: int = 2
    extent_x: float = 50.0
    extent_y: float = 25.0

    def __post_init__(self):
        if self.lanes_min > self.lanes_max or self.lanes_min < 0:
            raise ValueError("invalid lane count range")
        if self.traffic_min > self.traffic_max or self.traffic_min < 0:
            raise ValueError("invalid traffic element count range")
        if self.sdmap_sigma < 0:
            raise ValueError("sdmap_sigma must be >= 0")
        if self.sdmap_stride < 1:
            raise ValueError("sdmap_stride must be >= 1")
        if not 0.0 <= self.area_prob <= 1.0:
            raise ValueError("area_prob must be in [0, 1]")


def _corridor_path(rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    """Constant-curvature path crossing the window left to right."""
    step = 4.0
    length = rng.uniform(60.0, 90.0)
    n = max(int(length / step), 4)
    x0 = -cfg.extent_x + rng.uniform(2.0, 8.0)
    y0 = rng.uniform(-cfg.extent_y + 7.0, cfg.extent_y - 7.0)
    heading = rng.uniform(-0.15, 0.15)
    curvature = rng.uniform(-0.004, 0.004)
    pts = [np.array([x0, y0])]
    h = heading
    for _ in range(n - 1):
        h += curvature * step
        nxt = pts[-1] + step * np.array([math.cos(h), math.sin(h)])
        # keep the path from drifting out of the window laterally
        if abs(nxt[1]) > cfg.extent_y - 3.0:
            h = -0.3 * math.copysign(1.0, nxt[1])
            nxt = pts[-1] + step * np.array([math.cos(h), math.sin(h)])
        pts.append(nxt)
    return np.array(pts)


def _offset(path: np.ndarray, dist: float) -> np.ndarray:
    """Offset a path along its per-point normal."""
    tangents = np.gradient(path, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    return path + dist * normals


def _lane_from_path(path: np.ndarray, class_id: int = 0) -> LaneSegment:
    return LaneSegment(
        centerline=Polyline(path, class_id),
        left_boundary=Polyline(_offset(path, LANE_HALF_WIDTH), class_id),
        right_boundary=Polyline(_offset(path, -LANE_HALF_WIDTH), class_id),
        class_id=class_id,
    )


def generate_scene(seed: int, cfg: GenConfig) -> Scene:
    rng = np.random.default_rng(np.random.PCG64(seed))
    target_lanes = int(rng.integers(cfg.lanes_min, cfg.lanes_max + 1))

    lane_paths: list[np.ndarray] = []
    edges: list[tuple[int, int]] = []
    corridor_of_lane: list[int] = []
    corridor_paths: list[np.ndarray] = []

    while len(lane_paths) < target_lanes:
        path = _corridor_path(rng, cfg)
        corridor_paths.append(path)
        cid = len(corridor_paths) - 1
        remaining = target_lanes - len(lane_paths)
        n_chunks = min(2 if len(path) >= 8 else 1, remaining)
        if n_chunks == 2:
            cut = len(path) // 2
            first = len(lane_paths)
            lane_paths.append(path[: cut + 1])
            lane_paths.append(path[cut:])
            edges.append((first, first + 1))
            corridor_of_lane += [cid, cid]
            # occasional branch off the cut point
            if remaining >= 3 and rng.random() < 0.35:
                branch = _branch_path(rng, path, cut, cfg)
                if branch is not None:
                    lane_paths.append(branch)
                    edges.append((first, first + 2))
                    corridor_of_lane.append(cid)
        else:
            lane_paths.append(path)
            corridor_of_lane.append(cid)

    lanes = tuple(_lane_from_path(p) for p in lane_paths)
    n = len(lanes)
    adj_ll = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj_ll[i, j] = True

    areas: list[AreaInstance] = []
    for cid, path in enumerate(corridor_paths):
        if rng.random() < cfg.area_prob:
            areas.append(_pedestrian_crossing(rng, path))
        if rng.random() < cfg.area_prob * 0.5:
            areas.append(_road_boundary_ring(path))

    n_te = int(rng.integers(cfg.traffic_min, cfg.traffic_max + 1)) if n > 0 else 0
    traffic: list[TrafficElement] = []
    adj_lt = np.zeros((n, n_te), dtype=bool)
    # lane association follows a fixed geometric rule: the element's
    # horizontal image position selects a lane by lateral order, so the
    # relation is learnable from box position + lane geometry
    lat_order = np.argsort([ls.centerline.points[:, 1].mean()
                            for ls in lanes], kind="stable")
    for t in range(n_te):
        te = _traffic_element(rng)
        traffic.append(te)
        adj_lt[lat_order[_lane_bin(te, n)], t] = True

    sd_map = degrade_to_sdmap_paths(
        [ls.centerline.points for ls in lanes],
        cfg.sdmap_sigma, cfg.sdmap_stride, rng)

    return Scene(sd_map, lanes, tuple(areas), tuple(traffic),
                 adj_ll, adj_lt, Pose2D(0.0, 0.0, 0.0))


def _branch_path(rng: np.random.Generator, path: np.ndarray, cut: int,
                 cfg: GenConfig):
    start = path[cut]
    t = path[cut + 1] - path[cut]
    heading = math.atan2(t[1], t[0]) + rng.uniform(0.2, 0.4) * rng.choice([-1, 1])
    step, n = 4.0, max(len(path) - cut, 4)
    pts = [start]
    for _ in range(n - 1):
        nxt = pts[-1] + step * np.array([math.cos(heading), math.sin(heading)])
        if abs(nxt[1]) > cfg.extent_y - 2.0:
            break
        pts.append(nxt)
    if len(pts) < 2:
        return None
    return np.array(pts)


def _pedestrian_crossing(rng: np.random.Generator, path: np.ndarray) -> AreaInstance:
    k = int(rng.integers(2, len(path) - 2))
    p = path[k]
    t = path[k + 1] - path[k - 1]
    t = t / np.linalg.norm(t)
    nrm = np.array([-t[1], t[0]])
    half_len, half_wid = 2.0, LANE_HALF_WIDTH + 1.0
    ring = np.array([p + half_len * t + half_wid * nrm,
                     p - half_len * t + half_wid * nrm,
                     p - half_len * t - half_wid * nrm,
                     p + half_len * t - half_wid * nrm])
    return AreaInstance(ring, class_id=0)


def _road_boundary_ring(path: np.ndarray) -> AreaInstance:
    left = _offset(path, 2 * LANE_HALF_WIDTH + 0.5)
    right = _offset(path, -(2 * LANE_HALF_WIDTH + 0.5))
    ring = np.vstack([left, right[::-1]])
    return AreaInstance(ring, class_id=1)


def _lane_bin(te: TrafficElement, n_lanes: int) -> int:
    """Bin a traffic element's horizontal image-center into lane order."""
    cx = 0.5 * (te.bbox[0] + te.bbox[2]) / IMAGE_WIDTH
    return min(int(cx * n_lanes), n_lanes - 1)


def _traffic_element(rng: np.random.Generator) -> TrafficElement:
    cid = int(rng.choice(TRAFFIC_CLASS_COUNT, p=TRAFFIC_CLASS_PROBS))
    w = float(rng.uniform(30.0, 220.0))
    h = float(rng.uniform(30.0, 220.0))
    x0 = float(rng.uniform(0.0, IMAGE_WIDTH - w))
    y0 = float(rng.uniform(0.0, IMAGE_HEIGHT - h))
    return TrafficElement((x0, y0, x0 + w, y0 + h), cid)


def degrade_to_sdmap_paths(centerlines: list[np.ndarray], sigma: float,
                           stride: int,
                           rng: np.random.Generator) -> SDMap:
    """Subsample every stride-th centerline point and jitter with N(0, sigma)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    lines = []
    for path in centerlines:
        idx = list(range(0, len(path), stride))
        if idx[-1] != len(path) - 1:
            idx.append(len(path) - 1)
        pts = path[idx].copy()
        if sigma > 0:
            pts = pts + rng.normal(0.0, sigma, size=pts.shape)
        cls = int(rng.integers(0, ROAD_CLASS_COUNT))
        lines.append(Polyline(pts, cls))
    return SDMap(tuple(lines), ROAD_CLASS_COUNT)


def degrade_to_sdmap(scene: Scene, sigma: float, stride: int,
                     seed: int = 0) -> SDMap:
    """Re-derive an SD map for an existing scene (fresh RNG stream)."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    return degrade_to_sdmap_paths([ls.centerline.points for ls in scene.lane_segments],
                                  sigma, stride, rng)


def compute_resampling_weights(scenes: list[Scene]) -> np.ndarray:
    """Per-scene weights countering traffic-class imbalance.

    weight = max over the scene's classes of 1/sqrt(class frequency),
    normalized to mean 1; scenes without traffic elements get the neutral
    pre-normalization weight 1.
    """
    if not scenes:
        raise ValueError("empty dataset")
    counts = np.zeros(TRAFFIC_CLASS_COUNT)
    for s in scenes:
        for te in s.traffic_elements:
            counts[te.class_id] += 1
    total = counts.sum()
    raw = np.ones(len(scenes))
    if total > 0:
        freq = counts / total
        for i, s in enumerate(scenes):
            classes = {te.class_id for te in s.traffic_elements}
            if classes:
                raw[i] = max(1.0 / math.sqrt(freq[c]) for c in classes)
    return raw / raw.mean()


def generate_corpus(cfg: GenConfig, out_dir: str | Path, base_seed: int = 0,
                    force: bool = False) -> Path:
    """Write cfg.n_scenes scene files plus a manifest; returns manifest path."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise FileExistsError(
            f"{manifest_path} exists; pass force=True / --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(cfg.n_scenes):
        seed = base_seed + i
        scene = generate_scene(seed, cfg)
        name = f"scene_{i:04d}.json"
        write_scene(scene, out / name)
        entries.append({"path": name, "seed": seed})
    manifest = {"n_scenes": cfg.n_scenes, "base_seed": base_seed,
                "scenes": entries}
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n",
                             encoding="utf-8")
    return manifest_path


def load_corpus(manifest_path: str | Path) -> list[Scene]:
    from .scene import load_scene
    mp = Path(manifest_path)
    manifest = json.loads(mp.read_text(encoding="utf-8"))
    return [load_scene(mp.parent / e["path"]) for e in manifest["scenes"]]
