"""BEV query grid, SD-map fusion, instance decoding heads (areas via closed
anchor chains, lane segments as centerline + boundary triples), the
auxiliary BEV segmentation head, and both topology heads.

There is no camera branch: the BEV grid is a learnable query field that the
map prior is fused into, which keeps the rest of the decoding stack intact
at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import (DEFAULT_N_POINTS, EncodingConfig, build_graph_vector,
                       sincos_encode_points)
from .map_encoder import MapEncoderConfig, encode_map_t, init_map_encoder
from .nn import (Params, Tensor, concat, cross_attention_block, gelu,
                 init_cross_attention_block, init_linear, init_mlp, linear,
                 mlp, reshape)
from .scene import (IMAGE_HEIGHT, IMAGE_WIDTH, TRAFFIC_CLASS_COUNT, Scene,
                    SceneValidationError, TrafficElement, crop_local_view,
                    resample_points)

# sincos banks for topology-head geometry: BEV endpoints and normalized boxes
TOPO_POINT_ENC = EncodingConfig(K=4, L=100.0, C=1)
TOPO_BOX_ENC = EncodingConfig(K=4, L=1.0, C=1)


@dataclass(frozen=True)
class ModelConfig:
    d_hidden: int = 64
    heads: int = 4
    extent: tuple[float, float] = (50.0, 25.0)
    bev_resolution: float = 1.0
    n_area_queries: int = 20
    n_lane_queries: int = 30
    dec_layers: int = 2
    n_area_points: int = 20       # points per closed area chain
    n_lane_points: int = 10       # points per lane polyline
    area_classes: int = 2         # pedestrian crossing, road boundary
    lane_classes: int = 1
    n_map_points: int = DEFAULT_N_POINTS
    encoder_layers: int = 2
    ffn_mult: int = 2
    sdmap_fusion: bool = True

    @property
    def bev_nx(self) -> int:
        return int(round(2 * self.extent[0] / self.bev_resolution))

    @property
    def bev_ny(self) -> int:
        return int(round(2 * self.extent[1] / self.bev_resolution))

    @property
    def n_cells(self) -> int:
        return self.bev_nx * self.bev_ny

    def encoder_config(self) -> MapEncoderConfig:
        return MapEncoderConfig(
            d_hidden=self.d_hidden, layers=self.encoder_layers,
            heads=self.heads, n_points=self.n_map_points,
            d_point=EncodingConfig().d_point, ffn_mult=self.ffn_mult)


@dataclass
class ModelOutput:
    """One scene's forward pass; Tensors stay on the tape for training."""

    area_chains: Tensor       # (n_area_q, N_a, 2), closed rings
    area_logits: Tensor       # (n_area_q, area_classes + 1)
    area_feats: Tensor        # (n_area_q, D_h)
    lane_points: Tensor       # (n_lane_q, 3, N_s, 2): center, left, right
    lane_logits: Tensor       # (n_lane_q, lane_classes + 1)
    lane_feats: Tensor        # (n_lane_q, D_h)
    aux_logits: Tensor        # (n_cells,)
    ll_logits: Tensor         # (n_lane_q, n_lane_q)
    lt_logits: Tensor         # (n_lane_q, M)
    traffic_boxes: tuple[TrafficElement, ...]  # the boxes lt_logits refers to


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    params = init_map_encoder(cfg.encoder_config(), rng)
    d = cfg.d_hidden
    ex, ey = cfg.extent

    params["bev.queries"] = Tensor(rng.normal(0.0, 0.02, size=(cfg.n_cells, d)),
                                   requires_grad=True)
    init_cross_attention_block(params, "fuse", d, rng)

    for head, n_q in (("area", cfg.n_area_queries), ("lane", cfg.n_lane_queries)):
        params[f"{head}_dec.queries"] = Tensor(
            rng.normal(0.0, 0.02, size=(n_q, d)), requires_grad=True)
        for i in range(cfg.dec_layers):
            init_cross_attention_block(params, f"{head}_dec.block{i}.cross", d, rng)
            init_linear(params, f"{head}_dec.block{i}.ff1", d, cfg.ffn_mult * d, rng)
            init_linear(params, f"{head}_dec.block{i}.ff2", cfg.ffn_mult * d, d, rng)

    # anchors: area rings around random centers, lane triples along random lines
    params["area_head.anchor"] = Tensor(
        _ring_anchors(rng, cfg.n_area_queries, cfg.n_area_points, ex, ey),
        requires_grad=True)
    init_mlp(params, "area_head.offset", [d, d, cfg.n_area_points * 2], rng)
    init_mlp(params, "area_head.cls", [d, d, cfg.area_classes + 1], rng)

    params["lane_head.anchor"] = Tensor(
        _lane_anchors(rng, cfg.n_lane_queries, cfg.n_lane_points, ex, ey),
        requires_grad=True)
    init_mlp(params, "lane_head.offset", [d, d, 3 * cfg.n_lane_points * 2], rng)
    init_mlp(params, "lane_head.cls", [d, d, cfg.lane_classes + 1], rng)

    init_mlp(params, "aux_seg", [d, d, 1], rng)

    d_pt = TOPO_POINT_ENC.d_pos
    init_mlp(params, "topo_ll", [2 * d + 2 * d_pt, d, 1], rng)
    d_box = 2 * TOPO_BOX_ENC.d_pos
    init_mlp(params, "topo_lt", [d + d_box + TRAFFIC_CLASS_COUNT, d, 1], rng)
    return params


def _ring_anchors(rng, n_q, n_pts, ex, ey):
    centers = np.column_stack([rng.uniform(-ex * 0.8, ex * 0.8, n_q),
                               rng.uniform(-ey * 0.8, ey * 0.8, n_q)])
    theta = np.linspace(0, 2 * np.pi, n_pts, endpoint=False)
    circle = np.column_stack([np.cos(theta), np.sin(theta)]) * 3.0
    return centers[:, None, :] + circle[None, :, :]


def _lane_anchors(rng, n_q, n_pts, ex, ey):
    anchors = np.zeros((n_q, 3, n_pts, 2))
    for i in range(n_q):
        x0 = rng.uniform(-ex * 0.9, 0.0)
        x1 = x0 + rng.uniform(20.0, ex)
        y = rng.uniform(-ey * 0.8, ey * 0.8)
        h = rng.uniform(-0.2, 0.2)
        xs = np.linspace(x0, min(x1, ex), n_pts)
        ys = y + (xs - x0) * np.tan(h)
        center = np.column_stack([xs, ys])
        anchors[i, 0] = center
        anchors[i, 1] = center + [0.0, 1.75]
        anchors[i, 2] = center - [0.0, 1.75]
    return anchors


def fuse_sdmap(bev: Tensor, map_feature: Tensor, params: Params,
               cfg: ModelConfig) -> Tensor:
    """Cross-attend BEV queries to map tokens; identity when the view is empty."""
    if map_feature.shape[0] == 0:
        return bev
    return cross_attention_block(bev, map_feature, params, "fuse", cfg.heads)


def _decode_queries(bev: Tensor, params: Params, head: str,
                    cfg: ModelConfig) -> Tensor:
    q = params[f"{head}_dec.queries"]
    for i in range(cfg.dec_layers):
        pre = f"{head}_dec.block{i}"
        q = cross_attention_block(q, bev, params, f"{pre}.cross", cfg.heads)
        h = gelu(linear(q, params, f"{pre}.ff1"))
        q = q + linear(h, params, f"{pre}.ff2")
    return q


def decode_areas(bev: Tensor, params: Params, cfg: ModelConfig):
    feats = _decode_queries(bev, params, "area", cfg)
    offsets = reshape(mlp(feats, params, "area_head.offset", 2),
                      (cfg.n_area_queries, cfg.n_area_points, 2))
    chains = params["area_head.anchor"] + offsets
    logits = mlp(feats, params, "area_head.cls", 2)
    return chains, logits, feats


def decode_lanesegments(bev: Tensor, params: Params, cfg: ModelConfig):
    feats = _decode_queries(bev, params, "lane", cfg)
    offsets = reshape(mlp(feats, params, "lane_head.offset", 2),
                      (cfg.n_lane_queries, 3, cfg.n_lane_points, 2))
    points = params["lane_head.anchor"] + offsets
    logits = mlp(feats, params, "lane_head.cls", 2)
    return points, logits, feats


def aux_bev_segmentation(bev: Tensor, params: Params) -> Tensor:
    return reshape(mlp(bev, params, "aux_seg", 2), (bev.shape[0],))


def topology_ll(feats: Tensor, endpoints: np.ndarray, params: Params) -> Tensor:
    """Pairwise lane-connectivity logits.

    ``endpoints``: (N, 2, 2) array of each instance's [end, start] points
    (detached geometry).  Pair (i, j) consumes [f_i, f_j, enc(end_i),
    enc(start_j)].
    """
    n = feats.shape[0]
    if n == 0:
        return Tensor(np.zeros((0, 0)))
    end_enc = sincos_encode_points(endpoints[:, 0], TOPO_POINT_ENC)
    start_enc = sincos_encode_points(endpoints[:, 1], TOPO_POINT_ENC)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.reshape(-1), jj.reshape(-1)
    pair_in = concat([feats[ii], feats[jj],
                      Tensor(end_enc[ii]), Tensor(start_enc[jj])], axis=-1)
    logits = mlp(pair_in, params, "topo_ll", 2)
    return reshape(logits, (n, n))


def encode_traffic_boxes(boxes: tuple[TrafficElement, ...]) -> np.ndarray:
    """Normalized-corner sincos encoding + class one-hot, (M, 2*4K + 13)."""
    m = len(boxes)
    d = 2 * TOPO_BOX_ENC.d_pos + TRAFFIC_CLASS_COUNT
    out = np.zeros((m, d))
    for t, te in enumerate(boxes):
        x0, y0, x1, y1 = te.bbox
        corners = np.array([[x0 / IMAGE_WIDTH, y0 / IMAGE_HEIGHT],
                            [x1 / IMAGE_WIDTH, y1 / IMAGE_HEIGHT]])
        if (corners < 0).any() or (corners > 1).any():
            raise SceneValidationError(f"bbox {te.bbox} outside image plane")
        enc = sincos_encode_points(corners, TOPO_BOX_ENC).reshape(-1)
        out[t, :enc.size] = enc
        out[t, enc.size + te.class_id] = 1.0
    return out


def topology_lt(feats: Tensor, boxes: tuple[TrafficElement, ...],
                params: Params) -> Tensor:
    n, m = feats.shape[0], len(boxes)
    if n == 0 or m == 0:
        return Tensor(np.zeros((n, m)))
    box_enc = encode_traffic_boxes(boxes)
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    ii, jj = ii.reshape(-1), jj.reshape(-1)
    pair_in = concat([feats[ii], Tensor(box_enc[jj])], axis=-1)
    logits = mlp(pair_in, params, "topo_lt", 2)
    return reshape(logits, (n, m))


def forward_scene(scene: Scene, params: Params, cfg: ModelConfig,
                  traffic_boxes: tuple[TrafficElement, ...] | None = None,
                  enc_cfg: EncodingConfig = EncodingConfig()) -> ModelOutput:
    """Full forward pass on one scene.

    ``traffic_boxes`` overrides the boxes fed to the lane-traffic topology
    head (external detections); defaults to the scene's ground-truth boxes.
    """
    view = crop_local_view(scene.sd_map, scene.ego, cfg.extent)
    gv = build_graph_vector(view, enc_cfg, cfg.n_map_points)
    bev = params["bev.queries"]
    if cfg.sdmap_fusion and gv.n_lines > 0:
        mf = encode_map_t(gv.data, cfg.encoder_config(), params)
        bev = fuse_sdmap(bev, mf, params, cfg)
    area_chains, area_logits, area_feats = decode_areas(bev, params, cfg)
    lane_points, lane_logits, lane_feats = decode_lanesegments(bev, params, cfg)
    aux = aux_bev_segmentation(bev, params)

    centers = lane_points.data[:, 0]  # (n_q, N_s, 2), detached geometry
    endpoints = np.stack([centers[:, -1], centers[:, 0]], axis=1)
    ll = topology_ll(lane_feats, endpoints, params)
    boxes = scene.traffic_elements if traffic_boxes is None else tuple(traffic_boxes)
    lt = topology_lt(lane_feats, boxes, params)
    return ModelOutput(area_chains, area_logits, area_feats,
                       lane_points, lane_logits, lane_feats,
                       aux, ll, lt, boxes)


# ---------------------------------------------------------------------------
# auxiliary segmentation target

def rasterize_bev_target(scene: Scene, cfg: ModelConfig) -> np.ndarray:
    """Foreground occupancy per BEV cell, flattened iy-major.

    A cell is foreground when a lane centerline/boundary sample point
    (arc-length step = half a cell) lands in it, or its center lies inside
    an area ring.
    """
    ex, ey = cfg.extent
    res = cfg.bev_resolution
    nx, ny = cfg.bev_nx, cfg.bev_ny
    grid = np.zeros((ny, nx), dtype=bool)

    step = res / 2.0
    for ls in scene.lane_segments:
        for poly in (ls.centerline, ls.left_boundary, ls.right_boundary):
            length = poly.arc_length()
            n = max(int(np.ceil(length / step)) + 1, 2)
            for x, y in resample_points(poly.points, n):
                ix = int(np.floor((x + ex) / res))
                iy = int(np.floor((y + ey) / res))
                if 0 <= ix < nx and 0 <= iy < ny:
                    grid[iy, ix] = True

    if scene.areas:
        cx = -ex + (np.arange(nx) + 0.5) * res
        cy = -ey + (np.arange(ny) + 0.5) * res
        xx, yy = np.meshgrid(cx, cy)
        centers = np.column_stack([xx.reshape(-1), yy.reshape(-1)])
        for area in scene.areas:
            inside = points_in_ring(centers, area.boundary)
            grid |= inside.reshape(ny, nx)
    return grid.reshape(-1).astype(np.float64)


def points_in_ring(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


def ingest_external_detections(path: str | Path) -> tuple[TrafficElement, ...]:
    """Load one frame's detection file: JSON array of bbox/class_id/score."""
    import json
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SceneValidationError(f"malformed detection file {path}: {e}") from e
    if not isinstance(entries, list):
        raise SceneValidationError("detection file must be a JSON array")
    out = []
    for e in entries:
        try:
            out.append(TrafficElement(tuple(float(v) for v in e["bbox"]),
                                      int(e["class_id"]), float(e["score"])))
        except (KeyError, TypeError) as err:
            raise SceneValidationError(f"bad detection entry {e!r}") from err
    return tuple(out)


def export_detections(boxes: tuple[TrafficElement, ...], path: str | Path) -> None:
    import json
    payload = [{"bbox": [float(f"{v:.9g}") for v in te.bbox],
                "class_id": te.class_id, "score": float(f"{te.score:.9g}")}
               for te in boxes]
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def collect_trainable(params: Params, topology_only: bool = False) -> set[str]:
    if not topology_only:
        return set(params)
    return {k for k in params if k.startswith(("topo_ll", "topo_lt"))}
