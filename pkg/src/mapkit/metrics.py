"""Polyline distances, detection AP, topology edge AP, and the OLUS
aggregate: mean of the three DET scores and the square roots of the two
TOP scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import bbox_iou


@dataclass(frozen=True)
class MetricReport:
    det_l: float
    det_a: float
    det_t: float
    top_ll: float
    top_lt: float
    olus: float

    def csv_row(self) -> str:
        return ",".join(f"{v:.4f}" for v in
                        (self.det_l, self.det_a, self.det_t,
                         self.top_ll, self.top_lt, self.olus))

    CSV_HEADER = "det_l,det_a,det_t,top_ll,top_lt,olus"


def olus(det_l: float, det_a: float, det_t: float,
         top_ll: float, top_lt: float) -> float:
    vals = (det_l, det_a, det_t, top_ll, top_lt)
    if any(not 0.0 <= v <= 1.0 for v in vals):
        raise ValueError(f"sub-scores must lie in [0, 1], got {vals}")
    return (det_l + det_a + det_t
            + np.sqrt(top_ll) + np.sqrt(top_lt)) / 5.0


# ---------------------------------------------------------------------------
# polyline distances

def frechet_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Frechet distance via dynamic programming."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("polylines must be nonempty")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    n, m = d.shape
    ca = np.empty((n, m))
    ca[0, 0] = d[0, 0]
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]),
                           d[i, j])
    return float(ca[-1, -1])


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-point distance."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be nonempty")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


# ---------------------------------------------------------------------------
# average precision

def _average_precision(scores: np.ndarray, hits: np.ndarray,
                       n_positive: int) -> float:
    """All-point interpolated AP from per-prediction (score, hit) pairs."""
    if n_positive == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    recall = tp / n_positive
    precision = tp / np.maximum(tp + fp, 1)
    # precision envelope (non-increasing from the right)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _greedy_match(preds: list, gts: list, distance, threshold: float,
                  scores: np.ndarray) -> np.ndarray:
    """Score-ordered greedy matching; each gt is used at most once."""
    hits = np.zeros(len(preds), dtype=bool)
    used = np.zeros(len(gts), dtype=bool)
    order = np.argsort(-scores, kind="stable")
    for i in order:
        best_j, best_d = -1, np.inf
        for j, g in enumerate(gts):
            if used[j]:
                continue
            d = distance(preds[i], g)
            if d <= threshold and d < best_d:
                best_j, best_d = j, d
        if best_j >= 0:
            hits[i] = True
            used[best_j] = True
    return hits


def det_score(preds: list[tuple[np.ndarray, int, float]],
              gts: list[tuple[np.ndarray, int]],
              distance_fn, thresholds: list[float]) -> float:
    """Multi-threshold mAP over the classes present in the ground truth.

    preds: (geometry, class_id, score); gts: (geometry, class_id).
    Accumulate across scenes before calling (dataset-level AP).
    """
    if not thresholds or list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be nonempty ascending")
    classes = sorted({c for _, c in gts})
    if not classes:
        return 0.0
    aps = []
    for cls in classes:
        cls_preds = [(g, s) for g, c, s in preds if c == cls]
        cls_gts = [g for g, c in gts if c == cls]
        scores = np.array([s for _, s in cls_preds])
        geoms = [g for g, _ in cls_preds]
        per_t = []
        for t in thresholds:
            hits = _greedy_match(geoms, cls_gts, distance_fn, t, scores)
            per_t.append(_average_precision(scores, hits, len(cls_gts)))
        aps.append(float(np.mean(per_t)))
    return float(np.mean(aps))


def det_t_score(preds: list[tuple[tuple, int, float]],
                gts: list[tuple[tuple, int]],
                iou_threshold: float = 0.5) -> float:
    """Traffic-element AP: bbox IoU >= threshold as the match criterion."""
    def neg_iou(a, b):
        return -bbox_iou(a, b)
    return det_score(preds, gts, neg_iou, [-iou_threshold])


def top_score(edges: list[tuple[float, bool]], n_unrecoverable: int) -> float:
    """Edge AP over (probability, gt-label) pairs.

    ``n_unrecoverable`` counts gt edges lost to unmatched instances; they
    cap recall below 1.  Zero gt edges scores 0.
    """
    n_pos = sum(1 for _, lab in edges if lab) + n_unrecoverable
    if n_pos == 0:
        return 0.0
    probs = np.array([p for p, _ in edges])
    labels = np.array([lab for _, lab in edges], dtype=bool)
    return _average_precision(probs, labels, n_pos)


def project_topology(pred_adj: np.ndarray, gt_adj: np.ndarray,
                     matching: dict[int, int],
                     col_matching: dict[int, int] | None = None,
                     skip_diagonal: bool = True
                     ) -> tuple[list[tuple[float, bool]], int]:
    """Project gt edges through an instance matching.

    Returns (edge list of (prob, label), unrecoverable gt edge count).
    Rows of pred_adj are matched by ``matching`` (pred index -> gt index);
    columns by ``col_matching`` (defaults to ``matching``).
    """
    if col_matching is None:
        col_matching = matching
    n, m = pred_adj.shape
    edges = []
    covered = np.zeros_like(gt_adj, dtype=bool)
    for i in range(n):
        for j in range(m):
            if skip_diagonal and i == j and pred_adj.shape[0] == pred_adj.shape[1]:
                continue
            a, b = matching.get(i), col_matching.get(j)
            if a is None or b is None:
                label = False
            else:
                label = bool(gt_adj[a, b])
                covered[a, b] = True
            edges.append((float(pred_adj[i, j]), label))
    unrecoverable = int(gt_adj.sum() - (gt_adj & covered).sum())
    return edges, unrecoverable


# ---------------------------------------------------------------------------
# dataset evaluation

DET_L_THRESHOLDS = [1.0, 2.0, 3.0]
DET_A_THRESHOLDS = [0.5, 1.0, 1.5]
DET_T_IOU = 0.5


@dataclass
class ScenePrediction:
    """Model outputs for one scene, detached into numpy."""

    lane_centerlines: list[np.ndarray]
    lane_classes: list[int]
    lane_scores: list[float]
    area_rings: list[np.ndarray]
    area_classes: list[int]
    area_scores: list[float]
    traffic_boxes: list[tuple]
    traffic_classes: list[int]
    traffic_scores: list[float]
    adj_ll: np.ndarray  # (n_lanes_pred, n_lanes_pred) probabilities
    adj_lt: np.ndarray  # (n_lanes_pred, n_boxes) probabilities


def evaluate(scenes: list, predictions: list[ScenePrediction]) -> MetricReport:
    """Dataset-level evaluation: matches accumulate across scenes before AP."""
    if len(scenes) != len(predictions):
        raise ValueError(f"{len(scenes)} scenes vs {len(predictions)} predictions")

    lane_preds, lane_gts = [], []
    area_preds, area_gts = [], []
    box_preds, box_gts = [], []
    ll_edges, ll_unrec = [], 0
    lt_edges, lt_unrec = [], 0

    for scene, pred in zip(scenes, predictions):
        gt_centers = [ls.centerline.points for ls in scene.lane_segments]
        lane_gts += [(g, ls.class_id) for g, ls in
                     zip(gt_centers, scene.lane_segments)]
        lane_preds += [(g, c, s) for g, c, s in
                       zip(pred.lane_centerlines, pred.lane_classes,
                           pred.lane_scores)]
        area_gts += [(a.boundary, a.class_id) for a in scene.areas]
        area_preds += [(g, c, s) for g, c, s in
                       zip(pred.area_rings, pred.area_classes,
                           pred.area_scores)]
        box_gts += [(te.bbox, te.class_id) for te in scene.traffic_elements]
        box_preds += [(b, c, s) for b, c, s in
                      zip(pred.traffic_boxes, pred.traffic_classes,
                          pred.traffic_scores)]

        # per-scene instance matching for topology projection
        lane_match = _match_instances(
            pred.lane_centerlines, pred.lane_classes, pred.lane_scores,
            gt_centers, [ls.class_id for ls in scene.lane_segments],
            frechet_distance, max(DET_L_THRESHOLDS))
        box_match = _match_instances(
            pred.traffic_boxes, pred.traffic_classes, pred.traffic_scores,
            [te.bbox for te in scene.traffic_elements],
            [te.class_id for te in scene.traffic_elements],
            lambda a, b: -bbox_iou(a, b), -DET_T_IOU)
        e, u = project_topology(pred.adj_ll, scene.adj_ll, lane_match)
        ll_edges += e
        ll_unrec += u
        e, u = project_topology(pred.adj_lt, scene.adj_lt, lane_match,
                                col_matching=box_match, skip_diagonal=False)
        lt_edges += e
        lt_unrec += u

    det_l = det_score(lane_preds, lane_gts, frechet_distance, DET_L_THRESHOLDS)
    det_a = det_score(area_preds, area_gts, chamfer_distance, DET_A_THRESHOLDS)
    det_t = det_t_score(box_preds, box_gts, DET_T_IOU)
    top_ll = top_score(ll_edges, ll_unrec)
    top_lt = top_score(lt_edges, lt_unrec)
    return MetricReport(det_l, det_a, det_t, top_ll, top_lt,
                        olus(det_l, det_a, det_t, top_ll, top_lt))


def _match_instances(pred_geoms, pred_classes, pred_scores, gt_geoms,
                     gt_classes, distance, threshold) -> dict[int, int]:
    """Score-ordered greedy class-aware matching; pred index -> gt index."""
    match: dict[int, int] = {}
    used = set()
    order = np.argsort(-np.asarray(pred_scores, dtype=float), kind="stable")
    for i in order:
        best_j, best_d = -1, np.inf
        for j, g in enumerate(gt_geoms):
            if j in used or gt_classes[j] != pred_classes[i]:
                continue
            d = distance(pred_geoms[i], g)
            if d <= threshold and d < best_d:
                best_j, best_d = j, d
        if best_j >= 0:
            match[int(i)] = best_j
            used.add(best_j)
    return match
