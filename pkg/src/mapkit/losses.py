"""Bipartite matching, the point-to-point IoU loss & cost, focal
classification, topology losses, and total-loss composition.

Matching costs are computed on detached numpy geometry; the losses
themselves run through the tape so gradients flow into the heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .nn import (Tensor, clamp_min, log, sigmoid, softmax, sqrt, tmean, tsum)
from .model import ModelConfig, ModelOutput
from .scene import Scene, resample_points, resample_ring

P2P_HALF_WIDTH = 1.0  # meters


@dataclass(frozen=True)
class CostWeights:
    cls: float = 2.0
    pt: float = 5.0
    iou: float = 2.0
    topo: float = 1.0
    aux: float = 1.0

    def __post_init__(self):
        vals = (self.cls, self.pt, self.iou, self.topo, self.aux)
        if any(v < 0 for v in vals):
            raise ValueError("cost weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one cost weight must be positive")


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost assignment of min(n, m) pairs.

    Among all optimal assignments, returns the one whose pair list (sorted
    by prediction index) is lexicographically smallest; found by greedily
    fixing pairs and re-solving the remainder.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return Assignment((), 0.0)
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    n, m = cost.shape
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())

    pairs: list[tuple[int, int]] = []
    free_rows = list(range(n))
    free_cols = list(range(m))
    fixed = 0.0
    need = min(n, m)
    while len(pairs) < need:
        i = free_rows[0]
        chosen = None
        for j in free_cols:
            rem_rows = [r for r in free_rows if r != i]
            rem_cols = [c for c in free_cols if c != j]
            sub_need = need - len(pairs) - 1
            if sub_need > 0:
                sub = cost[np.ix_(rem_rows, rem_cols)]
                rr, cc = linear_sum_assignment(sub)
                sub_cost = float(sub[rr, cc].sum())
            else:
                sub_cost = 0.0
            if abs(fixed + cost[i, j] + sub_cost - best) < 1e-9:
                chosen = j
                break
        if chosen is None:
            # i stays unmatched in every optimal assignment
            free_rows.remove(i)
            continue
        pairs.append((i, chosen))
        fixed += cost[i, chosen]
        free_rows.remove(i)
        free_cols.remove(chosen)
    return Assignment(tuple(pairs), best)


# ---------------------------------------------------------------------------
# P2P IoU

def p2p_iou_np(a: np.ndarray, b: np.ndarray, w: float = P2P_HALF_WIDTH) -> float:
    """Mean per-point interval-overlap ratio max(0, 2w - d) / (2w + d)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"chain shapes differ: {a.shape} vs {b.shape}")
    if w <= 0:
        raise ValueError("half width must be positive")
    d = np.linalg.norm(a - b, axis=-1)
    return float((np.maximum(0.0, 2 * w - d) / (2 * w + d)).mean())


def p2p_iou_t(a: Tensor, b: np.ndarray, w: float = P2P_HALF_WIDTH) -> Tensor:
    """Differentiable P2P IoU of a predicted chain against a fixed target."""
    if a.shape != b.shape:
        raise ValueError(f"chain shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    d = sqrt(tsum(diff * diff, axis=-1) + 1e-12)
    from .nn import power
    return tmean(clamp_min(2 * w - d, 0.0) * power(d + 2 * w, -1.0))


def p2p_iou_loss_t(a: Tensor, b: np.ndarray, w: float = P2P_HALF_WIDTH) -> Tensor:
    return 1.0 - p2p_iou_t(a, b, w)


# ---------------------------------------------------------------------------
# chain alignment

def align_ring(pred: np.ndarray, gt_ring: np.ndarray) -> np.ndarray:
    """Best cyclic rotation of gt (both orientations) against the prediction,
    by mean point distance.  Returns the re-indexed gt ring."""
    best, best_d = None, np.inf
    for ring in (gt_ring, gt_ring[::-1]):
        n = len(ring)
        for r in range(n):
            rolled = np.roll(ring, -r, axis=0)
            d = np.linalg.norm(pred - rolled, axis=-1).mean()
            if d < best_d - 1e-12:
                best, best_d = rolled, d
    return best


def match_cost_geometry(pred_pts: np.ndarray, pred_probs: np.ndarray,
                        gt_pts: np.ndarray, gt_class: int,
                        weights: CostWeights, closed: bool) -> float:
    """cls + L1 + (1 - P2P IoU) matching cost for one pred/gt pair."""
    target = align_ring(pred_pts, gt_pts) if closed else gt_pts
    l1 = float(np.abs(pred_pts - target).sum(axis=-1).mean())
    iou = p2p_iou_np(pred_pts, target)
    return (weights.cls * (1.0 - float(pred_probs[gt_class]))
            + weights.pt * l1 + weights.iou * (1.0 - iou))


# ---------------------------------------------------------------------------
# classification / topology losses

def focal_loss(logits: Tensor, targets: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Mean focal loss over rows; ``targets`` are class indices."""
    targets = np.asarray(targets, dtype=int)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError("one target index per logit row")
    probs = softmax(logits, axis=-1)
    onehot = np.eye(c)[targets]
    pt = tsum(probs * onehot, axis=-1)
    return tmean(-alpha * _pow_t(1.0 - pt, gamma) * log(clamp_min(pt, 1e-12)))


def _pow_t(x: Tensor, gamma: float) -> Tensor:
    if gamma == 0.0:
        return Tensor(np.ones(x.shape))
    if gamma == 1.0:
        return x
    if gamma == 2.0:
        return x * x
    from .nn import power
    return power(clamp_min(x, 1e-12), gamma)


def bce_with_logits(logits: Tensor, targets: np.ndarray,
                    mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy; optional 0/1 mask selects contributing
    entries."""
    p = sigmoid(logits)
    t = np.asarray(targets, dtype=np.float64)
    terms = -(t * log(clamp_min(p, 1e-12))
              + (1.0 - t) * log(clamp_min(1.0 - p, 1e-12)))
    if mask is None:
        return tmean(terms)
    mask = np.asarray(mask, dtype=np.float64)
    denom = max(mask.sum(), 1.0)
    return tsum(terms * mask) * (1.0 / denom)


def topology_loss(logits: Tensor, gt_adj: np.ndarray,
                  assignment: dict[int, int],
                  col_assignment: dict[int, int] | None = None,
                  exclude_diagonal: bool = True) -> Tensor:
    """BCE over prediction-pair logits against the assigned gt adjacency.

    ``assignment`` maps prediction row index -> gt row index; columns use
    ``col_assignment`` when given (lane-traffic case), else ``assignment``
    (lane-lane case).  Pairs involving unmatched predictions get target 0.
    """
    n, m = logits.shape
    if col_assignment is None:
        col_assignment = assignment
    target = np.zeros((n, m))
    for i, a in assignment.items():
        for j, b in col_assignment.items():
            if j < m and i < n:
                target[i, j] = float(gt_adj[a, b])
    mask = np.ones((n, m))
    if exclude_diagonal and n == m:
        np.fill_diagonal(mask, 0.0)
    return bce_with_logits(logits, target, mask)


# ---------------------------------------------------------------------------
# total loss

@dataclass
class LossBreakdown:
    area_cls: float = 0.0
    area_pt: float = 0.0
    area_iou: float = 0.0
    lane_cls: float = 0.0
    lane_pt: float = 0.0
    lane_iou: float = 0.0
    topo_ll: float = 0.0
    topo_lt: float = 0.0
    aux: float = 0.0
    total: float = 0.0


def _head_losses(chains: Tensor, logits: Tensor, gt_targets: list[np.ndarray],
                 gt_classes: list[int], weights: CostWeights, closed: bool,
                 background: int):
    """Match one head's predictions to its ground truth and build the three
    loss terms.  Returns (cls, pt, iou) tensors plus the assignment map."""
    n_q = chains.shape[0]
    flat = chains.data.reshape(n_q, -1, 2)
    with np.errstate(over="ignore"):
        probs = _softmax_np(logits.data)
    n_gt = len(gt_targets)
    assign: dict[int, int] = {}
    if n_gt > 0:
        cost = np.zeros((n_q, n_gt))
        for i in range(n_q):
            for g in range(n_gt):
                cost[i, g] = match_cost_geometry(flat[i], probs[i],
                                                 gt_targets[g], gt_classes[g],
                                                 weights, closed)
        assign = dict(hungarian(cost).pairs)

    targets_cls = np.full(n_q, background, dtype=int)
    pt_terms, iou_terms = [], []
    for i, g in assign.items():
        targets_cls[i] = gt_classes[g]
        target = align_ring(flat[i], gt_targets[g]) if closed else gt_targets[g]
        pred = chains[i]
        from .nn import reshape as t_reshape
        pred_flat = t_reshape(pred, (int(np.prod(pred.shape[:-1])), 2))
        diff = pred_flat - target
        pt_terms.append(tmean(_abs_t(diff)))
        iou_terms.append(p2p_iou_loss_t(pred_flat, target))
    cls_loss = focal_loss(logits, targets_cls)
    if pt_terms:
        pt_loss = _mean_scalars(pt_terms)
        iou_loss = _mean_scalars(iou_terms)
    else:
        pt_loss = Tensor(np.zeros(()))
        iou_loss = Tensor(np.zeros(()))
    return cls_loss, pt_loss, iou_loss, assign


def _abs_t(x: Tensor) -> Tensor:
    return sqrt(x * x + 1e-12)


def _mean_scalars(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out * (1.0 / len(terms))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def gt_area_rings(scene: Scene, n_points: int) -> list[np.ndarray]:
    return [resample_ring(a.boundary, n_points) for a in scene.areas]


def gt_lane_stacks(scene: Scene, n_points: int) -> list[np.ndarray]:
    """Each lane as a (3 * N_s, 2) stack: centerline, left, right."""
    out = []
    for ls in scene.lane_segments:
        out.append(np.concatenate([
            resample_points(ls.centerline.points, n_points),
            resample_points(ls.left_boundary.points, n_points),
            resample_points(ls.right_boundary.points, n_points)]))
    return out


def match_boxes_to_gt(pred_boxes, gt_boxes, iou_threshold: float = 0.5) -> dict[int, int]:
    """Hungarian match on (1 - bbox IoU); pairs below threshold are dropped."""
    if not pred_boxes or not gt_boxes:
        return {}
    cost = np.ones((len(pred_boxes), len(gt_boxes)))
    for i, p in enumerate(pred_boxes):
        for j, g in enumerate(gt_boxes):
            cost[i, j] = 1.0 - bbox_iou(p.bbox, g.bbox)
    out = {}
    for i, j in hungarian(cost).pairs:
        if 1.0 - cost[i, j] >= iou_threshold:
            out[i] = j
    return out


def bbox_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def total_loss(scene: Scene, out: ModelOutput, cfg: ModelConfig,
               weights: CostWeights = CostWeights(),
               aux_target: np.ndarray | None = None
               ) -> tuple[Tensor, LossBreakdown]:
    """Hungarian matching per head plus topology and auxiliary terms."""
    area_cls, area_pt, area_iou, area_assign = _head_losses(
        out.area_chains, out.area_logits,
        gt_area_rings(scene, cfg.n_area_points),
        [a.class_id for a in scene.areas],
        weights, closed=True, background=cfg.area_classes)
    lane_cls, lane_pt, lane_iou, lane_assign = _head_losses(
        out.lane_points, out.lane_logits,
        gt_lane_stacks(scene, cfg.n_lane_points),
        [ls.class_id for ls in scene.lane_segments],
        weights, closed=False, background=cfg.lane_classes)

    ll_loss = topology_loss(out.ll_logits, scene.adj_ll, lane_assign)

    if out.traffic_boxes is scene.traffic_elements:
        box_map = {t: t for t in range(len(scene.traffic_elements))}
    else:
        box_map = match_boxes_to_gt(out.traffic_boxes, scene.traffic_elements)
    lt_loss = topology_loss(out.lt_logits, scene.adj_lt, lane_assign,
                            col_assignment=box_map, exclude_diagonal=False)

    if aux_target is None:
        from .model import rasterize_bev_target
        aux_target = rasterize_bev_target(scene, cfg)
    aux_loss = bce_with_logits(out.aux_logits, aux_target)

    total = (weights.cls * (area_cls + lane_cls)
             + weights.pt * (area_pt + lane_pt)
             + weights.iou * (area_iou + lane_iou)
             + weights.topo * (ll_loss + lt_loss)
             + weights.aux * aux_loss)
    bd = LossBreakdown(
        area_cls=area_cls.item(), area_pt=area_pt.item(),
        area_iou=area_iou.item(), lane_cls=lane_cls.item(),
        lane_pt=lane_pt.item(), lane_iou=lane_iou.item(),
        topo_ll=ll_loss.item(), topo_lt=lt_loss.item(),
        aux=aux_loss.item(), total=total.item())
    return total, bd
