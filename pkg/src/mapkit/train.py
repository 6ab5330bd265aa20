"""Training orchestration: encoder pretraining, full-model training,
topology-only fine-tuning, and model evaluation.

Everything is seeded through PCG64 streams, so a (config, seed) pair
reproduces checkpoints byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .encoding import EncodingConfig, GraphVector, build_graph_vector
from .losses import CostWeights, total_loss
from .map_encoder import pretrain_autoencoder, pretrain_mae
from .metrics import MetricReport, ScenePrediction, evaluate
from .model import (ModelConfig, ModelOutput, collect_trainable,
                    forward_scene, init_model)
from .nn import AdamWState, Params, adamw_step, backward, no_grad
from .nn.checkpoint import load_params, params_hash, save_params
from .scene import Scene, crop_local_view
from .scenegen import compute_resampling_weights


def scene_views(scenes: list[Scene], cfg: ModelConfig) -> list[GraphVector]:
    """Each scene's cropped, encoded map view (the encoder's input)."""
    enc_cfg = EncodingConfig()
    return [build_graph_vector(crop_local_view(s.sd_map, s.ego, cfg.extent),
                               enc_cfg, cfg.n_map_points)
            for s in scenes]


def pretrain_encoder(scenes: list[Scene], cfg: RunConfig,
                     seed: int) -> tuple[Params, list[float]]:
    """Self-supervised encoder pretraining on the scenes' map views."""
    model_cfg = cfg.model_config()
    views = scene_views(scenes, model_cfg)
    enc_cfg = model_cfg.encoder_config()
    if cfg.pretrain_mode == "ae":
        return pretrain_autoencoder(views, enc_cfg, epochs=cfg.pretrain_epochs,
                                    lr=cfg.pretrain_lr, seed=seed)
    return pretrain_mae(views, enc_cfg, mask_ratio=cfg.mask_ratio,
                        epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr,
                        seed=seed)


# ---------------------------------------------------------------------------
# model -> prediction conversion

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def prediction_from_output(out: ModelOutput, cfg: ModelConfig) -> ScenePrediction:
    """Detach one forward pass into the evaluation format.

    Every query is kept; the per-query score is its best foreground class
    probability, so AP ranking handles background-dominated queries.
    Traffic detections are replayed from the boxes the model was given.
    """
    lane_probs = _softmax(out.lane_logits.data)[:, :cfg.lane_classes]
    area_probs = _softmax(out.area_logits.data)[:, :cfg.area_classes]
    return ScenePrediction(
        lane_centerlines=[c.copy() for c in out.lane_points.data[:, 0]],
        lane_classes=[int(i) for i in lane_probs.argmax(axis=-1)],
        lane_scores=[float(v) for v in lane_probs.max(axis=-1)],
        area_rings=[r.copy() for r in out.area_chains.data],
        area_classes=[int(i) for i in area_probs.argmax(axis=-1)],
        area_scores=[float(v) for v in area_probs.max(axis=-1)],
        traffic_boxes=[te.bbox for te in out.traffic_boxes],
        traffic_classes=[te.class_id for te in out.traffic_boxes],
        traffic_scores=[1.0 if te.score == 0.0 else te.score
                        for te in out.traffic_boxes],
        adj_ll=_sigmoid(out.ll_logits.data),
        adj_lt=_sigmoid(out.lt_logits.data),
    )


def oracle_prediction(scene: Scene) -> ScenePrediction:
    """Replay the ground truth as a perfect prediction (metric sanity mode)."""
    return ScenePrediction(
        lane_centerlines=[ls.centerline.points for ls in scene.lane_segments],
        lane_classes=[ls.class_id for ls in scene.lane_segments],
        lane_scores=[1.0] * len(scene.lane_segments),
        area_rings=[a.boundary for a in scene.areas],
        area_classes=[a.class_id for a in scene.areas],
        area_scores=[1.0] * len(scene.areas),
        traffic_boxes=[te.bbox for te in scene.traffic_elements],
        traffic_classes=[te.class_id for te in scene.traffic_elements],
        traffic_scores=[1.0] * len(scene.traffic_elements),
        adj_ll=scene.adj_ll.astype(float),
        adj_lt=scene.adj_lt.astype(float),
    )


def evaluate_model(params: Params, scenes: list[Scene],
                   cfg: ModelConfig) -> MetricReport:
    preds = []
    with no_grad():
        for scene in scenes:
            out = forward_scene(scene, params, cfg)
            preds.append(prediction_from_output(out, cfg))
    return evaluate(scenes, preds)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    params: Params
    history: list[MetricReport]     # one report per epoch (eval corpus)
    loss_log: list[float]           # mean train loss per epoch


def _epoch_order(n: int, weights: np.ndarray | None,
                 rng: np.random.Generator) -> np.ndarray:
    if weights is None:
        return rng.permutation(n)
    return rng.choice(n, size=n, replace=True, p=weights / weights.sum())


def train_model(train_scenes: list[Scene], eval_scenes: list[Scene],
                cfg: RunConfig, seed: int,
                encoder_params: Params | None = None,
                init_params: Params | None = None,
                topology_only: bool = False) -> TrainResult:
    """Per-scene stochastic training with a per-epoch evaluation pass.

    ``encoder_params`` seeds the map encoder (pretraining hand-off);
    ``init_params`` seeds the whole model; ``topology_only`` freezes
    everything except the two topology heads and verifies the freeze by
    content hash.
    """
    if not train_scenes:
        raise ValueError("empty training corpus")
    model_cfg = cfg.model_config()
    rng = np.random.default_rng(np.random.PCG64(seed))
    params = init_model(model_cfg, rng)
    if init_params is not None:
        for name, p in params.items():
            if name not in init_params:
                raise ValueError(f"initial checkpoint missing '{name}'")
            if init_params[name].shape != p.shape:
                raise ValueError(f"shape mismatch for '{name}'")
            p.data[...] = init_params[name].data
    if encoder_params is not None:
        for name, src in encoder_params.items():
            if name.startswith("enc."):
                params[name].data[...] = src.data

    trainable = collect_trainable(params, topology_only)
    frozen = set(params) - trainable
    frozen_before = params_hash(params, frozen)

    lr = cfg.topo_lr if topology_only else cfg.lr
    epochs = cfg.topo_epochs if topology_only else cfg.epochs
    state = AdamWState(lr=lr, weight_decay=cfg.weight_decay)
    weights = CostWeights(cls=cfg.w_cls, pt=cfg.w_pt, iou=cfg.w_iou,
                          topo=cfg.w_topo, aux=cfg.w_aux)
    sample_w = (compute_resampling_weights(train_scenes)
                if cfg.resample else None)
    aux_targets: dict[int, np.ndarray] = {}

    history: list[MetricReport] = []
    loss_log: list[float] = []
    for epoch in range(epochs):
        if cfg.lr_schedule == "cosine":
            state.lr = lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
        total = 0.0
        for idx in _epoch_order(len(train_scenes), sample_w, rng):
            scene = train_scenes[int(idx)]
            if int(idx) not in aux_targets:
                from .model import rasterize_bev_target
                aux_targets[int(idx)] = rasterize_bev_target(scene, model_cfg)
            out = forward_scene(scene, params, model_cfg)
            loss, _ = total_loss(scene, out, model_cfg, weights,
                                 aux_target=aux_targets[int(idx)])
            backward(loss)
            # heads with no instances this scene receive no gradient
            step_set = {n for n in trainable if params[n].grad is not None}
            adamw_step(params, state, trainable=step_set)
            total += loss.item()
        loss_log.append(total / len(train_scenes))
        if eval_scenes:
            history.append(evaluate_model(params, eval_scenes, model_cfg))

    frozen_after = params_hash(params, frozen)
    if frozen_before != frozen_after:
        changed = sorted(n for n in frozen_before
                         if frozen_before[n] != frozen_after[n])
        raise RuntimeError(f"frozen parameters changed: {changed}")
    return TrainResult(params, history, loss_log)


# ---------------------------------------------------------------------------
# artifact helpers

def write_metrics_csv(history: list[MetricReport], path: str | Path) -> None:
    lines = [MetricReport.CSV_HEADER] + [r.csv_row() for r in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics_csv(path: str | Path) -> list[MetricReport]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != MetricReport.CSV_HEADER:
        raise ValueError(f"{path}: missing metrics header")
    out = []
    for line in lines[1:]:
        vals = [float(v) for v in line.split(",")]
        if len(vals) != 6:
            raise ValueError(f"{path}: bad row {line!r}")
        out.append(MetricReport(*vals))
    return out


def save_model(params: Params, cfg: RunConfig, path: str | Path) -> None:
    from .config import format_run_config
    save_params(params, path, config={"run_config": format_run_config(cfg)})


def load_model(path: str | Path) -> Params:
    params, _ = load_params(path)
    return params
