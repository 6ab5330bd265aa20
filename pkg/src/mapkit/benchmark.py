"""The bundled synthetic benchmark: a downsized configuration and fixed
corpora (100 train / 30 eval scenes) used for the directional ablation
studies — map fusion on/off, pretrained vs random encoder init, and
topology fine-tuning.

The configuration trades capacity for runtime (narrow hidden width, coarse
BEV grid, single decoder layer) so a full 3-seed ablation finishes in
minutes on a laptop; the studied quantities are directions, not absolute
scores.  The benchmark map is full-fidelity (no jitter, no subsampling):
the fusion ablation contrasts a scene-conditioned model against a
scene-blind one, and map fidelity maximizes that contrast.  The lateral
extent is narrow so 100 training scenes cover the corridor-placement
distribution densely enough for lane geometry to generalize to held-out
scenes at meter-level thresholds; cosine learning-rate decay sharpens the
final geometry.
"""

from __future__ import annotations

from dataclasses import replace

from .config import RunConfig
from .metrics import MetricReport
from .nn import Params
from .scene import Scene
from .scenegen import generate_scene
from .train import TrainResult, evaluate_model, pretrain_encoder, train_model

TRAIN_SCENES = 100
EVAL_SCENES = 30
EVAL_SEED_BASE = 1_000_000


def benchmark_config(**overrides) -> RunConfig:
    cfg = RunConfig(
        n_train_scenes=TRAIN_SCENES, n_eval_scenes=EVAL_SCENES,
        lanes_max=4, extent_y=8.0,
        sdmap_sigma=0.0, sdmap_stride=1,
        d_hidden=32, heads=4, bev_resolution=5.0,
        n_area_queries=6, n_lane_queries=8, dec_layers=1,
        n_area_points=8, n_lane_points=6, encoder_layers=2,
        epochs=60, lr=1e-3, lr_schedule="cosine",
        pretrain_epochs=30, pretrain_lr=1e-3,
        topo_epochs=20,
    )
    return replace(cfg, **overrides)


def benchmark_corpora(cfg: RunConfig) -> tuple[list[Scene], list[Scene]]:
    train = [generate_scene(s, cfg.gen_config(cfg.n_train_scenes))
             for s in range(cfg.n_train_scenes)]
    evals = [generate_scene(EVAL_SEED_BASE + s,
                            cfg.gen_config(cfg.n_eval_scenes))
             for s in range(cfg.n_eval_scenes)]
    return train, evals


def train_and_eval(cfg: RunConfig, train: list[Scene], evals: list[Scene],
                   seed: int, encoder_params: Params | None = None,
                   init_params: Params | None = None,
                   topology_only: bool = False
                   ) -> tuple[TrainResult, MetricReport]:
    """One benchmark run: train without per-epoch eval, evaluate once."""
    result = train_model(train, [], cfg, seed,
                         encoder_params=encoder_params,
                         init_params=init_params,
                         topology_only=topology_only)
    report = evaluate_model(result.params, evals, cfg.model_config())
    return result, report


def fusion_ablation(seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """Median DET_l with vs without map fusion over the given seeds."""
    cfg_on = benchmark_config(sdmap_fusion=True)
    cfg_off = benchmark_config(sdmap_fusion=False)
    train, evals = benchmark_corpora(cfg_on)
    out = {"fusion_on": [], "fusion_off": []}
    for seed in seeds:
        out["fusion_on"].append(train_and_eval(cfg_on, train, evals, seed)[1])
        out["fusion_off"].append(train_and_eval(cfg_off, train, evals, seed)[1])
    return out


def pretraining_ablation(seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """Final train loss and DET_l: pretrained encoder init vs random."""
    cfg = benchmark_config()
    train, evals = benchmark_corpora(cfg)
    out = {"pretrained": [], "random": []}
    for seed in seeds:
        enc, _ = pretrain_encoder(train, cfg, seed)
        res_p, rep_p = train_and_eval(cfg, train, evals, seed,
                                      encoder_params=enc)
        res_r, rep_r = train_and_eval(cfg, train, evals, seed)
        out["pretrained"].append((res_p.loss_log[-1], rep_p))
        out["random"].append((res_r.loss_log[-1], rep_r))
    return out


def finetune_ablation(seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """TOP_lt before vs after topology-only fine-tuning of a trained model."""
    cfg = benchmark_config()
    train, evals = benchmark_corpora(cfg)
    out = {"base": [], "finetuned": []}
    for seed in seeds:
        res, rep = train_and_eval(cfg, train, evals, seed)
        out["base"].append(rep)
        _, rep_ft = train_and_eval(cfg, train, evals, seed,
                                   init_params=res.params,
                                   topology_only=True)
        out["finetuned"].append(rep_ft)
    return out
