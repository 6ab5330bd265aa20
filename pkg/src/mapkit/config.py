"""Flat run configuration: one dataclass covering data generation, model
size, and training, parsed from ``key = value`` files.

The file format is deliberately minimal — one assignment per line, ``#``
comments — so configs diff cleanly and every run can echo its full
resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .scenegen import GenConfig


@dataclass(frozen=True)
class RunConfig:
    # data generation
    n_train_scenes: int = 20
    n_eval_scenes: int = 5
    lanes_min: int = 2
    lanes_max: int = 6
    area_prob: float = 0.8
    traffic_min: int = 1
    traffic_max: int = 4
    sdmap_sigma: float = 0.5
    sdmap_stride: int = 2
    extent_x: float = 50.0
    extent_y: float = 25.0

    # model
    d_hidden: int = 64
    heads: int = 4
    bev_resolution: float = 1.0
    n_area_queries: int = 20
    n_lane_queries: int = 30
    dec_layers: int = 2
    n_area_points: int = 20
    n_lane_points: int = 10
    encoder_layers: int = 2
    sdmap_fusion: bool = True

    # optimization
    epochs: int = 12
    lr: float = 2e-4
    lr_schedule: str = "constant"  # constant | cosine
    weight_decay: float = 0.01
    resample: bool = True
    pretrain_mode: str = "ae"      # ae | mae
    pretrain_epochs: int = 20
    pretrain_lr: float = 2e-4
    mask_ratio: float = 0.3
    topo_epochs: int = 3
    topo_lr: float = 4e-4

    # loss weights
    w_cls: float = 2.0
    w_pt: float = 5.0
    w_iou: float = 2.0
    w_topo: float = 1.0
    w_aux: float = 1.0

    # file wiring (relative paths resolve against the cwd)
    data_dir: str = "data"
    encoder_ckpt: str = ""         # optional pretrained encoder for train
    init_ckpt: str = ""            # full model checkpoint to start from
    model_ckpt: str = ""           # model checkpoint for eval
    eval_oracle: bool = False      # replay ground truth instead of a model

    def __post_init__(self):
        if self.pretrain_mode not in ("ae", "mae"):
            raise ValueError(f"unknown pretrain_mode {self.pretrain_mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.epochs < 1 or self.pretrain_epochs < 1 or self.topo_epochs < 1:
            raise ValueError("epoch counts must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_hidden=self.d_hidden, heads=self.heads,
            extent=(self.extent_x, self.extent_y),
            bev_resolution=self.bev_resolution,
            n_area_queries=self.n_area_queries,
            n_lane_queries=self.n_lane_queries,
            dec_layers=self.dec_layers, n_area_points=self.n_area_points,
            n_lane_points=self.n_lane_points,
            encoder_layers=self.encoder_layers,
            sdmap_fusion=self.sdmap_fusion)

    def gen_config(self, n_scenes: int) -> GenConfig:
        return GenConfig(
            n_scenes=n_scenes, lanes_min=self.lanes_min,
            lanes_max=self.lanes_max, area_prob=self.area_prob,
            traffic_min=self.traffic_min, traffic_max=self.traffic_max,
            sdmap_sigma=self.sdmap_sigma, sdmap_stride=self.sdmap_stride,
            extent_x=self.extent_x, extent_y=self.extent_y)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _convert(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind in ("bool", bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"cannot parse boolean '{name} = {raw}'")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_run_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; unknown keys are errors."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', "
                             f"got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in overrides:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = _convert(key, raw)
    return RunConfig(**overrides)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


def format_run_config(cfg: RunConfig) -> str:
    """Full echo of every field, parseable by ``parse_run_config``."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
