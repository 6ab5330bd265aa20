"""Transformer map encoder: per-line token projection + self-attention
blocks over the lines of a view, plus autoencoder / masked-autoencoder
pretraining of those weights.

Tokenization flattens each line's (N_p, D) block and projects it to D_h,
so point order survives into the token.  There is no positional encoding
across lines: the encoder is permutation-equivariant over lines.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encoding import DEFAULT_N_POINTS, EncodingConfig, GraphVector
from .nn import (AdamWState, Params, Tensor, adamw_step, backward,
                 init_linear, init_mlp, init_transformer_block, linear, mlp,
                 no_grad, reshape, tmean, transformer_block, tsum)
from .nn.checkpoint import load_params_into, save_params


@dataclass(frozen=True)
class MapEncoderConfig:
    d_hidden: int = 64
    layers: int = 2
    heads: int = 4
    n_points: int = DEFAULT_N_POINTS
    d_point: int = EncodingConfig().d_point
    ffn_mult: int = 2

    def __post_init__(self):
        if self.d_hidden % self.heads != 0:
            raise ValueError("d_hidden must be divisible by heads")
        if self.layers < 1:
            raise ValueError("need at least one encoder layer")

    @property
    def d_token_in(self) -> int:
        return self.n_points * self.d_point


@dataclass(frozen=True)
class MapFeature:
    data: np.ndarray  # (N_l, D_h)


def init_map_encoder(cfg: MapEncoderConfig, rng: np.random.Generator,
                     prefix: str = "enc") -> Params:
    params: Params = {}
    init_linear(params, f"{prefix}.in_proj", cfg.d_token_in, cfg.d_hidden, rng)
    for i in range(cfg.layers):
        init_transformer_block(params, f"{prefix}.block{i}", cfg.d_hidden,
                               cfg.ffn_mult, rng)
    return params


def encode_map_t(gv_data, cfg: MapEncoderConfig, params: Params,
                 prefix: str = "enc") -> Tensor:
    """Differentiable forward pass, (N_l, N_p, D) -> (N_l, D_h) Tensor."""
    x = gv_data if isinstance(gv_data, Tensor) else Tensor(gv_data)
    n_l = x.shape[0]
    if x.shape[1] != cfg.n_points or x.shape[2] != cfg.d_point:
        raise ValueError(
            f"graph vector shape {x.shape} incompatible with config "
            f"(N_p={cfg.n_points}, D={cfg.d_point})")
    tokens = linear(reshape(x, (n_l, cfg.d_token_in)), params, f"{prefix}.in_proj")
    if n_l == 0:
        return tokens
    for i in range(cfg.layers):
        tokens = transformer_block(tokens, params, f"{prefix}.block{i}",
                                   cfg.heads)
    return tokens


def encode_map(gv: GraphVector, cfg: MapEncoderConfig, params: Params,
               prefix: str = "enc") -> MapFeature:
    with no_grad():
        return MapFeature(encode_map_t(gv.data, cfg, params, prefix).data)


# ---------------------------------------------------------------------------
# pretraining

def init_pretrain_decoder(cfg: MapEncoderConfig,
                          rng: np.random.Generator) -> Params:
    """Lightweight 2-layer MLP from D_h back to the flattened input block."""
    params: Params = {}
    init_mlp(params, "dec", [cfg.d_hidden, cfg.d_hidden, cfg.d_token_in], rng)
    return params


def _reconstruction_loss(tokens: Tensor, target_flat: np.ndarray,
                         dec_params: Params) -> Tensor:
    pred = mlp(tokens, dec_params, "dec", 2)
    diff = pred - target_flat
    return tmean(diff * diff)


def pretrain_autoencoder(views: list[GraphVector], cfg: MapEncoderConfig,
                         epochs: int = 20, lr: float = 2e-4,
                         seed: int = 0) -> tuple[Params, list[float]]:
    """Reconstruct each line's own input embedding; returns encoder weights
    (decoder discarded) and the per-epoch mean loss log."""
    usable = [v for v in views if v.n_lines > 0]
    if not usable:
        raise ValueError("pretraining needs at least one nonempty view")
    rng = np.random.default_rng(seed)
    enc = init_map_encoder(cfg, rng)
    dec = init_pretrain_decoder(cfg, rng)
    params = {**enc, **dec}
    state = AdamWState(lr=lr)
    log = []
    for _ in range(epochs):
        total = 0.0
        for gv in usable:
            tokens = encode_map_t(gv.data, cfg, params)
            target = gv.data.reshape(gv.n_lines, -1)
            loss = _reconstruction_loss(tokens, target, params)
            backward(loss)
            adamw_step(params, state)
            total += loss.item()
        log.append(total / len(usable))
    return {k: v for k, v in params.items() if k.startswith("enc.")}, log


def pretrain_mae(views: list[GraphVector], cfg: MapEncoderConfig,
                 mask_ratio: float = 0.3, epochs: int = 20, lr: float = 2e-4,
                 seed: int = 0) -> tuple[Params, list[float]]:
    """Line-level masked autoencoding: a random ceil(mask_ratio * N_l) subset
    of line tokens is replaced by a learned mask token after input projection;
    the loss covers only the masked lines' embedding blocks."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in (0, 1)")
    usable = [v for v in views if v.n_lines > 0]
    if not usable:
        raise ValueError("pretraining needs at least one nonempty view")
    rng = np.random.default_rng(seed)
    enc = init_map_encoder(cfg, rng)
    dec = init_pretrain_decoder(cfg, rng)
    mask_token = Tensor(rng.normal(0, 0.02, size=(cfg.d_hidden,)),
                        requires_grad=True)
    params = {**enc, **dec, "mae.mask_token": mask_token}
    state = AdamWState(lr=lr)
    log = []
    for _ in range(epochs):
        total = 0.0
        for gv in usable:
            n_l = gv.n_lines
            n_mask = int(np.ceil(mask_ratio * n_l))
            masked = rng.choice(n_l, size=n_mask, replace=False)
            keep = np.ones(n_l)
            keep[masked] = 0.0
            tokens = linear(
                reshape(Tensor(gv.data), (n_l, cfg.d_token_in)),
                params, "enc.in_proj")
            tokens = tokens * keep[:, None] + mask_token * (1.0 - keep)[:, None]
            for i in range(cfg.layers):
                tokens = transformer_block(tokens, params, f"enc.block{i}",
                                           cfg.heads)
            target = gv.data.reshape(n_l, -1)[masked]
            loss = _reconstruction_loss(tokens[masked], target, params)
            backward(loss)
            adamw_step(params, state)
            total += loss.item()
        log.append(total / len(usable))
    return {k: v for k, v in params.items() if k.startswith("enc.")}, log


# ---------------------------------------------------------------------------
# checkpointing

def save_encoder(params: Params, cfg: MapEncoderConfig, path: str | Path) -> None:
    enc_only = {k: v for k, v in params.items() if k.startswith("enc.")}
    save_params(enc_only, path, config=asdict(cfg))


def load_encoder(path: str | Path, cfg: MapEncoderConfig) -> Params:
    rng = np.random.default_rng(0)
    params = init_map_encoder(cfg, rng)
    load_params_into(params, path, expect_config=asdict(cfg))
    return params
