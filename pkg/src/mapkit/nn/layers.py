"""Neural layers on top of the tape: linear, layer norm, attention, MLP.

Weights live in a flat ``dict[str, Tensor]`` keyed by dotted names, which
keeps checkpointing and freezing trivial.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .tensor import (Tensor, concat, gelu, matmul, power, relu, reshape,
                     softmax, tmean, transpose, tsum)

Params = dict[str, Tensor]


def init_linear(params: Params, name: str, d_in: int, d_out: int,
                rng: np.random.Generator) -> None:
    """Uniform +-sqrt(1/d_in) weight init, zero bias."""
    bound = math.sqrt(1.0 / d_in)
    params[f"{name}.W"] = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)),
                                 requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d_out), requires_grad=True)


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    W = params[f"{name}.W"]
    b = params[f"{name}.b"]
    if x.shape[-1] != W.shape[0]:
        raise ValueError(
            f"linear '{name}': input width {x.shape[-1]} != {W.shape[0]}")
    return matmul(x, W) + b


def init_layer_norm(params: Params, name: str, d: int) -> None:
    params[f"{name}.gain"] = Tensor(np.ones(d), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(d), requires_grad=True)


def layer_norm(x: Tensor, params: Params, name: str, eps: float = 1e-6) -> Tensor:
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    normed = centered * power(var + eps, -0.5)
    return normed * params[f"{name}.gain"] + params[f"{name}.bias"]


def init_mha(params: Params, name: str, d_model: int,
             rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", d_model, d_model, rng)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: Params,
                         name: str, heads: int) -> Tensor:
    """Scaled dot-product attention, (Nq, D) x (Nk, D) -> (Nq, D)."""
    d_model = q.shape[-1]
    if d_model % heads != 0:
        raise ValueError(f"width {d_model} not divisible by {heads} heads")
    if k.shape[0] == 0:
        raise ValueError("attention requires at least one key")
    d_head = d_model // heads
    nq, nk = q.shape[0], k.shape[0]

    def split(x: Tensor, n: int) -> Tensor:
        # (n, D) -> (heads, n, d_head)
        return transpose(reshape(x, (n, heads, d_head)), (1, 0, 2))

    qh = split(linear(q, params, f"{name}.q"), nq)
    kh = split(linear(k, params, f"{name}.k"), nk)
    vh = split(linear(v, params, f"{name}.v"), nk)
    scores = matmul(qh, transpose(kh, (0, 2, 1))) * (1.0 / math.sqrt(d_head))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)  # (heads, Nq, d_head)
    merged = reshape(transpose(ctx, (1, 0, 2)), (nq, d_model))
    return linear(merged, params, f"{name}.o")


def init_mlp(params: Params, name: str, widths: list[int],
             rng: np.random.Generator) -> None:
    """widths = [d_in, h1, ..., d_out]; final layer stays linear."""
    if len(widths) < 2:
        raise ValueError("mlp needs at least input and output widths")
    for i in range(len(widths) - 1):
        init_linear(params, f"{name}.{i}", widths[i], widths[i + 1], rng)


def mlp(x: Tensor, params: Params, name: str, n_layers: int,
        activation: Callable[[Tensor], Tensor] = relu) -> Tensor:
    for i in range(n_layers):
        x = linear(x, params, f"{name}.{i}")
        if i < n_layers - 1:
            x = activation(x)
    return x


def init_transformer_block(params: Params, name: str, d_model: int,
                           ffn_mult: int, rng: np.random.Generator) -> None:
    init_layer_norm(params, f"{name}.ln1", d_model)
    init_mha(params, f"{name}.attn", d_model, rng)
    init_layer_norm(params, f"{name}.ln2", d_model)
    init_linear(params, f"{name}.ff1", d_model, ffn_mult * d_model, rng)
    init_linear(params, f"{name}.ff2", ffn_mult * d_model, d_model, rng)


def transformer_block(x: Tensor, params: Params, name: str, heads: int) -> Tensor:
    """Pre-norm self-attention block with GELU feed-forward."""
    h = layer_norm(x, params, f"{name}.ln1")
    x = x + multi_head_attention(h, h, h, params, f"{name}.attn", heads)
    h = layer_norm(x, params, f"{name}.ln2")
    h = gelu(linear(h, params, f"{name}.ff1"))
    return x + linear(h, params, f"{name}.ff2")


def init_cross_attention_block(params: Params, name: str, d_model: int,
                               rng: np.random.Generator) -> None:
    init_layer_norm(params, f"{name}.ln_q", d_model)
    init_mha(params, f"{name}.attn", d_model, rng)


def cross_attention_block(q: Tensor, kv: Tensor, params: Params, name: str,
                          heads: int) -> Tensor:
    """Residual cross-attention: queries read a key/value token set."""
    h = layer_norm(q, params, f"{name}.ln_q")
    return q + multi_head_attention(h, kv, kv, params, f"{name}.attn", heads)
