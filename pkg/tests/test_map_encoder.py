"""Map encoder: shape contract, permutation equivariance, pretraining
objectives, checkpoint round trips."""

import numpy as np
import pytest

from mapkit.encoding import EncodingConfig, GraphVector, build_graph_vector
from mapkit.map_encoder import (MapEncoderConfig, encode_map, encode_map_t,
                                init_map_encoder, load_encoder,
                                pretrain_autoencoder, pretrain_mae,
                                save_encoder)
from mapkit.nn import CheckpointError, Tensor, grad_check, tsum
from mapkit.scene import LocalView, Polyline

CFG = MapEncoderConfig()
ENC_CFG = EncodingConfig()


def make_gv(n_lines, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n_lines):
        x0, y0 = rng.uniform(-40, 20), rng.uniform(-20, 20)
        pts = np.column_stack([np.linspace(x0, x0 + 12, 5),
                               y0 + rng.normal(0, 0.4, 5)])
        lines.append(Polyline(pts, int(rng.integers(0, 7))))
    return build_graph_vector(LocalView(tuple(lines), (50, 25)), ENC_CFG, 11)


def make_params(seed=0):
    return init_map_encoder(CFG, np.random.default_rng(seed))


def test_shape_contract():
    params = make_params()
    mf = encode_map(make_gv(3), CFG, params)
    assert mf.data.shape == (3, CFG.d_hidden)


def test_empty_input():
    params = make_params()
    mf = encode_map(make_gv(0), CFG, params)
    assert mf.data.shape == (0, CFG.d_hidden)


def test_rejects_wrong_dims():
    params = make_params()
    with pytest.raises(ValueError):
        encode_map(GraphVector(np.zeros((2, 5, 39))), CFG, params)


def test_permutation_equivariance():
    params = make_params(1)
    gv = make_gv(7, seed=2)
    out = encode_map(gv, CFG, params).data
    perm = np.random.default_rng(3).permutation(7)
    out_p = encode_map(GraphVector(gv.data[perm]), CFG, params).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-9)


def test_single_token_oracle():
    """With one line, attention attends only to itself; a hand-rolled
    single-token transformer forward must agree."""
    params = make_params(4)
    gv = make_gv(1, seed=5)
    got = encode_map(gv, CFG, params).data

    def ln(x, g, b, eps=1e-6):
        mu = x.mean()
        v = ((x - mu) ** 2).mean()
        return (x - mu) / np.sqrt(v + eps) * g + b

    def gelu_np(x):
        c = np.sqrt(2 / np.pi)
        return 0.5 * x * (1 + np.tanh(c * (x + 0.044715 * x ** 3)))

    p = {k: v.data for k, v in params.items()}
    x = gv.data.reshape(1, -1) @ p["enc.in_proj.W"] + p["enc.in_proj.b"]
    x = x[0]
    for i in range(CFG.layers):
        pre = f"enc.block{i}"
        h = ln(x, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        # single token: softmax weight is 1, attention output = Wo(Wv h) + biases
        v = h @ p[f"{pre}.attn.v.W"] + p[f"{pre}.attn.v.b"]
        attn = v @ p[f"{pre}.attn.o.W"] + p[f"{pre}.attn.o.b"]
        x = x + attn
        h = ln(x, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        h = gelu_np(h @ p[f"{pre}.ff1.W"] + p[f"{pre}.ff1.b"])
        x = x + h @ p[f"{pre}.ff2.W"] + p[f"{pre}.ff2.b"]
    np.testing.assert_allclose(got[0], x, atol=1e-10)


def test_encoder_gradcheck():
    tiny = MapEncoderConfig(d_hidden=8, layers=1, heads=2, n_points=4,
                            d_point=6, ffn_mult=2)
    rng = np.random.default_rng(6)
    params = init_map_encoder(tiny, rng)
    x = Tensor(rng.normal(size=(3, 4, 6)), requires_grad=True)

    def f():
        out = encode_map_t(x, tiny, params)
        return tsum(out * out) * 0.01

    assert grad_check(f, [x] + list(params.values()), rng=rng,
                      max_coords=10) < 1e-4


SMALL = MapEncoderConfig(d_hidden=16, layers=1, heads=2)


class TestAutoencoder:
    def test_loss_decreases(self):
        views = [make_gv(n, seed=n) for n in (2, 3, 4, 3, 2)]
        _, log = pretrain_autoencoder(views, SMALL, epochs=8, lr=1e-3, seed=0)
        assert all(np.isfinite(log))
        assert log[-1] < log[0]

    def test_memorizes_single_view(self):
        views = [make_gv(1, seed=9)] * 8
        _, log = pretrain_autoencoder(views, SMALL, epochs=80, lr=3e-3, seed=0)
        assert log[-1] < 1e-3

    def test_init_loss_matches_target_power(self):
        """At init the decoder output is near zero, so the first-step loss is
        roughly the mean square of the target embedding."""
        views = [make_gv(4, seed=1)]
        _, log = pretrain_autoencoder(views, SMALL, epochs=1, lr=1e-12, seed=0)
        target_power = float((views[0].data ** 2).mean())
        assert abs(log[0] - target_power) / target_power < 0.5

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            pretrain_autoencoder([make_gv(0)], SMALL)

    def test_returns_encoder_weights_only(self):
        weights, _ = pretrain_autoencoder([make_gv(2)], SMALL, epochs=1)
        assert all(k.startswith("enc.") for k in weights)


class TestMAE:
    def test_rejects_bad_ratio(self):
        for ratio in (0.0, 1.0, -0.3):
            with pytest.raises(ValueError):
                pretrain_mae([make_gv(3)], SMALL, mask_ratio=ratio)

    def test_loss_decreases(self):
        views = [make_gv(n, seed=n + 20) for n in (3, 4, 5, 4)]
        _, log = pretrain_mae(views, SMALL, mask_ratio=0.3, epochs=8,
                              lr=1e-3, seed=0)
        assert all(np.isfinite(log))
        assert log[-1] < log[0]

    def test_deterministic_given_seed(self):
        views = [make_gv(n, seed=n) for n in (3, 4)]
        _, log1 = pretrain_mae(views, SMALL, epochs=3, seed=7)
        _, log2 = pretrain_mae(views, SMALL, epochs=3, seed=7)
        assert log1 == log2

    def test_skips_empty_views(self):
        views = [make_gv(0), make_gv(3, seed=2)]
        _, log = pretrain_mae(views, SMALL, epochs=2)
        assert len(log) == 2

    def test_all_empty_rejected(self):
        with pytest.raises(ValueError):
            pretrain_mae([make_gv(0), make_gv(0)], SMALL)


class TestCheckpoint:
    def test_roundtrip_identical_outputs(self, tmp_path):
        params = make_params(8)
        path = tmp_path / "enc.json"
        save_encoder(params, CFG, path)
        loaded = load_encoder(path, CFG)
        gv = make_gv(4, seed=8)
        a = encode_map(gv, CFG, params).data
        b = encode_map(gv, CFG, loaded).data
        np.testing.assert_array_equal(a, b)

    def test_mismatched_width_rejected(self, tmp_path):
        params = make_params()
        path = tmp_path / "enc.json"
        save_encoder(params, CFG, path)
        other = MapEncoderConfig(d_hidden=32, layers=2, heads=4)
        with pytest.raises(CheckpointError):
            load_encoder(path, other)

    def test_bit_exact_values(self, tmp_path):
        params = make_params(3)
        path = tmp_path / "enc.json"
        save_encoder(params, CFG, path)
        loaded = load_encoder(path, CFG)
        for k in params:
            np.testing.assert_array_equal(params[k].data, loaded[k].data)
