import math

import numpy as np
import pytest

from survdpm.dataset import ColumnSpec
from survdpm.denoiser import (
    DenoiserNet,
    DivergenceError,
    FeatureLayout,
    NetConfig,
    diffusion_loss,
    loss_and_grad,
    sinusoidal_encoding,
)
from survdpm.schedule import cosine_schedule

MIXED_SPECS = [
    ColumnSpec("a", "numeric"),
    ColumnSpec("b", "numeric"),
    ColumnSpec("c", "categorical", ("p", "q", "r")),
    ColumnSpec("time", "time"),
    ColumnSpec("event", "event"),
]
LAYOUT = FeatureLayout.from_specs(MIXED_SPECS)


def mixed_batch(rng, n=10):
    x = np.zeros((n, LAYOUT.width))
    x[:, 0:2] = rng.standard_normal((n, 2))
    for i, c in enumerate(rng.integers(0, 3, n)):
        x[i, 2 + c] = 1.0
    tau0 = rng.standard_normal((n, 2))
    return tau0, x


def tiny_cfg(norm_mode="none", noise_embed=False, dropout=0.0):
    return NetConfig(
        hidden_layers=2, hidden_dim=8, activation="silu", norm_mode=norm_mode,
        dropout_rate=dropout, fourier_m=2, fourier_init_scale=0.3,
        cat_embed_dim=4, step_embed_dim=4, noise_embed=noise_embed,
    )


def randomize(net, seed=2):
    """Give every parameter (incl. zero-initialized heads) a nonzero value so
    no gradient is structurally zero during checks."""
    prng = np.random.default_rng(seed)
    for k in net.params:
        net.params[k] = net.params[k] + 0.3 * prng.standard_normal(net.params[k].shape)


class TestFourierMap:
    def test_zero_input_gives_sin_cos_pattern(self):
        net = DenoiserNet(LAYOUT, tiny_cfg(), np.random.default_rng(0))
        x = np.zeros((1, LAYOUT.width))
        x[0, 2] = 1.0  # category p
        c, _ = net._conditioning(np.zeros((1, 2)), np.array([1.0]), x)
        m = net.cfg.fourier_m
        fourier_part = c[0, : LAYOUT.n_numeric * 2 * m]
        np.testing.assert_allclose(fourier_part, [0.0, 1.0] * (LAYOUT.n_numeric * m), atol=1e-15)

    def test_output_width_is_2m_per_feature(self):
        net = DenoiserNet(LAYOUT, tiny_cfg(), np.random.default_rng(0))
        assert net.params["fourier_w"].shape == (2, 2)
        assert net.cond_dim == 2 * 2 * 2 + 4 + 4  # fourier + embedding + step


class TestForward:
    def test_hand_computed_single_layer(self):
        # no features, one hidden layer of width 3: output checked by explicit
        # matrix arithmetic including the step encoding
        specs = [ColumnSpec("time", "time"), ColumnSpec("event", "event")]
        layout = FeatureLayout.from_specs(specs)
        cfg = NetConfig(hidden_layers=1, hidden_dim=3, activation="relu", norm_mode="none",
                        fourier_m=1, cat_embed_dim=4, step_embed_dim=2)
        net = DenoiserNet(layout, cfg, np.random.default_rng(0))
        W = np.array([[0.1, -0.2, 0.3],
                      [0.0, 0.4, -0.1],
                      [0.2, 0.1, 0.0],
                      [-0.3, 0.2, 0.1]])
        b = np.array([0.01, -0.02, 0.03])
        Wh = np.array([[0.5, -0.5], [0.25, 0.1], [-0.2, 0.3]])
        bh = np.array([0.001, -0.001])
        net.params["layer0_W"] = W
        net.params["layer0_b"] = b
        net.params["head_W"] = Wh
        net.params["head_b"] = bh

        tau = np.array([0.7, -1.1])
        step = 3.0
        out = net.forward(tau, step, np.zeros(0))

        # oracle: hand-built input [tau, sin(3*w0), cos(3*w0)] with w0 = 1
        inp = np.array([0.7, -1.1, math.sin(3.0), math.cos(3.0)])
        hidden = np.maximum(inp @ W + b, 0.0)
        expected = hidden @ Wh + bh
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_adaln_zero_init_matches_bare_backbone(self):
        rng = np.random.default_rng(3)
        tau0, x = mixed_batch(rng, 6)
        steps = np.full(6, 2.0)
        ada = DenoiserNet(LAYOUT, tiny_cfg("adaln_zero"), np.random.default_rng(1))
        bare = DenoiserNet(LAYOUT, tiny_cfg("none"), np.random.default_rng(1))
        # align backbone weights: adaln backbone input is tau only, so compare
        # against a bare net evaluated with the modulation stripped by hand
        out_ada, _ = ada.forward_batch(tau0, steps, x)
        # manual bare pass through the adaln net's own weights, skipping modulation
        a = tau0
        for l in range(ada.cfg.hidden_layers):
            z = a @ ada.params[f"layer{l}_W"] + ada.params[f"layer{l}_b"]
            sig = 1 / (1 + np.exp(-z))
            a = z * sig
        expected = a @ ada.params["head_W"] + ada.params["head_b"]
        np.testing.assert_allclose(out_ada, expected, atol=1e-14)
        del bare

    def test_adaln_zero_init_ignores_conditioning(self):
        rng = np.random.default_rng(4)
        tau0, x = mixed_batch(rng, 5)
        net = DenoiserNet(LAYOUT, tiny_cfg("adaln_zero"), np.random.default_rng(1))
        out1, _ = net.forward_batch(tau0, np.full(5, 2.0), x)
        x2 = x.copy()
        x2[:, 0:2] += 10.0  # perturb continuous features
        out2, _ = net.forward_batch(tau0, np.full(5, 7.0), x2)  # and the step
        np.testing.assert_array_equal(out1, out2)

    def test_trained_modulation_reacts_to_conditioning(self):
        rng = np.random.default_rng(5)
        tau0, x = mixed_batch(rng, 5)
        net = DenoiserNet(LAYOUT, tiny_cfg("adaln_zero"), np.random.default_rng(1))
        randomize(net)
        out1, _ = net.forward_batch(tau0, np.full(5, 2.0), x)
        x2 = x.copy()
        x2[:, 0] += 1.0
        out2, _ = net.forward_batch(tau0, np.full(5, 2.0), x2)
        assert np.abs(out1 - out2).max() > 0

    def test_forward_is_pure_without_dropout(self):
        rng = np.random.default_rng(6)
        tau0, x = mixed_batch(rng, 4)
        net = DenoiserNet(LAYOUT, tiny_cfg(), np.random.default_rng(1))
        a, _ = net.forward_batch(tau0, np.full(4, 1.0), x)
        b, _ = net.forward_batch(tau0, np.full(4, 1.0), x)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch_errors(self):
        net = DenoiserNet(LAYOUT, tiny_cfg(), np.random.default_rng(1))
        with pytest.raises(ValueError, match="width"):
            net.forward_batch(np.zeros((2, 2)), np.ones(2), np.zeros((2, 3)))

    def test_output_is_two_dimensional(self):
        rng = np.random.default_rng(7)
        tau0, x = mixed_batch(rng, 9)
        for norm in ("none", "layer", "adaln_zero"):
            net = DenoiserNet(LAYOUT, tiny_cfg(norm), np.random.default_rng(1))
            out, _ = net.forward_batch(tau0, np.full(9, 1.0), x)
            assert out.shape == (9, 2)


class TestStepEncoding:
    def test_interleaved_sin_cos(self):
        enc = sinusoidal_encoding(2.0, 4)
        omega = [1.0, math.exp(-math.log(1e4) / 2)]
        expected = [math.sin(2 * omega[0]), math.cos(2 * omega[0]),
                    math.sin(2 * omega[1]), math.cos(2 * omega[1])]
        np.testing.assert_allclose(enc[0], expected, atol=1e-15)

    def test_smooth_in_step_value(self):
        a = sinusoidal_encoding(3.0, 16)
        b = sinusoidal_encoding(3.001, 16)
        assert np.abs(a - b).max() < 0.01


class TestLoss:
    def test_perfect_prediction_zero_loss_and_grads(self):
        rng = np.random.default_rng(8)
        eps = rng.standard_normal((6, 2))
        loss, g_out = diffusion_loss(eps, eps.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(g_out, np.zeros_like(eps))
        # zero upstream gradient implies all-zero parameter gradients
        net = DenoiserNet(LAYOUT, tiny_cfg("adaln_zero"), np.random.default_rng(1))
        randomize(net)
        tau0, x = mixed_batch(rng, 6)
        _, cache = net.forward_batch(tau0, np.full(6, 1.0), x)
        grads = net.backward(cache, np.zeros((6, 2)))
        for k, g in grads.items():
            np.testing.assert_array_equal(g, np.zeros_like(g), err_msg=k)

    def test_constant_zero_net_expected_loss_two(self):
        # loss of an all-zero predictor on standard normal noise == E||eps||^2 = 2
        rng = np.random.default_rng(9)
        n = 10_000
        eps = rng.standard_normal((n, 2))
        loss, _ = diffusion_loss(eps, np.zeros_like(eps))
        assert abs(loss - 2.0) < 0.1

    def test_divergence_error_carries_index(self):
        eps = np.zeros((4, 2))
        eps_hat = np.zeros((4, 2))
        eps_hat[2, 0] = np.nan
        with pytest.raises(DivergenceError) as err:
            diffusion_loss(eps, eps_hat)
        assert err.value.batch_index == 2

    def test_empty_batch_errors(self):
        net = DenoiserNet(LAYOUT, tiny_cfg(), np.random.default_rng(1))
        sched = cosine_schedule(5)
        with pytest.raises(ValueError):
            loss_and_grad(net, np.zeros((0, 2)), np.zeros((0, LAYOUT.width)), sched,
                          np.random.default_rng(0))


def finite_difference_check(norm_mode, noise_embed, dropout=0.0, h=1e-5, seed=42):
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(0)
    tau0, x = mixed_batch(rng, 10)
    sched = cosine_schedule(5)
    net = DenoiserNet(LAYOUT, tiny_cfg(norm_mode, noise_embed, dropout), np.random.default_rng(1))
    randomize(net)

    _, grads = loss_and_grad(net, tau0, x, sched, np.random.default_rng(seed), train=dropout > 0)
    worst = 0.0
    for k, v in net.params.items():
        for idx in np.ndindex(v.shape):
            orig = v[idx]
            v[idx] = orig + h
            lp, _ = loss_and_grad(net, tau0, x, sched, np.random.default_rng(seed),
                                  train=dropout > 0)
            v[idx] = orig - h
            lm, _ = loss_and_grad(net, tau0, x, sched, np.random.default_rng(seed),
                                  train=dropout > 0)
            v[idx] = orig
            fd = (lp - lm) / (2 * h)
            err = abs(grads[k][idx] - fd) / (max(abs(grads[k][idx]), abs(fd)) + 1e-6)
            worst = max(worst, err)
    return worst


class TestGradients:
    @pytest.mark.parametrize("norm_mode", ["none", "layer", "adaln_zero"])
    @pytest.mark.parametrize("noise_embed", [False, True])
    def test_finite_difference_agreement(self, norm_mode, noise_embed):
        assert finite_difference_check(norm_mode, noise_embed) < 1e-4

    def test_finite_difference_with_dropout_active(self):
        # frozen rng reproduces the dropout mask, so gradients stay exact
        assert finite_difference_check("none", False, dropout=0.2) < 1e-4
