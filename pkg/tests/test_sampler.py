import numpy as np
import pytest

from survdpm.dataset import ColumnSpec
from survdpm.denoiser import DenoiserNet, FeatureLayout, NetConfig
from survdpm.sampler import (
    GeneratedOutcomes,
    generate,
    generation_diagnostics,
    reverse_step,
)
from survdpm.schedule import DiffusionSchedule, cosine_schedule
from survdpm.target_space import TargetTransform

SPECS = [ColumnSpec("x0", "numeric"), ColumnSpec("time", "time"), ColumnSpec("event", "event")]
LAYOUT = FeatureLayout.from_specs(SPECS)


def zero_output_net():
    """Net whose prediction is identically zero (zeroed output head)."""
    net = DenoiserNet(LAYOUT, NetConfig(hidden_layers=1, hidden_dim=4, fourier_m=1,
                                        step_embed_dim=2), np.random.default_rng(0))
    net.params["head_W"][:] = 0.0
    net.params["head_b"][:] = 0.0
    return net


def constant_net(value):
    net = zero_output_net()
    net.params["head_b"][:] = value
    return net


def hand_schedule(alpha, beta, alpha_bar, step=1.0):
    return DiffusionSchedule(
        r=1, s=0.008, betas=np.array([beta]), alphas=np.array([alpha]),
        alpha_bars=np.array([alpha_bar]), step_values=np.array([step]),
    )


class TestReverseStep:
    def test_both_noises_zero_rescales(self):
        sched = cosine_schedule(10)
        net = zero_output_net()
        x = np.array([0.3])
        i = 5
        tau = np.array([0.8, -0.4])
        out = reverse_step(net, tau, i, sched, x, None, eps=np.zeros(2))
        np.testing.assert_allclose(out, tau / np.sqrt(sched.alphas[i - 1]), atol=1e-14)

    def test_hand_value(self):
        # alpha=0.99, beta=0.01, abar=0.5, tau=(1,0), eps_hat=(0.2,-0.1), eps=0:
        # independent arithmetic gives (1.0021951390411372, 0.0014213381090374029)
        sched = hand_schedule(0.99, 0.01, 0.5)
        net = constant_net(np.array([0.2, -0.1]))
        out = reverse_step(net, np.array([1.0, 0.0]), 1, sched, np.array([0.0]), None)
        np.testing.assert_allclose(
            out, [1.0021951390411372, 0.0014213381090374029], atol=1e-12
        )

    def test_final_step_suppresses_noise(self):
        sched = cosine_schedule(10)
        net = zero_output_net()
        x = np.array([0.0])
        tau = np.array([1.0, 1.0])
        a = reverse_step(net, tau, 1, sched, x, np.random.default_rng(0))
        b = reverse_step(net, tau, 1, sched, x, np.random.default_rng(999))
        np.testing.assert_array_equal(a, b)

    def test_out_of_range_index(self):
        sched = cosine_schedule(5)
        net = zero_output_net()
        with pytest.raises(ValueError):
            reverse_step(net, np.zeros(2), 6, sched, np.array([0.0]), np.random.default_rng(0))

    def test_single_step_chain(self):
        sched = cosine_schedule(1)
        net = zero_output_net()
        tf = TargetTransform(mu=0.0, sigma=1.0)
        out = generate(net, np.array([0.0]), 3, sched, tf, np.random.default_rng(0))
        assert out.k == 3

    def test_non_finite_raises_with_step(self):
        sched = hand_schedule(0.99, 0.01, 0.5)
        net = constant_net(np.array([np.inf, 0.0]))
        with pytest.raises(FloatingPointError, match="step 1"):
            reverse_step(net, np.array([1.0, 0.0]), 1, sched, np.array([0.0]), None)


class TestGenerate:
    def test_counts(self):
        sched = cosine_schedule(5)
        net = zero_output_net()
        tf = TargetTransform(mu=0.0, sigma=1.0)
        for k in (1, 2048):
            out = generate(net, np.array([0.1]), k, sched, tf, np.random.default_rng(1))
            assert out.k == k
            assert (out.times > 0).all()

    def test_k_zero_rejected(self):
        sched = cosine_schedule(5)
        with pytest.raises(ValueError):
            generate(zero_output_net(), np.array([0.1]), 0, sched,
                     TargetTransform(mu=0.0, sigma=1.0), np.random.default_rng(1))

    def test_bit_reproducible(self):
        sched = cosine_schedule(8)
        net = zero_output_net()
        tf = TargetTransform(mu=0.0, sigma=1.0)
        seed = np.random.SeedSequence(42, spawn_key=(3,))
        a = generate(net, np.array([0.5]), 64, sched, tf, np.random.default_rng(seed))
        seed = np.random.SeedSequence(42, spawn_key=(3,))
        b = generate(net, np.array([0.5]), 64, sched, tf, np.random.default_rng(seed))
        assert a.times.tobytes() == b.times.tobytes()
        assert a.deltas.tobytes() == b.deltas.tobytes()

    def test_prefix_stability_in_k(self):
        # the first K' trajectories of a K-sample run equal a K'-sample run
        sched = cosine_schedule(8)
        net = zero_output_net()
        tf = TargetTransform(mu=0.0, sigma=1.0)
        big = generate(net, np.array([0.5]), 256, sched, tf,
                       np.random.default_rng(np.random.SeedSequence(7)))
        small = generate(net, np.array([0.5]), 64, sched, tf,
                         np.random.default_rng(np.random.SeedSequence(7)))
        np.testing.assert_array_equal(big.times[:64], small.times)
        np.testing.assert_array_equal(big.deltas[:64], small.deltas)

    def test_batch_matches_single_trajectory_math(self):
        # one trajectory driven through reverse_step with the same noise block
        sched = cosine_schedule(6)
        net = DenoiserNet(LAYOUT, NetConfig(hidden_layers=1, hidden_dim=4, fourier_m=1,
                                            step_embed_dim=2), np.random.default_rng(3))
        tf = TargetTransform(mu=0.0, sigma=1.0)
        x = np.array([0.7])
        rng = np.random.default_rng(np.random.SeedSequence(5))
        out = generate(net, x, 1, sched, tf, rng)
        rng = np.random.default_rng(np.random.SeedSequence(5))
        block = rng.standard_normal((1, sched.r + 1, 2))
        tau = block[0, 0, :]
        for i in range(sched.r, 0, -1):
            eps = block[0, sched.r - i + 1, :] if i > 1 else np.zeros(2)
            tau = reverse_step(net, tau, i, sched, x, None, eps=eps)
        from survdpm import target_space
        t, d = target_space.decode(tau[0], tau[1], tf)
        assert out.times[0] == pytest.approx(t, rel=1e-14)
        assert out.deltas[0] == d

    def test_zero_net_variance_matches_linear_recursion(self):
        # closed-form variance of the zero-prediction recursion:
        # v_{i-1} = v_i / alpha_i + beta_i, final step adds no noise
        sched = cosine_schedule(5)
        v = 1.0
        for i in range(sched.r, 1, -1):
            v = v / sched.alphas[i - 1] + sched.betas[i - 1]
        v = v / sched.alphas[0]
        net = zero_output_net()
        tf = TargetTransform(mu=0.0, sigma=1.0)
        rng = np.random.default_rng(np.random.SeedSequence(11))
        K = 100_000
        noise = rng.standard_normal((K, sched.r + 1, 2))
        from survdpm.sampler import _reverse_chain_batch
        tau0 = _reverse_chain_batch(net, np.array([0.0]), noise, sched)
        for c in range(2):
            assert abs(tau0[:, c].var() / v - 1.0) < 0.05


class TestDiagnostics:
    def test_counting_rates(self):
        out = GeneratedOutcomes(np.array([-1.0, 5.0, 300.0]), np.array([0, 1, 1]), np.zeros(1))
        rates = generation_diagnostics(out, t_max=100.0)
        assert rates == (pytest.approx(2 / 3), pytest.approx(1 / 3), pytest.approx(1 / 3))

    def test_transformed_mode_never_negative(self):
        # structural guarantee of the exp decode, regardless of the net
        sched = cosine_schedule(10)
        rng_net = np.random.default_rng(17)
        net = DenoiserNet(LAYOUT, NetConfig(hidden_layers=2, hidden_dim=8, fourier_m=2,
                                            step_embed_dim=4), rng_net)
        for k in net.params:  # wreck the parameters on purpose
            net.params[k] = net.params[k] + 5.0 * rng_net.standard_normal(net.params[k].shape)
        tf = TargetTransform(mu=2.0, sigma=1.5)
        out = generate(net, np.array([1.0]), 2000, sched, tf, np.random.default_rng(1))
        _, neg_rate, _ = generation_diagnostics(out, t_max=10.0)
        assert neg_rate == 0.0

    def test_clean_case(self):
        out = GeneratedOutcomes(np.array([1.0, 2.0]), np.array([1, 0]), np.zeros(1))
        _, neg, exceed = generation_diagnostics(out, t_max=50.0)
        assert neg == 0.0
        assert exceed == 0.0

    def test_invalid_t_max(self):
        out = GeneratedOutcomes(np.array([1.0]), np.array([1]), np.zeros(1))
        with pytest.raises(ValueError):
            generation_diagnostics(out, t_max=0.0)
