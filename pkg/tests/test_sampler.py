"""DDIM and ancestral samplers."""

import numpy as np
import pytest

from physdiff.denoiser import OracleNoiseNet, build_denoiser
from physdiff.loss import estimate_x0
from physdiff.sampler import (SamplerConfig, ddim_jump, ddim_timesteps, generate, predict_x0,
                              sample_ancestral, sample_ddim2, sample_ddimK)
from physdiff.schedule import build_schedule, forward_noise


@pytest.fixture
def sched():
    return build_schedule("cosine", 100, 1e-4, 0.03)


@pytest.fixture
def x0(rng):
    return rng.standard_normal((6, 3))


def _oracle(x0, sched):
    return OracleNoiseNet(x0, sched.alpha_bar)


class TestOracleRecovery:
    def test_ddim2(self, x0, sched):
        out = sample_ddim2(_oracle(x0, sched), None, sched, np.random.default_rng(0), n=6, shape=(3,))
        assert np.abs(out - x0).max() < 1e-8

    @pytest.mark.parametrize("K", [2, 4, 10])
    def test_ddimK(self, x0, sched, K):
        out = sample_ddimK(_oracle(x0, sched), None, sched, K, np.random.default_rng(1), n=6,
                           shape=(3,))
        assert np.abs(out - x0).max() < 1e-8

    @pytest.mark.parametrize("K", [1, 2, 4])
    @pytest.mark.parametrize("t", [10, 57, 100])
    def test_estimate_x0(self, x0, sched, K, t, rng):
        x_t = forward_noise(x0, t, rng.standard_normal(x0.shape), sched)
        out = estimate_x0(_oracle(x0, sched), x_t, t, None, sched, K).data
        assert np.abs(out - x0).max() < 1e-8

    def test_ancestral_without_noise_recovers(self, x0, sched):
        quiet = sched.__class__(sched.T, sched.beta, sched.alpha, sched.alpha_bar,
                                np.zeros_like(sched.B))
        out = sample_ancestral(_oracle(x0, quiet), None, quiet, np.random.default_rng(2), n=6,
                               shape=(3,))
        assert np.abs(out - x0).max() < 1e-8


class TestStructure:
    def test_ddim2_evaluates_at_T_then_1(self, x0, sched):
        net = _oracle(x0, sched)
        sample_ddim2(net, None, sched, np.random.default_rng(0), n=6, shape=(3,))
        assert [int(c[0]) for c in net.calls] == [100, 1]

    def test_ddim2_line_identity(self, x0, sched):
        # x1 is a deterministic jump, x0 from x1 inverts the last step exactly
        net = _oracle(x0, sched)
        out, aux = sample_ddim2(net, None, sched, np.random.default_rng(3), n=6, shape=(3,),
                                return_x1=True)
        ab1 = sched.alpha_bar[1]
        expected_x1 = ddim_jump(aux["x_T"], aux["x0_T"], 100, 1, sched)
        np.testing.assert_allclose(aux["x1"], expected_x1, rtol=0, atol=1e-12)
        eps1 = (aux["x1"] - np.sqrt(ab1) * x0) / np.sqrt(1 - ab1)
        np.testing.assert_allclose(out, predict_x0(aux["x1"], eps1, 1, sched), atol=1e-12)

    def test_ddimK_with_K2_equals_ddim2(self, sched, rng):
        net = build_denoiser(data_shape=(3,), hidden=8, depth=1, time_dim=8)
        a = sample_ddim2(net, None, sched, np.random.default_rng(5), n=4)
        b = sample_ddimK(net, None, sched, 2, np.random.default_rng(5), n=4)
        np.testing.assert_array_equal(a, b)

    def test_ancestral_with_zero_B_equals_full_ddim(self, sched):
        net = build_denoiser(data_shape=(2,), hidden=8, depth=1, time_dim=8)
        quiet = sched.__class__(sched.T, sched.beta, sched.alpha, sched.alpha_bar,
                                np.zeros_like(sched.B))
        a = sample_ancestral(net, None, quiet, np.random.default_rng(6), n=5)
        b = sample_ddimK(net, None, quiet, 100, np.random.default_rng(6), n=5)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("K", [1, 2, 3, 7, 100])
    def test_timesteps_strictly_decreasing(self, sched, K):
        seq = ddim_timesteps(100, K, sched)
        assert seq[0] == 100 and len(seq) == K
        if K > 1:
            assert seq[-1] == 1 and np.all(np.diff(seq) < 0)

    def test_timesteps_too_many(self, sched):
        with pytest.raises(ValueError):
            ddim_timesteps(5, 6, sched)

    def test_ddimK_rejects_bad_K(self, sched):
        net = build_denoiser(data_shape=(2,), hidden=4, depth=1, time_dim=4)
        with pytest.raises(ValueError):
            sample_ddimK(net, None, sched, 0, np.random.default_rng(0))

    @pytest.mark.parametrize("kind", ["ddim2", "ddimK", "ancestral"])
    def test_seeded_generate_is_deterministic(self, sched, kind):
        net = build_denoiser(data_shape=(2,), hidden=8, depth=1, time_dim=8)
        cfg = SamplerConfig(kind, 3, seed=11)
        a = generate(net, None, sched, cfg, n=4)
        b = generate(net, None, sched, cfg, n=4)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (4, 2) and np.all(np.isfinite(a))

    def test_condition_sets_batch(self, sched):
        net = build_denoiser(data_shape=(2,), hidden=8, depth=1, time_dim=8, cond_kind="film",
                             cond_dim=3, film_hidden=4)
        out = sample_ddim2(net, np.zeros((7, 3)), sched, np.random.default_rng(0))
        assert out.shape == (7, 2)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            SamplerConfig("euler")
