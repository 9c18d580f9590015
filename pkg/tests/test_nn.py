"""Layers, parameter bookkeeping and Adam."""

import numpy as np
import pytest

from physdiff import autograd as ag
from physdiff.autograd import Tensor
from physdiff.gradcheck import finite_diff_check
from physdiff.nn import MLP, ChannelLayerNorm, Conv2d, LayerNorm, Linear, Module, Parameter
from physdiff.optim import Adam, adam_step


class TestLayers:
    def test_linear_init_bounds_and_zero_bias(self, rng):
        lin = Linear(50, 7, rng)
        assert np.all(np.abs(lin.weight.data) <= np.sqrt(1 / 50))
        np.testing.assert_array_equal(lin.bias.data, 0.0)

    def test_linear_zero_init(self, rng):
        lin = Linear(4, 3, rng, zero_init=True)
        out = lin(Tensor(rng.standard_normal((2, 4))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_linear_shape_error(self, rng):
        with pytest.raises(ag.ShapeError, match="Linear"):
            Linear(4, 3, rng)(Tensor(np.ones((2, 5))))

    def test_conv_init_bound(self, rng):
        conv = Conv2d(3, 4, 3, rng)
        assert np.all(np.abs(conv.weight.data) <= np.sqrt(1 / 27))

    def test_channel_layer_norm_per_sample(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)) * np.array([1.0, 10.0]).reshape(2, 1, 1, 1)
        y = ChannelLayerNorm(3)(Tensor(x)).data
        np.testing.assert_allclose(y.reshape(2, -1).mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.reshape(2, -1).std(axis=1), 1.0, atol=1e-3)

    @pytest.mark.parametrize("seed", range(10))
    def test_linear_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        lin = Linear(4, 3, r)
        lin.bias.data[:] = r.standard_normal(3)
        assert finite_diff_check(lin, Tensor(r.standard_normal((5, 4)))) < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_two_layer_net_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        net = MLP([3, 8, 2], r)
        assert finite_diff_check(net, Tensor(r.standard_normal((4, 3)))) < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_norm_layers_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        ln = LayerNorm(6)
        ln.weight.data[:] = r.standard_normal(6)
        assert finite_diff_check(ln, Tensor(r.standard_normal((3, 6)))) < 1e-4
        cln = ChannelLayerNorm(2)
        cln.weight.data[:] = r.standard_normal((2, 1, 1))
        assert finite_diff_check(cln, Tensor(r.standard_normal((2, 2, 3, 3)))) < 1e-4


class TestModule:
    def test_named_parameters_walk_lists(self, rng):
        net = MLP([2, 3, 4], rng)
        names = [n for n, _ in net.named_parameters()]
        assert names == ["layers.0.weight", "layers.0.bias", "layers.1.weight", "layers.1.bias"]
        assert net.num_parameters() == 2 * 3 + 3 + 3 * 4 + 4

    def test_state_dict_round_trip(self, rng):
        a, b = MLP([2, 3], rng), MLP([2, 3], rng)
        b.load_state_dict(a.state_dict())
        for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data)

    def test_state_dict_rejects_bad_shape(self, rng):
        net = MLP([2, 3], rng)
        state = net.state_dict()
        state["layers.0.weight"] = np.zeros((3, 3))
        with pytest.raises(ValueError):
            net.load_state_dict(state)

    def test_parameter_requires_grad(self):
        assert Parameter(np.zeros(2)).requires_grad

    def test_forward_not_implemented(self):
        with pytest.raises(NotImplementedError):
            Module()(1)


class TestAdam:
    def _param(self, value):
        return Parameter(np.array(value, dtype=float))

    def test_zero_gradient_keeps_parameters(self):
        p = self._param([1.0, -2.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.array([0.5, 0.5])
        opt.step()
        v_prev = opt.v[0].copy()
        before = p.data.copy()
        m_prev = opt.m[0].copy()
        p.grad = np.zeros(2)
        opt.step()
        # the remaining motion comes only from the first-moment memory
        c1, c2 = 1 - 0.9 ** 2, 1 - 0.999 ** 2
        expected = before - 0.1 * (0.9 * m_prev / c1) / (np.sqrt(0.999 * v_prev / c2) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(opt.v[0], 0.999 * v_prev)

    def test_zero_gradient_from_fresh_state(self):
        p = self._param([1.0, -2.0])
        opt = Adam([p])
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        np.testing.assert_array_equal(opt.v[0], 0.0)

    def test_first_step_is_signed_lr(self):
        g = np.array([0.3, -2.0, 5.0])
        p = self._param(np.zeros(3))
        opt = Adam([p], lr=1e-3, eps=1e-8)
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(p.data, -1e-3 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-9)
        np.testing.assert_allclose(p.data, -1e-3 * np.sign(g), rtol=0, atol=1e-9)

    def test_two_unit_steps(self):
        p = self._param([0.0])
        opt = Adam([p], lr=1e-3)
        for _ in range(2):
            p.grad = np.array([1.0])
            opt.step()
        assert p.data[0] == pytest.approx(-2e-3, abs=1e-10)
        assert opt.step_count == 2

    def test_grads_zeroed_after_step(self):
        p = self._param([1.0])
        opt = Adam([p])
        p.grad = np.array([1.0])
        opt.step()
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_missing_gradient_raises(self):
        p, q = self._param([1.0]), self._param([2.0])
        opt = Adam([p, q])
        p.grad = np.array([1.0])
        with pytest.raises(RuntimeError, match="no gradient"):
            opt.step()
        assert opt.step_count == 0
        assert p.data[0] == 1.0

    def test_functional_step_checks_params(self):
        p, q = self._param([1.0]), self._param([2.0])
        opt = Adam([p])
        p.grad = np.array([1.0])
        adam_step([p], opt)
        assert opt.step_count == 1
        with pytest.raises(ValueError):
            adam_step([q], opt)

    def test_negative_lr_rejected(self):
        with pytest.raises(ValueError):
            Adam([], lr=-1.0)
