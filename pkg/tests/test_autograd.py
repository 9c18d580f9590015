"""Tensor, tape and primitive tests, including finite-difference gradient oracles."""

import numpy as np
import pytest

from physdiff import autograd as ag
from physdiff.autograd import NumericError, ShapeError, TapeError, Tensor
from physdiff.gradcheck import gradient_errors, relative_error

SEEDS = range(10)


def leaf(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def projected(out, seed=99):
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    return ag.tsum(out * proj)


# -- forward examples -------------------------------------------------------


class TestForward:
    def test_matmul_identity(self, rng):
        b = rng.standard_normal((3, 5))
        out = ag.matmul(Tensor(np.eye(3)), Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_relu_definition(self):
        np.testing.assert_array_equal(ag.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_conv_1x1_scales_field(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        out = ag.conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0)))
        np.testing.assert_allclose(out.data, 2.0 * x, rtol=0, atol=1e-15)

    def test_conv_preserves_size_with_padding(self, rng):
        out = ag.conv2d(Tensor(rng.standard_normal((2, 3, 8, 8))),
                        Tensor(rng.standard_normal((5, 3, 3, 3))))
        assert out.shape == (2, 5, 8, 8)

    def test_conv_matches_direct_sum(self, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((1, 2, 3, 3))
        out = ag.conv2d(Tensor(x), Tensor(w)).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        i, j = 2, 3
        manual = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[0])
        assert out[0, 0, i, j] == pytest.approx(manual, abs=1e-13)

    def test_softmax_rows_sum_to_one(self, rng):
        s = ag.softmax(Tensor(rng.standard_normal((4, 7)) * 10))
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_moments(self, rng):
        y = ag.layer_norm(Tensor(rng.standard_normal((3, 16)) * 5 + 2)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)

    def test_pool_then_upsample_of_constant_blocks(self):
        x = np.kron(np.arange(4.0).reshape(1, 1, 2, 2), np.ones((2, 2)))
        pooled = ag.avg_pool2d(Tensor(x))
        np.testing.assert_array_equal(pooled.data, np.arange(4.0).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(ag.upsample_nearest2d(pooled).data, x)

    def test_l1_norm_and_concat(self):
        assert ag.l1_norm(Tensor([3.0, -4.0])).item() == 7.0
        out = ag.concat([Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 2)))], axis=1)
        assert out.shape == (2, 3)

    def test_default_dtype_is_float64(self):
        assert Tensor([1, 2, 3]).dtype == np.float64


class TestErrors:
    def test_shape_mismatch_names_primitive_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError, match="add"):
            ag.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_output_is_numeric_error(self):
        with pytest.raises(NumericError):
            ag.log(Tensor([0.0]))
        with pytest.raises(NumericError):
            ag.exp(Tensor([1000.0]))

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor([np.nan])

    def test_backward_requires_scalar(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            ag.backward(w * 2.0)

    def test_backward_on_cleared_tape(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = ag.tsum(w * w)
        ag.get_tape().clear()
        with pytest.raises(TapeError):
            ag.backward(loss)

    def test_second_backward_fails(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = ag.tsum(w * w)
        ag.backward(loss)
        with pytest.raises(TapeError):
            ag.backward(loss)


class TestTape:
    def test_records_only_with_grad(self):
        tape = ag.get_tape()
        ag.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0
        ag.add(Tensor([1.0], requires_grad=True), Tensor([2.0]))
        assert len(tape) == 1

    def test_no_grad_suppresses_recording(self):
        w = Tensor([1.0], requires_grad=True)
        with ag.no_grad():
            ag.tsum(w * w)
        assert len(ag.get_tape()) == 0

    def test_backward_clears_tape(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        ag.backward(ag.tsum(w * w))
        assert len(ag.get_tape()) == 0

    def test_quadratic_gradient(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        ag.backward(ag.tsum(w * w))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_l1_subgradient(self):
        w = Tensor([3.0, -4.0, 0.0], requires_grad=True)
        ag.backward(ag.l1_norm(w))
        np.testing.assert_array_equal(w.grad, [1.0, -1.0, 0.0])

    def test_reused_input_accumulates(self):
        w = Tensor([3.0], requires_grad=True)
        ag.backward(ag.tsum(w * w * w))
        np.testing.assert_allclose(w.grad, [27.0])

    def test_backward_linearity(self, rng):
        w = leaf(rng, 5)

        def f():
            return ag.tsum(ag.tanh(w) * 3.0)

        def g():
            return ag.tsum(ag.square(w))

        ag.backward(f())
        gf = w.grad.copy()
        w.grad = None
        ag.backward(g())
        gg = w.grad.copy()
        w.grad = None
        ag.backward(ag.scale(f(), 2.0) + ag.scale(g(), -0.5))
        np.testing.assert_allclose(w.grad, 2.0 * gf - 0.5 * gg, atol=1e-12)


# -- gradient oracle --------------------------------------------------------


def _unary(name, positive=False):
    fn = getattr(ag, name)

    def build(rng):
        x = leaf(rng, 3, 4, positive=positive)
        return (lambda: projected(fn(x))), [x]

    return build


def _binary(name, positive_b=False):
    fn = getattr(ag, name)

    def build(rng):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, positive=positive_b)  # broadcast along the first axis
        return (lambda: projected(fn(a, b))), [a, b]

    return build


def _away_from_kink(rng, *shape):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    return Tensor(x, requires_grad=True)


def _relu(rng):
    x = _away_from_kink(rng, 3, 4)
    return (lambda: projected(ag.relu(x))), [x]


def _abs(rng):
    x = _away_from_kink(rng, 3, 4)
    return (lambda: projected(ag.abs(x))), [x]


def _l1(rng):
    x = _away_from_kink(rng, 6)
    return (lambda: ag.l1_norm(x)), [x]


def _clamp(rng):
    x = _away_from_kink(rng, 3, 4)
    return (lambda: projected(ag.clamp_min(x, 0.0))), [x]


def _matmul(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    return (lambda: projected(ag.matmul(a, b))), [a, b]


def _conv(rng):
    x, w, b = leaf(rng, 2, 2, 5, 5), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    return (lambda: projected(ag.conv2d(x, w, b))), [x, w, b]


def _pool(rng):
    x = leaf(rng, 1, 2, 4, 4)
    return (lambda: projected(ag.avg_pool2d(x))), [x]


def _upsample(rng):
    x = leaf(rng, 1, 2, 2, 3)
    return (lambda: projected(ag.upsample_nearest2d(x))), [x]


def _softmax(rng):
    x = leaf(rng, 3, 5)
    return (lambda: projected(ag.softmax(x))), [x]


def _layer_norm(rng):
    x = leaf(rng, 3, 6)
    return (lambda: projected(ag.layer_norm(x))), [x]


def _reductions(rng):
    x = leaf(rng, 3, 4)
    return (lambda: projected(ag.mean(x, axis=0)) + ag.tsum(ag.tsum(x, axis=1) * 0.3)), [x]


def _shape_ops(rng):
    x = leaf(rng, 2, 3, 4)
    y = leaf(rng, 2, 3, 2)
    return (lambda: projected(ag.concat([ag.transpose(x, (0, 2, 1)).reshape(2, 3, 4), y], axis=2)
                              [:, 1:, ::2])), [x, y]


def _fancy_index(rng):
    x = leaf(rng, 5, 2)
    idx = np.array([0, 3, 3, 1])
    return (lambda: projected(ag.getitem(x, idx))), [x]


def _power(rng):
    x = leaf(rng, 3, 4, positive=True)
    return (lambda: projected(ag.power(x, 1.7))), [x]


def _scale_neg(rng):
    x = leaf(rng, 3, 4)
    return (lambda: projected(ag.neg(ag.scale(x, -2.5)))), [x]


PRIMITIVES = {
    "add": _binary("add"), "sub": _binary("sub"), "mul": _binary("mul"),
    "div": _binary("div", positive_b=True), "scale_neg": _scale_neg, "power": _power,
    "square": _unary("square"), "sqrt": _unary("sqrt", positive=True), "exp": _unary("exp"),
    "log": _unary("log", positive=True), "tanh": _unary("tanh"), "silu": _unary("silu"),
    "abs": _abs, "relu": _relu, "clamp_min": _clamp, "l1_norm": _l1, "matmul": _matmul,
    "conv2d": _conv, "avg_pool2d": _pool, "upsample": _upsample, "softmax": _softmax,
    "layer_norm": _layer_norm, "reductions": _reductions, "shape_ops": _shape_ops,
    "fancy_index": _fancy_index,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    worst = 0.0
    for seed in SEEDS:
        fn, params = PRIMITIVES[name](np.random.default_rng(seed))
        worst = max(worst, *gradient_errors(fn, params, h=1e-5))
    assert worst < 1e-4, f"{name}: relative error {worst:.2e}"


def test_relative_error_helper():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
