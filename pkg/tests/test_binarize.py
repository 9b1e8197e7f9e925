import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitdiff.binarize import (
    SIGMA_FLOOR,
    ActMode,
    ActScaleParams,
    BinaryConv2d,
    act_binarize,
    binarize_weights,
    sigma_init,
    xnor_conv,
)
from bitdiff.tensor import ShapeError, Tensor, conv2d
from conftest import numeric_grad, rel_err, t64


@pytest.mark.parametrize("w,expected", [([1, -1, 1, -1], 1.0), ([3, -1], 2.0)])
def test_sigma_init_is_mean_abs(w, expected):
    assert sigma_init(np.array(w, float)) == expected


def test_sigma_init_zero_weights_floor():
    assert sigma_init(np.zeros(5)) == SIGMA_FLOOR


def test_binarize_weights_examples():
    out = binarize_weights(Tensor(np.array([0.2, -0.7])), Tensor(np.array(0.5)))
    np.testing.assert_array_equal(out.data, [0.5, -0.5])
    pos = binarize_weights(Tensor(np.array([0.1, 2.0, 0.3])), Tensor(np.array(1.7)))
    np.testing.assert_array_equal(pos.data, np.full(3, 1.7))


def test_sigma_gradient_counts_signs():
    w = Tensor(np.array([0.3, -0.2, 0.0, 1.5, -4.0]))
    sigma = Tensor(np.array(0.8), requires_grad=True)
    binarize_weights(w, sigma).sum().backward()
    assert float(sigma.grad) == 3 - 2


def test_binarize_weights_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        binarize_weights(Tensor(np.ones(3)), Tensor(np.array(0.0)))


def test_naive_and_constant_k():
    a = Tensor(np.array([0.4, -0.1]))
    np.testing.assert_array_equal(act_binarize(a, ActScaleParams.create("naive")).data, [1, -1])
    p = ActScaleParams.create("constant_K", channels=2, K_init=2.0)
    np.testing.assert_array_equal(act_binarize(a, p).data, [2, -2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=20), st.integers(0, 2**20))
def test_naive_sign_is_odd(mags, seed):
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=len(mags))
    x = np.array(mags) * signs
    p = ActScaleParams.create("naive")
    np.testing.assert_array_equal(act_binarize(Tensor(-x), p).data, -act_binarize(Tensor(x), p).data)


def test_xnor_conv_hand_value():
    p = ActScaleParams.create("xnor_dynamic", kh=3, kw=3)
    out = xnor_conv(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), p)
    assert out.data.item() == pytest.approx(9.0, abs=1e-6)


def test_xnor_conv_lossless_on_binary_data():
    rng = np.random.default_rng(0)
    c = 4
    plane = rng.choice([-1.0, 1.0], size=(1, 1, 6, 6))
    I = np.repeat(plane, c, axis=1)
    sigma = 0.37
    W = sigma * rng.choice([-1.0, 1.0], size=(3, c, 3, 3))
    p = ActScaleParams.create("xnor_dynamic", kh=3, kw=3, dtype=np.float64)
    out = xnor_conv(t64(I), t64(W), p, padding=0)
    np.testing.assert_allclose(out.data, conv2d(t64(I), t64(W)).data, rtol=1e-12)


def test_xnor_conv_rejects_naive_mode():
    with pytest.raises(ValueError):
        xnor_conv(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), ActScaleParams.create("naive"))
    p = ActScaleParams.create("xnor_dynamic", kh=3, kw=3)
    with pytest.raises(ShapeError):
        xnor_conv(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), p)


def _bidm(I, W, k):
    p = ActScaleParams.create("bidm_learnable_k", kh=3, kw=3, dtype=np.float64)
    p.k_filter = k
    return xnor_conv(I, W, p, padding=1)


def test_k_filter_gradient_finite_difference():
    rng = np.random.default_rng(1)
    I = rng.standard_normal((1, 2, 4, 4))
    W = rng.standard_normal((3, 2, 3, 3))
    k = rng.uniform(0.05, 0.2, size=(1, 1, 3, 3))
    up = rng.standard_normal((1, 3, 4, 4))
    kt = t64(k, True)
    (_bidm(t64(I), t64(W), kt) * t64(up)).sum().backward()
    num = numeric_grad(lambda: float((_bidm(t64(I), t64(W), t64(k)).data * up).sum()), k)
    assert rel_err(kt.grad, num) < 1e-3


def test_frozen_k_matches_dynamic_mode_bitwise():
    rng = np.random.default_rng(2)
    I = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
    W = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    dyn = ActScaleParams.create("xnor_dynamic", kh=3, kw=3)
    learn = ActScaleParams.create("bidm_learnable_k", kh=3, kw=3)
    assert learn.k_filter.requires_grad and not dyn.k_filter.requires_grad
    np.testing.assert_array_equal(xnor_conv(I, W, dyn, padding=1).data, xnor_conv(I, W, learn, padding=1).data)


def test_sigma_gradient_through_binary_conv():
    rng = np.random.default_rng(3)
    conv = BinaryConv2d(rng, 2, 3, act_mode="bidm_learnable_k")
    for name, t in conv.named_tensors().items():
        t.data = t.data.astype(np.float64)
    x = rng.standard_normal((1, 2, 4, 4))
    up = rng.standard_normal((1, 3, 4, 4))
    (conv(t64(x)) * t64(up)).sum().backward()
    s = conv.sigma.data.copy()

    def f():
        conv.sigma.data = s
        return float((conv(t64(x)).data * up).sum())

    num = numeric_grad(f, s)
    assert rel_err(conv.sigma.grad, num) < 1e-3


@pytest.mark.parametrize("mode", list(ActMode))
def test_binary_conv_modes_run_and_train(mode):
    rng = np.random.default_rng(4)
    conv = BinaryConv2d(rng, 3, 5, act_mode=mode)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)).astype(np.float32))
    y = conv(x)
    assert y.shape == (2, 5, 6, 6)
    y.sum().backward()
    assert conv.weight.grad is not None and conv.sigma.grad is not None
    if mode is ActMode.BIDM_LEARNABLE_K:
        assert conv.k_filter.grad is not None
    if mode is ActMode.CONSTANT_K:
        assert conv.K.grad is not None


def test_effective_weight_is_sigma_times_sign():
    rng = np.random.default_rng(5)
    conv = BinaryConv2d(rng, 2, 2)
    w = conv.effective_weight().data
    assert set(np.unique(np.abs(w))) == {np.float32(conv.sigma.data)}
    conv.weight.data = np.abs(conv.weight.data)
    conv.reset_sigma()
    np.testing.assert_allclose(conv.effective_weight().data, np.full_like(w, conv.sigma.data))


def test_binary_conv_equals_xnor_conv_on_effective_weight():
    rng = np.random.default_rng(6)
    conv = BinaryConv2d(rng, 3, 4, act_mode="xnor_dynamic")
    conv.bias.data[:] = 0
    x = Tensor(rng.standard_normal((2, 3, 5, 5)).astype(np.float32))
    ref = xnor_conv(x, conv.effective_weight(), conv._params, padding=1)
    np.testing.assert_allclose(conv(x).data, ref.data, rtol=1e-6, atol=1e-7)
