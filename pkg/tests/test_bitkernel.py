import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitdiff.binarize import ActScaleParams, BinaryConv2d, xnor_conv
from bitdiff.bitkernel import (
    InferenceConvUnit,
    bench_conv,
    binary_inference_conv,
    pack_signs,
    xnor_popcount_conv,
)
from bitdiff.tensor import ShapeError, Tensor, conv2d


def signs(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape).astype(np.float32)


def dense(I, W, stride=1, padding=0):
    return conv2d(Tensor(I.astype(np.float64)), Tensor(W.astype(np.float64)), stride, padding).data


def test_pack_zero_is_positive():
    p = pack_signs(np.array([1.0, -1.0, 0.0]).reshape(3, 1, 1))
    assert p.words.shape == (1, 1, 1)
    assert int(p.words[0, 0, 0]) & 0b111 == 0b101


def test_pack_65_channels_word_boundary():
    p = pack_signs(np.ones((65, 2, 2)))
    assert p.n_words == 2 and p.pad_bits == 63


@pytest.mark.parametrize("c", [1, 63, 64, 65, 448])
def test_unpack_roundtrip(c):
    x = np.random.default_rng(c).standard_normal((2, c, 3, 4))
    np.testing.assert_array_equal(pack_signs(x).unpack(), np.where(x >= 0, 1.0, -1.0))


def test_all_ones_interior():
    I = np.ones((1, 6, 6), np.float32)
    W = np.ones((1, 1, 3, 3), np.float32)
    out = xnor_popcount_conv(pack_signs(I), pack_signs(W), padding=1).data
    assert np.all(out[:, 1:-1, 1:-1] == 9)
    np.testing.assert_array_equal(out, dense(I[None], W, padding=1)[0])


def test_perfect_agreement_peak():
    rng = np.random.default_rng(0)
    W = signs(rng, (1, 5, 3, 3))
    I = signs(rng, (5, 7, 7))
    I[:, 2:5, 1:4] = W[0]
    out = xnor_popcount_conv(pack_signs(I), pack_signs(W)).data
    assert out[0, 2, 1] == 5 * 9


@settings(max_examples=40, deadline=None)
@given(
    c=st.sampled_from([1, 2, 7, 63, 64, 65, 130]), m=st.integers(1, 5), h=st.integers(3, 9), w=st.integers(3, 9),
    k=st.sampled_from([1, 2, 3]), stride=st.integers(1, 2), padding=st.integers(0, 2), seed=st.integers(0, 2**16),
)
def test_popcount_conv_matches_dense(c, m, h, w, k, stride, padding, seed):
    rng = np.random.default_rng(seed)
    I, W = signs(rng, (2, c, h, w)), signs(rng, (m, c, k, k))
    out = xnor_popcount_conv(pack_signs(I), pack_signs(W), stride, padding).data
    assert out.dtype == np.int64
    np.testing.assert_array_equal(out, dense(I, W, stride, padding).astype(np.int64))


def test_popcount_conv_shape_errors():
    with pytest.raises(ShapeError):
        xnor_popcount_conv(pack_signs(np.ones((3, 4, 4))), pack_signs(np.ones((1, 2, 3, 3))))


def _train_path(I, W, k, padding):
    p = ActScaleParams.create("bidm_learnable_k", kh=W.shape[2], kw=W.shape[3], dtype=np.float64)
    p.k_filter = Tensor(k)
    return xnor_conv(Tensor(I.astype(np.float64)), Tensor(W.astype(np.float64)), p, padding=padding).data


@pytest.mark.parametrize("c,h,m,padding", [(3, 5, 2, 1), (64, 6, 4, 0), (65, 8, 3, 1), (130, 4, 5, 1)])
def test_inference_matches_training_path(c, h, m, padding):
    rng = np.random.default_rng(c)
    I = rng.standard_normal((2, c, h, h)).astype(np.float32)
    W = rng.standard_normal((m, c, 3, 3)).astype(np.float32)
    k = rng.uniform(0.0, 0.3, (1, 1, 3, 3))
    unit = InferenceConvUnit.from_float(W, k, padding=padding)
    out = binary_inference_conv(I, unit).data
    assert np.max(np.abs(out - _train_path(I, W, k, padding))) < 1e-4


def test_zero_alpha_annihilates():
    rng = np.random.default_rng(1)
    W = rng.standard_normal((2, 3, 3, 3))
    unit = InferenceConvUnit.from_float(W, np.full((1, 1, 3, 3), 1 / 9), padding=1)
    unit = InferenceConvUnit(unit.packed_weights, np.zeros(2), unit.k_prime, 1, 1)
    assert not np.any(binary_inference_conv(rng.standard_normal((1, 3, 4, 4)), unit).data)


def test_degenerate_pipeline_equals_popcount():
    rng = np.random.default_rng(2)
    I = signs(rng, (1, 1, 6, 6))
    W = signs(rng, (2, 1, 3, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    unit = InferenceConvUnit.from_float(W, k, padding=1)
    np.testing.assert_array_equal(
        binary_inference_conv(I, unit).data,
        xnor_popcount_conv(pack_signs(I), pack_signs(W), padding=1).data.astype(np.float32),
    )


def test_unit_from_trained_layer():
    rng = np.random.default_rng(3)
    conv = BinaryConv2d(rng, 5, 4, act_mode="bidm_learnable_k")
    conv.k_filter.data = rng.uniform(0.0, 0.3, (1, 1, 3, 3)).astype(np.float32)
    x = rng.standard_normal((2, 5, 6, 6)).astype(np.float32)
    unit = InferenceConvUnit.from_layer(conv)
    out = binary_inference_conv(x, unit).data + conv.bias.data.reshape(1, -1, 1, 1)
    assert np.max(np.abs(out - conv(Tensor(x)).data)) < 1e-4


def test_bench_requires_three_reps():
    with pytest.raises(ValueError):
        bench_conv(((8, 8, 8), (8, 8, 3, 3)), repetitions=0)


def test_bench_small_shape_reports_fields():
    r = bench_conv(((64, 8, 8), (64, 64, 3, 3)), repetitions=3)
    assert set(r) >= {"fp_ns", "packed_ns", "speedup"}
    assert r["speedup"] > 0
