"""Bit-packed XNOR/popcount convolution and the six-step binary inference path.

Sign bits are packed 64 per ``uint64`` word along the channel axis (bit set
means +1) and stored channel-last, so every output tap reduces to a short
loop of XOR + popcount over contiguous words.  Channel padding bits are set
to 1 in both operands; they cancel under XOR and never reach the count.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .tensor import ShapeError, Tensor, conv2d, conv_output_size

WORD_BITS = 64
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class PackedBitTensor:
    """Sign bits of ``[c,h,w]``, ``[b,c,h,w]`` or ``[m,c,kh,kw]`` data.

    ``words`` has the channel axis moved last and replaced by the word index.
    """

    logical_shape: tuple
    words: np.ndarray
    pad_bits: int

    @property
    def channels(self) -> int:
        return self.logical_shape[0 if len(self.logical_shape) == 3 else 1]

    @property
    def n_words(self) -> int:
        return self.words.shape[-1]

    @cached_property
    def tap_sums(self) -> np.ndarray:
        """``sum_c sign(x)`` at every non-channel position, from the packed words."""
        ones = np.unpackbits(self.words.view(np.uint8), axis=-1).sum(axis=-1, dtype=np.int64)
        return 2 * (ones - self.pad_bits) - self.channels

    def unpack(self) -> np.ndarray:
        """Return the ``+1/-1`` float32 tensor in ``logical_shape``."""
        bits = np.unpackbits(self.words.view(np.uint8), axis=-1, bitorder="little")[..., : self.channels]
        signs = np.where(bits.astype(bool), 1.0, -1.0).astype(np.float32)
        axis = 0 if len(self.logical_shape) == 3 else 1
        return np.moveaxis(signs, -1, axis)


def pack_signs(x) -> PackedBitTensor:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim not in (3, 4):
        raise ShapeError(f"pack_signs expects a 3-d or 4-d tensor, got shape {arr.shape}")
    axis = 0 if arr.ndim == 3 else 1
    c = arr.shape[axis]
    n_words = max(1, math.ceil(c / WORD_BITS))
    pad_bits = n_words * WORD_BITS - c
    bits = np.moveaxis(arr >= 0, axis, -1)
    if pad_bits:
        pad = [(0, 0)] * (bits.ndim - 1) + [(0, pad_bits)]
        bits = np.pad(bits, pad, constant_values=True)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)
    return PackedBitTensor(tuple(arr.shape), words, pad_bits)


@numba.njit(inline="always")
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@numba.njit(cache=True)
def _xnor_gemm(inp, w, oh, ow, stride, n_valid, out):
    # inp: [H, W, nw] padded input words; w: [m, kh*kw*nw]; out: [m, oh, ow]
    m = w.shape[0]
    kh = w.shape[1]
    kw = w.shape[2]
    nw = inp.shape[2]
    K = kh * kw * nw
    wf = w.reshape(m, K)
    buf = np.empty(K, np.uint64)
    for y in range(oh):
        for x in range(ow):
            p = 0
            for i in range(kh):
                for j in range(kw):
                    for q in range(nw):
                        buf[p] = inp[y * stride + i, x * stride + j, q]
                        p += 1
            for o in range(m):
                acc = np.uint64(0)
                for q in range(K):
                    acc += _popcount64(buf[q] ^ wf[o, q])
                out[o, y, x] = n_valid - 2 * np.int64(acc)


def _border_taps(h, w, kh, kw, stride, padding):
    """Mask ``[oh, ow, kh, kw]`` of taps that land in the zero-padding border."""
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    ys = np.arange(oh)[:, None] * stride + np.arange(kh)[None, :] - padding
    xs = np.arange(ow)[:, None] * stride + np.arange(kw)[None, :] - padding
    out_y = (ys < 0) | (ys >= h)
    out_x = (xs < 0) | (xs >= w)
    return out_y[:, None, :, None] | out_x[None, :, None, :]


def xnor_popcount_conv(I_b: PackedBitTensor, W_b: PackedBitTensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Integer convolution of packed sign tensors.

    Equals a dense cross-correlation of the unpacked ``+1/-1`` tensors with
    zero padding.  The border is packed as +1 and its contribution removed
    afterwards, keeping the inner loop branch-free.
    """
    if len(W_b.logical_shape) != 4:
        raise ShapeError(f"weight must be [m,c,kh,kw], got {W_b.logical_shape}")
    if I_b.channels != W_b.channels:
        raise ShapeError(f"channel mismatch: input has {I_b.channels}, weight expects {W_b.channels}")
    batched = len(I_b.logical_shape) == 4
    words = I_b.words if batched else I_b.words[None]
    _, h, w, _ = words.shape
    m, c, kh, kw = W_b.logical_shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError("kernel larger than padded input")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if padding:
        words = np.pad(words, ((0, 0), (padding, padding), (padding, padding), (0, 0)), constant_values=_ALL_ONES)
    correction = None
    if padding:
        border = _border_taps(h, w, kh, kw, stride, padding).reshape(oh, ow, kh * kw)
        ys, xs = np.nonzero(border.any(axis=-1))
        if len(ys):
            sums = W_b.tap_sums.reshape(m, kh * kw)
            correction = (ys, xs, border[ys, xs].astype(np.int64) @ sums.T)
    out = np.empty((words.shape[0], m, oh, ow), dtype=np.int64)
    wwords = np.ascontiguousarray(W_b.words)
    for n in range(words.shape[0]):
        _xnor_gemm(np.ascontiguousarray(words[n]), wwords, oh, ow, stride, c * kh * kw, out[n])
    if correction is not None:
        ys, xs, corr = correction
        out[:, :, ys, xs] -= corr.T[None]
    return Tensor(out if batched else out[0])


@dataclass(frozen=True)
class InferenceConvUnit:
    """Export-time form of a binary conv: packed weights, alpha and ``k' = k / c``."""

    packed_weights: PackedBitTensor
    alpha: np.ndarray
    k_prime: np.ndarray
    stride: int = 1
    padding: int = 0

    @classmethod
    def from_float(cls, weight, k_filter, stride: int = 1, padding: int = 0) -> "InferenceConvUnit":
        W = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
        k = k_filter.data if isinstance(k_filter, Tensor) else np.asarray(k_filter)
        c = W.shape[1]
        alpha = np.abs(W).reshape(W.shape[0], -1).mean(axis=1, dtype=np.float64)
        return cls(pack_signs(W), alpha, np.asarray(k, np.float64) / c, stride, padding)

    @classmethod
    def from_layer(cls, conv) -> "InferenceConvUnit":
        """Freeze a trained :class:`~bitdiff.binarize.BinaryConv2d` (bias not included)."""
        k = getattr(conv, "k_filter", None)
        if k is None:
            raise ValueError("only xnor_dynamic / bidm_learnable_k layers have an inference unit")
        return cls.from_float(conv.effective_weight(), k, conv.stride, conv.padding)


def binary_inference_conv(I, unit: InferenceConvUnit) -> Tensor:
    """Six-step binary conv: sign, XNOR/popcount conv, channel |I| sum,
    conv with ``k'``, pointwise product, per-channel ``alpha``.

    The channel sum and the ``k'`` conv accumulate in float64; the two
    products run in the input dtype.
    """
    x = I.data if isinstance(I, Tensor) else np.asarray(I)
    if x.ndim not in (3, 4):
        raise ShapeError(f"binary_inference_conv expects [c,h,w] or [b,c,h,w], got {x.shape}")
    if x.shape[-3] != unit.packed_weights.channels:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[-3]}, unit expects {unit.packed_weights.channels}"
        )
    batched = x.ndim == 4
    xb = x if batched else x[None]
    # (1) + (2)
    O_f = xnor_popcount_conv(pack_signs(xb), unit.packed_weights, unit.stride, unit.padding).data
    # (3)
    A = np.abs(xb).sum(axis=1, keepdims=True, dtype=np.float64)
    # (4)
    O_1 = conv2d(Tensor(A), Tensor(unit.k_prime), unit.stride, unit.padding).data
    # (5), (6)
    dtype = x.dtype if x.dtype.kind == "f" else np.float32
    out = O_f.astype(dtype)
    out *= O_1.astype(dtype)
    out *= unit.alpha.astype(dtype).reshape(1, -1, 1, 1)
    return Tensor(out if batched else out[0])


DEFAULT_BENCH_SHAPE = ((448, 32, 32), (448, 448, 3, 3))


def bench_conv(shape_spec=DEFAULT_BENCH_SHAPE, repetitions: int = 10, padding: int = 1, seed: int = 0) -> dict:
    """Median wall time of the dense float conv vs. the six-step binary path.

    A fifth of the repetitions (at least one) run first as untimed warm-up.
    """
    if repetitions < 3:
        raise ValueError(f"bench_conv needs repetitions >= 3, got {repetitions}")
    (c, h, w), wshape = shape_spec
    if wshape[1] != c:
        raise ShapeError(f"bench shape mismatch: input channels {c}, weight channels {wshape[1]}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, c, h, w)).astype(np.float32)
    W = rng.standard_normal(wshape).astype(np.float32)
    k = np.full((1, 1) + tuple(wshape[2:]), 1.0 / (wshape[2] * wshape[3]))
    unit = InferenceConvUnit.from_float(W, k, padding=padding)
    xt, Wt = Tensor(x), Tensor(W)

    def fp():
        conv2d(xt, Wt, 1, padding)

    def packed():
        binary_inference_conv(x, unit)

    warmup = max(1, math.ceil(0.2 * repetitions))
    timings = {}
    for name, fn in (("fp", fp), ("packed", packed)):
        for _ in range(warmup):
            fn()
        runs = []
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            fn()
            runs.append(time.perf_counter_ns() - t0)
        timings[name] = statistics.median(runs)
    return {
        "input_shape": [c, h, w],
        "weight_shape": list(wshape),
        "padding": padding,
        "repetitions": repetitions,
        "fp_ns": float(timings["fp"]),
        "packed_ns": float(timings["packed"]),
        "speedup": float(timings["fp"] / timings["packed"]),
    }


def bench_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
