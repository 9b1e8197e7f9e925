"""Weight and activation binarizers.

Four activation schemes are supported:

``naive``
    ``sign(a)``.
``constant_K``
    ``K * sign(a)`` with a trainable per-channel vector ``K`` that does not
    depend on the input.
``xnor_dynamic``
    XNOR-Net style: the product of sign tensors is rescaled by
    ``A * k`` where ``A`` is the channel-mean magnitude of the input and
    ``k`` a fixed averaging filter, then by the weight scale ``alpha``.
``bidm_learnable_k``
    Same as ``xnor_dynamic`` but the tiny filter ``k`` is trained.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .nn import Module, _uniform
from .tensor import ShapeError, Tensor, conv2d, custom_sign

SIGMA_FLOOR = 1e-8


class ActMode(str, Enum):
    NAIVE = "naive"
    CONSTANT_K = "constant_K"
    XNOR_DYNAMIC = "xnor_dynamic"
    BIDM_LEARNABLE_K = "bidm_learnable_k"


def sigma_init(w) -> float:
    """Mean absolute value of ``w``, floored at 1e-8 so the scale stays positive."""
    arr = w.data if isinstance(w, Tensor) else np.asarray(w)
    if arr.size == 0:
        raise ValueError("sigma_init: empty weight tensor")
    return max(float(np.abs(arr).sum(dtype=np.float64) / arr.size), SIGMA_FLOOR)


def binarize_weights(w: Tensor, sigma: Tensor, clip_bound: float = 1.0) -> Tensor:
    """``sigma * sign(w)`` with sign(0) = +1.

    The gradient w.r.t. ``sigma`` is exact; ``w`` receives the clipped
    straight-through gradient.
    """
    if np.any(np.asarray(sigma.data) <= 0):
        raise ValueError("binarize_weights: sigma must be positive")
    return sigma * custom_sign(w, clip_bound)


def weight_scale(w: Tensor) -> Tensor:
    """Per-output-channel ``alpha = ||W_o||_1 / n``, shape ``[m]``."""
    return w.abs().mean(axis=(1, 2, 3))


def activation_magnitude(x: Tensor) -> Tensor:
    """Channel mean of ``|x|``, shape ``[b, 1, h, w]``."""
    return x.abs().mean(axis=1, keepdims=True)


@dataclass
class ActScaleParams:
    mode: ActMode
    K: Tensor | None = None
    k_filter: Tensor | None = None
    clip_bound: float = 1.0

    @classmethod
    def create(cls, mode, channels: int | None = None, kh: int = 3, kw: int = 3, dtype=np.float32, K_init: float = 1.0):
        mode = ActMode(mode)
        K = k_filter = None
        if mode is ActMode.CONSTANT_K:
            if channels is None:
                raise ValueError("constant_K mode needs the channel count")
            K = Tensor(np.full(channels, K_init, dtype=dtype), requires_grad=True)
        elif mode in (ActMode.XNOR_DYNAMIC, ActMode.BIDM_LEARNABLE_K):
            k_filter = Tensor(
                np.full((1, 1, kh, kw), 1.0 / (kh * kw), dtype=dtype),
                requires_grad=mode is ActMode.BIDM_LEARNABLE_K,
            )
        return cls(mode=mode, K=K, k_filter=k_filter)


def act_binarize(a: Tensor, params: ActScaleParams) -> Tensor:
    if params.mode is ActMode.NAIVE:
        return custom_sign(a, params.clip_bound)
    if params.mode is ActMode.CONSTANT_K:
        if params.K is None:
            raise ValueError("act_binarize: constant_K mode requires K")
        K = params.K
        if K.ndim == 1 and a.ndim == 4:
            K = K.reshape(1, -1, 1, 1)
        return K * custom_sign(a, params.clip_bound)
    raise ValueError(f"act_binarize handles naive/constant_K, got {params.mode.value}")


def _check_xnor(I: Tensor, W: Tensor, params: ActScaleParams) -> None:
    if params.mode not in (ActMode.XNOR_DYNAMIC, ActMode.BIDM_LEARNABLE_K):
        raise ValueError(f"xnor_conv needs xnor_dynamic or bidm_learnable_k, got {params.mode.value}")
    if I.ndim != 4 or W.ndim != 4 or I.shape[1] != W.shape[1]:
        raise ShapeError(f"xnor_conv channel mismatch: input {I.shape}, weight {W.shape}")
    k = params.k_filter
    if k is None or k.shape[2:] != W.shape[2:]:
        raise ShapeError(f"xnor_conv: k_filter must be 1x1x{W.shape[2]}x{W.shape[3]}")


def _xnor_scaled(I: Tensor, W_sign: Tensor, alpha: Tensor, params: ActScaleParams, stride: int, padding: int) -> Tensor:
    binary = conv2d(custom_sign(I, params.clip_bound), W_sign, stride, padding)
    scale = conv2d(activation_magnitude(I), params.k_filter, stride, padding)
    return binary * scale * alpha


def xnor_conv(I: Tensor, W: Tensor, params: ActScaleParams, stride: int = 1, padding: int = 0) -> Tensor:
    """``(sign(I) (x) sign(W)) * (A conv k) * alpha``.

    Differentiable w.r.t. ``I``, ``W`` and, when it requires grad, ``k_filter``.
    """
    _check_xnor(I, W, params)
    alpha = weight_scale(W).reshape(1, -1, 1, 1)
    return _xnor_scaled(I, custom_sign(W, params.clip_bound), alpha, params, stride, padding)


class BinaryConv2d(Module):
    """W1A1 convolution: learnable-sigma weight binarizer plus an activation scheme.

    The weight operand is ``sigma * sign(w)``, so in the XNOR modes its sign
    is ``sign(w)`` and its per-channel ``alpha`` is ``sigma``; the forward
    uses those directly so ``sigma`` gets its exact gradient and ``w`` a
    single straight-through factor.
    """

    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 padding: int | None = None, act_mode=ActMode.XNOR_DYNAMIC, clip_bound: float = 1.0):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Tensor(_uniform(rng, (c_out, c_in, k, k), c_in * k * k), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        self.sigma = Tensor(np.array(sigma_init(self.weight), np.float32), requires_grad=True)
        self._params = ActScaleParams.create(act_mode, channels=c_in, kh=k, kw=k)
        self._params.clip_bound = clip_bound
        if self._params.k_filter is not None:
            self.k_filter = self._params.k_filter
        if self._params.K is not None:
            self.K = self._params.K

    @property
    def act_mode(self) -> ActMode:
        return self._params.mode

    def reset_sigma(self) -> None:
        self.sigma.data = np.array(sigma_init(self.weight), dtype=self.sigma.dtype)

    def effective_weight(self) -> Tensor:
        return binarize_weights(self.weight, self.sigma.maximum(SIGMA_FLOOR), self._params.clip_bound)

    def __call__(self, x: Tensor) -> Tensor:
        if self._params.mode in (ActMode.XNOR_DYNAMIC, ActMode.BIDM_LEARNABLE_K):
            _check_xnor(x, self.weight, self._params)
            sign_w = custom_sign(self.weight, self._params.clip_bound)
            sigma = self.sigma.maximum(SIGMA_FLOOR)
            y = _xnor_scaled(x, sign_w, sigma, self._params, self.stride, self.padding)
        else:
            y = conv2d(act_binarize(x, self._params), self.effective_weight(), self.stride, self.padding)
        return y + self.bias.reshape(1, -1, 1, 1)
