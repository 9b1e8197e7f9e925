"""A small U-Net noise predictor, full-precision or W1A1.

Layout for depth ``d`` and ``widths = (w_0, ..., w_d)``::

    conv_in -> D_1 -> pool -> ... -> D_d -> pool -> M
    U_d(Concat(D_d, up(M))) -> ... -> U_1(Concat(D_1, up(U_2))) -> conv_out

Every block is a timestep-embedding residual block and its output is one of
the ``2d + 1`` tapped features ``[D_1..D_d, M, U_d..U_1]``.  Blocks are
indexed ``1..d`` on both paths and the middle block is ``d + 1``, so the
input of ``U_m`` always concatenates ``D_m`` with block ``m + 1`` of the up
path.  In binary mode every conv inside a block is W1A1; ``conv_in``,
``conv_out``, embeddings and normalization stay full precision.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from ..binarize import ActMode, BinaryConv2d
from ..nn import Conv2d, GroupNorm, Linear, Module
from ..tensor import (
    ShapeError,
    Tensor,
    avg_pool2d,
    concat,
    pad_channels,
    silu,
    upsample_nearest2d,
)


@dataclass
class UNetSpec:
    depth: int = 2
    widths: tuple = (16, 32, 32)
    in_channels: int = 1
    temb_dim: int = 32
    groups: int = 8
    shortcut: bool = True
    mode: str = "fp"
    act_mode: str = ActMode.XNOR_DYNAMIC.value
    clip_bound: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != self.depth + 1:
            raise ValueError(f"widths needs depth + 1 = {self.depth + 1} entries, got {self.widths}")
        if self.mode not in ("fp", "binary"):
            raise ValueError(f"mode must be 'fp' or 'binary', got {self.mode!r}")
        ActMode(self.act_mode)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "UNetSpec":
        return cls(**json.loads(text))

    def replace(self, **changes) -> "UNetSpec":
        return dataclasses.replace(self, **changes)

    def feature_shapes(self, batch: int, size: int) -> list[tuple]:
        """Shapes of the tapped block outputs for a ``size x size`` input."""
        down = [(batch, self.widths[m], size >> m, size >> m) for m in range(self.depth)]
        mid = [(batch, self.widths[self.depth], size >> self.depth, size >> self.depth)]
        return down + mid + down[::-1]


def timestep_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def channel_shortcut(x: Tensor, c_out: int) -> Tensor | None:
    """Identity-style shortcut into ``c_out`` channels.

    Zero-pads when widening, averages consecutive channel groups when
    narrowing by an integer factor, and gives up otherwise.
    """
    b, c, h, w = x.shape
    if c == c_out:
        return x
    if c < c_out:
        return pad_channels(x, c_out)
    if c % c_out == 0:
        return x.reshape(b, c_out, c // c_out, h, w).mean(axis=2)
    return None


class QConv(Module):
    """Conv (FP or binary) with an optional identity shortcut around it."""

    def __init__(self, rng, spec: UNetSpec, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        super().__init__()
        self.binary = spec.mode == "binary"
        self.shortcut = spec.shortcut
        self.stride = stride
        self.c_out = c_out
        if self.binary:
            self.conv = BinaryConv2d(rng, c_in, c_out, k, stride, act_mode=spec.act_mode, clip_bound=spec.clip_bound)
        else:
            self.conv = Conv2d(rng, c_in, c_out, k, stride)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.shortcut:
            s = avg_pool2d(x, self.stride) if self.stride > 1 else x
            s = channel_shortcut(s, self.c_out)
            if s is not None:
                y = y + s
        return y


class ResBlock(Module):
    def __init__(self, rng, spec: UNetSpec, c_in: int, c_out: int):
        super().__init__()
        self.norm1 = GroupNorm(c_in, spec.groups)
        self.conv1 = QConv(rng, spec, c_in, c_out)
        self.temb = Linear(rng, spec.temb_dim * 2, c_out)
        self.norm2 = GroupNorm(c_out, spec.groups)
        self.conv2 = QConv(rng, spec, c_out, c_out)
        self.skip = QConv(rng, spec, c_in, c_out, k=1) if c_in != c_out else None

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        h = h + self.temb(emb).reshape(h.shape[0], -1, 1, 1)
        h = self.conv2(silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class UNet(Module):
    def __init__(self, spec: UNetSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        d, widths = spec.depth, spec.widths
        self.temb1 = Linear(rng, spec.temb_dim, spec.temb_dim * 2)
        self.temb2 = Linear(rng, spec.temb_dim * 2, spec.temb_dim * 2)
        self.conv_in = Conv2d(rng, spec.in_channels, widths[0])
        self.down = []
        c = widths[0]
        for m in range(d):
            self.down.append(ResBlock(rng, spec, c, widths[m]))
            c = widths[m]
        self.mid = ResBlock(rng, spec, c, widths[d])
        self.up = []
        c_below = widths[d]
        for m in reversed(range(d)):
            self.up.append(ResBlock(rng, spec, widths[m] + c_below, widths[m]))
            c_below = widths[m]
        self.norm_out = GroupNorm(widths[0], spec.groups)
        self.conv_out = Conv2d(rng, widths[0], spec.in_channels)

    def binary_convs(self) -> list[BinaryConv2d]:
        return [m for m in self._iter_modules() if isinstance(m, BinaryConv2d)]

    def _iter_modules(self):
        stack = [self]
        while stack:
            mod = stack.pop()
            yield mod
            for v in vars(mod).values():
                if isinstance(v, Module):
                    stack.append(v)
                elif isinstance(v, list):
                    stack.extend(x for x in v if isinstance(x, Module))

    def reset_sigmas(self) -> None:
        """Re-initialise every weight scale from its current latent weights."""
        for conv in self.binary_convs():
            conv.reset_sigma()

    def embed(self, t, batch: int) -> Tensor:
        t = np.broadcast_to(np.asarray(t), (batch,))
        e = Tensor(timestep_embedding(t, self.spec.temb_dim))
        return self.temb2(silu(self.temb1(e)))

    def __call__(self, x_t, t, tbs=None):
        """Return ``(eps_pred, block_features)``.

        ``t`` is an int or a per-sample array.  ``tbs`` is an optional
        :class:`~bitdiff.tbs.TBSContext`; without one every skip is a plain
        concatenation.
        """
        if not isinstance(x_t, Tensor):
            x_t = Tensor(x_t)
        d = self.spec.depth
        b, _, h, w = x_t.shape
        if h % (1 << d) or w % (1 << d):
            raise ShapeError(f"spatial dims {(h, w)} must be divisible by 2^{d}")
        emb = silu(self.embed(t, b))
        x = self.conv_in(x_t)
        skips = []
        for block in self.down:
            x = block(x, emb)
            skips.append(x)
            x = avg_pool2d(x, 2)
        x = self.mid(x, emb)
        feats_up = [x]
        for i, block in enumerate(self.up):
            m = d - i
            below = upsample_nearest2d(x, 2)
            if tbs is not None:
                inp = tbs.fuse(m + 1, skips[m - 1], below)
            else:
                inp = concat([skips[m - 1], below], axis=1)
            x = block(inp, emb)
            feats_up.append(x)
        out = self.conv_out(silu(self.norm_out(x)))
        return out, skips + feats_up
