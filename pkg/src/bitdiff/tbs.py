"""Cross-timestep feature blending for binary U-Nets.

An up-path block output ``U_{m+1}`` computed at the previous denoising step
is cached; at the current step the input to ``U_m`` becomes
``Concat(D_m, (1 - a) * U_{m+1} + a * U_{m+1}^{prev})`` with a learnable
per-block ``a`` clamped to [0, 1].
"""

from __future__ import annotations

import numpy as np

from .nn import Module
from .tensor import ShapeError, Tensor, concat


class TimestepCache:
    """Block outputs from one denoising step, keyed by block index."""

    def __init__(self):
        self.entries: dict[int, Tensor] = {}
        self.step_tag = None

    def get(self, block: int) -> Tensor | None:
        return self.entries.get(block)

    def __contains__(self, block: int) -> bool:
        return block in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries = {}
        self.step_tag = None

    def replace(self, entries: dict[int, Tensor], step) -> None:
        self.entries = dict(entries)
        self.step_tag = step


def cache_store(cache: TimestepCache, block: int, feature: Tensor, step) -> None:
    """Record ``feature`` for ``block``; entries from an older step are dropped first."""
    if cache.step_tag is not None and not np.array_equal(np.asarray(cache.step_tag), np.asarray(step)):
        cache.entries = {}
    cache.entries[block] = feature
    cache.step_tag = step


def tbs_fuse(d_skip: Tensor, u_curr: Tensor, u_prev: Tensor | None, alpha) -> Tensor:
    """``Concat(d_skip, (1 - alpha) * u_curr + alpha * u_prev)`` along channels.

    Without ``u_prev`` this is the plain skip concatenation.
    """
    if u_prev is None:
        return concat([d_skip, u_curr], axis=1)
    if u_prev.shape != u_curr.shape:
        raise ShapeError(f"cached feature shape {u_prev.shape} != current {u_curr.shape}")
    blended = (1.0 - alpha) * u_curr + alpha * u_prev
    return concat([d_skip, blended], axis=1)


class TBSParams(Module):
    """Learnable blend weights, one per connected block."""

    def __init__(self, connected_blocks, alpha_init: float = 0.3):
        super().__init__()
        self.connected_blocks = sorted(int(b) for b in connected_blocks)
        self.alpha_init = float(alpha_init)
        self.alpha = {
            str(b): Tensor(np.array(alpha_init, np.float32), requires_grad=True) for b in self.connected_blocks
        }

    def clamped(self, block: int) -> Tensor:
        return self.alpha[str(block)].clamp(0.0, 1.0)


class TBSContext:
    """Per-trajectory handle passed to the U-Net forward.

    ``sample_mask`` (shape ``[b]``) zeroes the blend for individual samples,
    used when a batch mixes timesteps with and without a previous step.
    """

    def __init__(self, params: TBSParams, cache: TimestepCache | None = None, sample_mask=None):
        self.params = params
        self.cache = cache if cache is not None else TimestepCache()
        self.sample_mask = None if sample_mask is None else np.asarray(sample_mask, np.float32)
        self.collected: dict[int, Tensor] = {}

    def fuse(self, block: int, d_skip: Tensor, u_curr: Tensor) -> Tensor:
        self.collected[block] = u_curr
        if block not in self.params.connected_blocks or block not in self.cache:
            return tbs_fuse(d_skip, u_curr, None, 0.0)
        alpha = self.params.clamped(block)
        if self.sample_mask is not None:
            alpha = alpha * self.sample_mask.reshape(-1, 1, 1, 1)
        return tbs_fuse(d_skip, u_curr, self.cache.get(block), alpha)

    def commit(self, step) -> None:
        """Replace the cache wholesale with this step's (detached) block outputs."""
        self.cache.replace({b: f.detach() for b, f in self.collected.items()}, step)
        self.collected = {}


def training_double_pass(x0, t, model, sched, tbs_params: TBSParams, eps, stride: int = 1):
    """Two forwards per training sample: step ``t + stride`` fills the cache, step ``t`` blends.

    The first pass runs off the tape; both noisy inputs share ``eps``.
    Samples with no later step (``t + stride > T - 1``) fall back to a single
    pass with blending bypassed.  Returns ``(dm_loss, eps_pred, features)``.
    """
    from .diffusion.schedule import dm_loss, q_sample
    from .tensor import no_grad

    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (np.shape(x0)[0],))
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    t_up = t + stride
    has_prev = t_up <= sched.T - 1
    ctx = TBSContext(tbs_params, sample_mask=has_prev.astype(np.float32))
    if tbs_params.connected_blocks and has_prev.any():
        t_up = np.minimum(t_up, sched.T - 1)
        with no_grad():
            model(q_sample(x0, t_up, eps, sched), t_up, tbs=ctx)
        ctx.commit(t_up)
    else:
        ctx.collected = {}
    eps_pred, feats = model(q_sample(x0, t, eps, sched), t, tbs=ctx)
    return dm_loss(eps, eps_pred), eps_pred, feats
