"""DDIM sampling loop, optionally with the cross-timestep cache."""

from __future__ import annotations

import numpy as np

from ..tbs import TBSContext, TBSParams, TimestepCache
from ..tensor import no_grad
from .schedule import NoiseSchedule, ddim_step, ddim_timesteps


def ddim_sample(model, sched: NoiseSchedule, shape, steps: int, rng: np.random.Generator,
                eta: float = 0.0, tbs: TBSParams | None = None, batch_size: int = 64,
                x_T: np.ndarray | None = None, clip: float | None = None) -> np.ndarray:
    """Draw ``shape[0]`` samples.

    Each batch is an independent trajectory with its own cache; "previous
    step" is the previous entry of the executed sub-sequence.  ``clip``
    bounds the per-step clean-sample estimate (see :func:`ddim_step`).
    """
    n = shape[0]
    if x_T is None:
        x_T = rng.standard_normal(shape).astype(np.float32)
    seq = ddim_timesteps(sched.T, steps)
    out = np.empty(shape, dtype=np.float32)
    with no_grad():
        for start in range(0, n, batch_size):
            x = x_T[start : start + batch_size]
            ctx = TBSContext(tbs, TimestepCache()) if tbs is not None else None
            for i, t in enumerate(seq):
                t_prev = seq[i + 1] if i + 1 < len(seq) else -1
                eps, _ = model(x, t, tbs=ctx)
                if ctx is not None:
                    ctx.commit(t)
                noise = rng.standard_normal(x.shape).astype(np.float32) if eta > 0 else None
                x = ddim_step(x, eps, t, t_prev, sched, eta, noise, clip).data
            out[start : start + batch_size] = x
    return out
