"""Noise schedules, forward noising, DDIM stepping and the epsilon-MSE loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ShapeError, Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 0 or t.max() >= self.T):
            raise IndexError(f"timestep out of range [0, {self.T - 1}]: {t}")
        return t

    def abar(self, t) -> np.ndarray:
        """``alpha_bar[t]`` with ``t = -1`` meaning the clean end of the chain (1.0)."""
        t = np.asarray(t)
        return np.where(t < 0, 1.0, self.alpha_bar[np.clip(t, 0, self.T - 1)])


def schedule_from_betas(beta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("beta must be a non-empty 1-d array")
    if np.any(beta <= 0) or np.any(beta >= 1):
        raise ValueError("every beta must lie in (0, 1)")
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def make_schedule(T: int, kind: str = "linear", beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not 0 < beta_start <= beta_end < 1:
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        return schedule_from_betas(np.linspace(beta_start, beta_end, T))
    if kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        return schedule_from_betas(np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999))
    raise ValueError(f"unknown schedule kind {kind!r}")


def _coef(values, like: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape((-1,) + (1,) * (like.ndim - 1))


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def q_sample(x0, t, eps, sched: NoiseSchedule) -> Tensor:
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``; ``t`` may be per-sample."""
    x0, eps = _arr(x0), _arr(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = _coef(sched.alpha_bar[sched.check_t(t)], x0)
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return Tensor(out.astype(x0.dtype))


def ddim_sigma(sched: NoiseSchedule, t, t_prev, eta: float) -> np.ndarray:
    ab_t = sched.abar(t)
    ab_prev = sched.abar(t_prev)
    return eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev))


def ddim_step(x_t, eps_pred, t: int, t_prev: int, sched: NoiseSchedule, eta: float = 0.0, noise=None,
              clip: float | None = None) -> Tensor:
    """One DDIM update from ``t`` to ``t_prev`` (``-1`` means the final clean sample).

    ``eta = 0`` is deterministic; ``eta = 1`` uses the ancestral posterior
    variance.  ``noise`` is required when ``eta > 0``.  With ``clip`` the
    predicted clean sample is clamped to ``[-clip, clip]`` and the noise
    estimate re-derived from it.
    """
    sched.check_t(t)
    if not -1 <= t_prev <= t:
        raise ValueError(f"need t >= t_prev >= -1, got t={t}, t_prev={t_prev}")
    x, e = _arr(x_t).astype(np.float64), _arr(eps_pred).astype(np.float64)
    ab_t = float(sched.abar(t))
    ab_prev = float(sched.abar(t_prev))
    x0_pred = (x - np.sqrt(1.0 - ab_t) * e) / np.sqrt(ab_t)
    if clip is not None:
        x0_pred = np.clip(x0_pred, -clip, clip)
        e = (x - np.sqrt(ab_t) * x0_pred) / np.sqrt(1.0 - ab_t)
    sigma = float(ddim_sigma(sched, t, t_prev, eta)) if ab_t != ab_prev else 0.0
    out = np.sqrt(ab_prev) * x0_pred + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * e
    if sigma > 0:
        if noise is None:
            raise ValueError("ddim_step with eta > 0 needs a noise tensor")
        out = out + sigma * _arr(noise)
    return Tensor(out.astype(_arr(x_t).dtype))


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Uniform-stride sub-sequence, in the order the sampler visits it (descending)."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    stride = T // steps
    return list(range(0, stride * steps, stride))[::-1]


def dm_loss(eps_true, eps_pred) -> Tensor:
    """Mean squared error over batch and elements."""
    if not isinstance(eps_true, Tensor):
        eps_true = Tensor(eps_true)
    if not isinstance(eps_pred, Tensor):
        eps_pred = Tensor(eps_pred)
    if eps_true.shape != eps_pred.shape:
        raise ShapeError(f"dm_loss shape mismatch {eps_true.shape} vs {eps_pred.shape}")
    diff = eps_pred - eps_true
    return (diff * diff).mean()
