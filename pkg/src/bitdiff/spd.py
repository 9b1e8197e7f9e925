"""Patch-wise attention distillation between teacher and student block features.

Each feature map is cut into ``p x p`` non-overlapping patches.  Per patch
and per sample the spatial Gram matrix ``M M^T`` (``M`` is the
``(ph*pw) x c`` patch matrix) is normalized to unit Frobenius norm, and the
Frobenius distance between teacher and student maps is averaged over
patches and batch.
"""

from __future__ import annotations

from dataclasses import dataclass

from .diffusion.schedule import dm_loss
from .tensor import ShapeError, Tensor, frobenius_norm

NORM_FLOOR = 1e-12


@dataclass
class DistillConfig:
    lam: float = 3e-2
    p: int = 4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")


def _check_grid(shape, p: int) -> tuple[int, int]:
    h, w = shape[-2:]
    if p < 1 or h % p or w % p:
        raise ShapeError(f"patch count {p} must divide feature size {(h, w)}")
    return h // p, w // p


def partition_patches(F: Tensor, p: int) -> list[Tensor]:
    """``p*p`` patches ``[b, c, h/p, w/p]`` in row-major patch order."""
    ph, pw = _check_grid(F.shape, p)
    return [F[:, :, i * ph : (i + 1) * ph, j * pw : (j + 1) * pw] for i in range(p) for j in range(p)]


def patch_attention(P: Tensor) -> Tensor:
    """Spatial Gram matrix ``[b, s, s]`` with ``s = ph * pw``."""
    b, c = P.shape[:2]
    M = P.reshape(b, c, -1).transpose(0, 2, 1)
    return M @ M.transpose(0, 2, 1)


def _patch_matrices(F: Tensor, p: int) -> Tensor:
    """All patches at once as ``[b * p * p, s, c]``."""
    ph, pw = _check_grid(F.shape, p)
    b, c = F.shape[:2]
    x = F.reshape(b, c, p, ph, p, pw).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(b * p * p, ph * pw, c)


def _normalized_attention(F: Tensor, p: int) -> Tensor:
    M = _patch_matrices(F, p)
    A = M @ M.transpose(0, 2, 1)
    return A / frobenius_norm(A, axis=(1, 2), keepdims=True).maximum(NORM_FLOOR)


def spd_loss(F_fp: Tensor, F_bi: Tensor, p: int) -> Tensor:
    if F_fp.shape != F_bi.shape:
        raise ShapeError(f"teacher feature {F_fp.shape} != student feature {F_bi.shape}")
    diff = _normalized_attention(F_fp, p) - _normalized_attention(F_bi, p)
    # mean over (batch, patch) = batch mean of the patch average
    return frobenius_norm(diff, axis=(1, 2)).mean()


def combine(dm: Tensor, spd_terms: list[Tensor], lam: float) -> Tensor:
    """``dm + lam / n * sum(spd_terms)``; exactly ``dm`` when ``lam == 0``."""
    if lam == 0 or not spd_terms:
        return dm
    acc = spd_terms[0]
    for term in spd_terms[1:]:
        acc = acc + term
    return dm + acc * (lam / len(spd_terms))


def block_patch_count(shape, p: int) -> int:
    """Largest ``q <= p`` that tiles ``shape`` with patches of at least 2x2 (when possible)."""
    h, w = shape[-2:]
    for q in range(p, 0, -1):
        if h % q == 0 and w % q == 0 and (q == 1 or min(h // q, w // q) >= 2):
            return q
    return 1


def spd_terms(features_fp: list, features_bi: list, p: int) -> list[Tensor]:
    """One patch loss per tapped block; teacher features are detached."""
    if len(features_fp) != len(features_bi):
        raise ValueError(f"feature list lengths differ: {len(features_fp)} vs {len(features_bi)}")
    return [spd_loss(f.detach(), s, block_patch_count(s.shape, p)) for f, s in zip(features_fp, features_bi)]


def total_loss(eps_true, eps_pred, features_fp: list, features_bi: list, cfg: DistillConfig) -> Tensor:
    """Noise MSE plus the block-averaged patch distillation term.

    Blocks too small for ``cfg.p`` patches use the largest patch count that
    still tiles them (see :func:`block_patch_count`).
    """
    if len(features_fp) != len(features_bi):
        raise ValueError(f"feature list lengths differ: {len(features_fp)} vs {len(features_bi)}")
    dm = dm_loss(eps_true, eps_pred)
    if cfg.lam == 0:
        return dm
    return combine(dm, spd_terms(features_fp, features_bi, cfg.p), cfg.lam)
