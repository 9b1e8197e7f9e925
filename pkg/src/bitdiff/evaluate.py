"""Sample-quality statistics for desk-scale runs.

RBF-kernel maximum mean discrepancy stands in for FID; the numbers are not
comparable to FID values of any kind.
"""

from __future__ import annotations

import numpy as np

from .diffusion.data import generate

REFERENCE_STREAM = 2**31 - 2


def _flat(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_bandwidth(Y) -> float:
    """Median pairwise distance among the rows of ``Y`` (i < j)."""
    Y = _flat(Y)
    d = _sq_dists(Y, Y)[np.triu_indices(len(Y), k=1)]
    med = float(np.sqrt(np.median(d))) if d.size else 1.0
    return med if med > 0 else 1.0


def _offdiag_mean(K: np.ndarray) -> float:
    n = K.shape[0]
    return (K.sum() - np.trace(K)) / (n * (n - 1))


def rbf_mmd2(X, Y, bandwidth: float | None = None) -> float:
    """Unbiased MMD^2 with ``k(x, y) = exp(-|x - y|^2 / (2 h^2))``.

    Diagonal terms are excluded from all three kernel means, so identical
    sets give exactly zero.  ``h`` defaults to the median distance within ``Y``.
    """
    X, Y = _flat(X), _flat(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"sample dimension {X.shape[1]} != reference dimension {Y.shape[1]}")
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("MMD needs at least two samples per set")
    if len(X) != len(Y):
        raise ValueError(f"sample count {len(X)} != reference count {len(Y)}")
    h = median_bandwidth(Y) if bandwidth is None else float(bandwidth)
    g = 1.0 / (2.0 * h * h)
    kxx = np.exp(-g * _sq_dists(X, X))
    kyy = np.exp(-g * _sq_dists(Y, Y))
    kxy = np.exp(-g * _sq_dists(X, Y))
    return float(_offdiag_mean(kxx) + _offdiag_mean(kyy) - 2.0 * _offdiag_mean(kxy))


def pixel_gaps(X, Y) -> dict:
    X, Y = _flat(X), _flat(Y)
    return {
        "mean_gap": float(np.abs(X.mean(0) - Y.mean(0)).mean()),
        "var_gap": float(np.abs(X.var(0) - Y.var(0)).mean()),
    }


def reference_set(dataset: str, n: int, seed: int = 0) -> np.ndarray:
    return generate(dataset, n, np.random.default_rng([seed, REFERENCE_STREAM]))


def evaluate_samples(samples, dataset: str, seed: int = 0) -> dict:
    """Compare ``samples`` with an equally sized fresh reference draw."""
    samples = np.asarray(samples)
    ref = reference_set(dataset, len(samples), seed)
    if samples.shape[1:] != ref.shape[1:]:
        raise ValueError(f"sample shape {samples.shape[1:]} != {dataset} shape {ref.shape[1:]}")
    h = median_bandwidth(ref)
    return {"mmd": rbf_mmd2(samples, ref, h), "bandwidth": h, "n": int(len(samples)), **pixel_gaps(samples, ref)}
