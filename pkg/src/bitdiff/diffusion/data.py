"""Procedural toy datasets."""

from __future__ import annotations

import numpy as np

DATASETS = ("sprites16", "points2d")


def sprites16(n: int, rng: np.random.Generator, size: int = 16) -> np.ndarray:
    """Single-channel ``size x size`` images of one axis-aligned rectangle or disc.

    Background is -1, the shape is +1.  Returns float32 ``[n, 1, size, size]``.
    """
    out = np.full((n, 1, size, size), -1.0, dtype=np.float32)
    yy, xx = np.mgrid[0:size, 0:size]
    kinds = rng.integers(0, 2, size=n)
    for i in range(n):
        if kinds[i] == 0:
            h, w = rng.integers(3, size // 2 + 3, size=2)
            y0 = rng.integers(0, size - h + 1)
            x0 = rng.integers(0, size - w + 1)
            out[i, 0, y0 : y0 + h, x0 : x0 + w] = 1.0
        else:
            r = rng.uniform(2.0, size / 3.2)
            cy, cx = rng.uniform(r, size - r, size=2)
            mask = (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r
            out[i, 0][mask] = 1.0
    return out


def points2d(n: int, rng: np.random.Generator, modes: int = 8, radius: float = 1.5, std: float = 0.1) -> np.ndarray:
    """Gaussian-mixture ring in 2-d, shaped ``[n, 2, 1, 1]`` for the conv model."""
    angle = 2 * np.pi * rng.integers(0, modes, size=n) / modes
    centers = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    pts = centers + std * rng.standard_normal((n, 2))
    return pts.astype(np.float32).reshape(n, 2, 1, 1)


def generate(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if name == "sprites16":
        return sprites16(n, rng)
    if name == "points2d":
        return points2d(n, rng)
    raise ValueError(f"unknown dataset {name!r}; choose from {DATASETS}")


def write_pgm(path, images: np.ndarray, cols: int = 8) -> None:
    """Tile ``[n, 1, h, w]`` images in [-1, 1] into one binary PGM for eyeballing."""
    imgs = np.clip((np.asarray(images)[:, 0] + 1.0) * 127.5, 0, 255).astype(np.uint8)
    n, h, w = imgs.shape
    rows = -(-n // cols)
    canvas = np.zeros((rows * (h + 1), cols * (w + 1)), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * (h + 1) : r * (h + 1) + h, c * (w + 1) : c * (w + 1) + w] = imgs[i]
    with open(path, "wb") as f:
        f.write(f"P5 {canvas.shape[1]} {canvas.shape[0]} 255\n".encode())
        f.write(canvas.tobytes())
