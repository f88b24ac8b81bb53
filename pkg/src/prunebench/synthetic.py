"""Seeded synthetic inputs: calibration images and a toy 4-class segmentation task."""
from __future__ import annotations

import numpy as np


def calibration_images(count: int, height: int, width: int, seed, channels: int = 3) -> np.ndarray:
    """Noise mixed with gradients, stripes and blobs, shape (count, channels, height, width)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    out = np.empty((count, channels, height, width), dtype=np.float32)
    for i in range(count):
        img = 0.5 * rng.standard_normal((channels, height, width))
        for c in range(channels):
            a, b = rng.normal(size=2)
            img[c] += a * xx + b * yy
            freq, angle = rng.uniform(2, 12), rng.uniform(0, np.pi)
            img[c] += 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
            cy, cx, r = rng.uniform(0, 1, size=3)
            img[c] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (0.02 + 0.1 * r))
        out[i] = img
    return out


def _texture(kind: int, h: int, w: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    period = 4
    phase = rng.integers(period)
    if kind == 1:
        return ((yy + phase) // (period // 2)) % 2 * 2.0 - 1
    if kind == 2:
        return ((xx + phase) // (period // 2)) % 2 * 2.0 - 1
    return (((yy + phase) // 2 + (xx + phase) // 2) % 2) * 2.0 - 1


def toy_segmentation(count: int, size: int = 32, seed=0, noise: float = 0.3, tile: int = 8):
    """Images tiled into ``tile`` x ``tile`` squares. Each square is flat
    background (class 0) or carries horizontal stripes (class 1), vertical
    stripes (class 2) or a checkerboard (class 3). Colours are random per
    square, so only texture identifies the class.

    Returns ``(images float32 (count, 3, size, size), labels uint32 (count, size, size))``.
    """
    if size % tile:
        raise ValueError("size must be a multiple of tile")
    rng = np.random.default_rng(seed)
    images = np.empty((count, 3, size, size), dtype=np.float32)
    labels = np.zeros((count, size, size), dtype=np.uint32)
    cells = size // tile
    for i in range(count):
        img = np.empty((3, size, size))
        for r in range(cells):
            for c in range(cells):
                kind = int(rng.integers(0, 4))
                colour = rng.uniform(-1, 1, size=3)
                sl = (slice(r * tile, (r + 1) * tile), slice(c * tile, (c + 1) * tile))
                tex = 0.0 if kind == 0 else rng.uniform(0.6, 1.2) * _texture(kind, tile, tile, rng)
                img[(slice(None), *sl)] = colour[:, None, None] + tex
                labels[(i, *sl)] = kind
        images[i] = img + noise * rng.standard_normal(img.shape)
    return images, labels
