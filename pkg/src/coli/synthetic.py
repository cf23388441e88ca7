"""Deterministic synthetic test images."""

from __future__ import annotations

import numpy as np

from .pixel_io import Image


def gradient_image(size: int = 64, channels: int = 1, phase: float = 0.0) -> Image:
    """Smooth diagonal ramp with a low-frequency ripple.

    ``phase`` shifts the ripple; small changes give visually similar images.
    """
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    base = 0.15 + 0.55 * (0.6 * x + 0.4 * y)
    ripple = 0.12 * np.sin(2 * np.pi * (1.5 * x + phase)) * np.cos(2 * np.pi * (1.0 * y - 0.5 * phase))
    img = base + ripple
    if channels == 3:
        img = np.stack([img, 0.9 * img + 0.05, 1.0 - 0.8 * img], axis=-1)
    return Image.from_array(np.clip(img, 0, 1) * 255.0)


def blob_image(size: int = 64, shift: float = 0.0, channels: int = 1) -> Image:
    """Two soft Gaussian blobs on a ramp; ``shift`` moves the blobs (fraction of width)."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    g1 = np.exp(-((x - 0.35 - shift) ** 2 + (y - 0.4) ** 2) / 0.02)
    g2 = np.exp(-((x - 0.7 - shift) ** 2 + (y - 0.65) ** 2) / 0.01)
    img = 0.2 + 0.3 * y + 0.35 * g1 + 0.3 * g2
    if channels == 3:
        img = np.stack([img, 1.0 - img, 0.5 * img + 0.2], axis=-1)
    return Image.from_array(np.clip(img, 0, 1) * 255.0)


def textured_image(size: int = 256, seed: int = 0) -> Image:
    """Mid-contrast test image with smooth structure plus mild noise."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = 0.5 + 0.2 * np.sin(6 * np.pi * x) * np.cos(4 * np.pi * y) + 0.1 * (x - y)
    img += rng.normal(0.0, 0.03, size=img.shape)
    return Image.from_array(np.clip(img, 0, 1) * 255.0)
