"""Synthetic low-light images and tracking sequences for tests and demos."""

from __future__ import annotations

import numpy as np

from .tracking import BoundingBox


def dark_image(seed: int, size: int = 64) -> np.ndarray:
    """A dim RGB scene: near-black noisy background, a soft light gradient and a few tinted blobs.

    Mean gray stays well below 0.15 and part of the background falls under
    the 0.04 dark-area threshold.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.clip(np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5) + 0.5, 0, 1)
    gray = 0.04 + 0.10 * ramp
    for _ in range(3):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.06, 0.14)
        gray = gray + rng.uniform(0.08, 0.18) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    gray = gray + rng.normal(0, 0.006, gray.shape)
    tint = rng.uniform(0.8, 1.2, size=3)
    tint = tint / tint.mean()
    rgb = gray[..., None] * tint[None, None, :]
    return np.clip(rgb, 0, 1).astype(np.float32)


def translating_square(
    n_frames: int = 20,
    size: int = 96,
    square: int = 16,
    step: int = 2,
    start: tuple[int, int] = (20, 20),
    intensity: float = 1.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    margin: int = 4,
) -> tuple[list[np.ndarray], list[BoundingBox]]:
    """A bright square moving ``step`` px per frame along the diagonal on black.

    Boxes extend ``margin`` px past the square on each side: a box covering
    only the flat square would give a zero-variance NCC template.

    ``intensity`` scales the frame (0.1 gives the darkened variant) and
    Gaussian noise of ``noise_sigma`` is added before clipping to [0, 1].
    Returns RGB frames and the ground-truth boxes.
    """
    rng = np.random.default_rng(seed)
    frames, boxes = [], []
    for k in range(n_frames):
        y, x = start[0] + k * step, start[1] + k * step
        gray = np.zeros((size, size))
        gray[y:y + square, x:x + square] = 1.0
        gray = gray * intensity
        if noise_sigma > 0:
            gray = gray + rng.normal(0, noise_sigma, gray.shape)
        gray = np.clip(gray, 0, 1).astype(np.float32)
        frames.append(np.repeat(gray[..., None], 3, axis=2))
        side = float(square + 2 * margin)
        boxes.append(BoundingBox(float(x - margin), float(y - margin), side, side))
    return frames, boxes
