"""Synthetic registered infrared/visible pairs for smoke runs and tests.

Both images of a pair share one smooth scene layout. The infrared image adds
warm blobs on a flattened background; the visible image adds fine texture
and edges. Real corpora are not shipped with the toolkit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import write_image


def make_pair(size: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    scene = gaussian_filter(rng.random((size, size)), sigma=size / 8)
    scene = (scene - scene.min()) / (np.ptp(scene) + 1e-12)
    scene = 0.6 * scene + 0.2 * (0.5 + 0.5 * np.sin(2 * np.pi * (xx * rng.uniform(0.5, 1.5) + rng.uniform())))

    ir = 0.35 + 0.3 * scene
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.04, 0.12)
        ir += rng.uniform(0.25, 0.5) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    ir += 0.02 * rng.standard_normal((size, size))

    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=0.8)
    stripes = np.sign(np.sin(2 * np.pi * (yy * rng.uniform(4, 9) + xx * rng.uniform(-3, 3))))
    vis = 0.15 + 0.6 * scene + 0.08 * texture + 0.06 * stripes
    return np.clip(ir, 0, 1), np.clip(vis, 0, 1)


def write_corpus(root, pairs: int = 16, size: int = 64, seed: int = 0, suffix: str = ".png"):
    """Write ``pairs`` pairs into ``root/ir`` and ``root/vis``; returns both directories."""
    root = Path(root)
    ir_dir, vis_dir = root / "ir", root / "vis"
    for k in range(pairs):
        ir, vis = make_pair(size, seed * 100_003 + k)
        write_image(ir, ir_dir / f"pair{k:03d}{suffix}")
        write_image(vis, vis_dir / f"pair{k:03d}{suffix}")
    return ir_dir, vis_dir
