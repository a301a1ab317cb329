"""Procedural grayscale images: piecewise-constant rectangles plus smooth bumps."""

from pathlib import Path

import numpy as np

from .tensor import make_rng


def toy_image(rng, size=32):
    rng = make_rng(rng)
    img = np.full((size, size), rng.uniform(0.1, 0.9))
    for _ in range(rng.integers(3, 7)):
        h, w = rng.integers(size // 8, size // 2 + 1, 2)
        i, j = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        img[i : i + h, j : j + w] = rng.uniform(0.0, 1.0)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(1, 4)):
        ci, cj = rng.uniform(0, size, 2)
        s = rng.uniform(size / 12, size / 5)
        img += rng.uniform(-0.35, 0.35) * np.exp(-((yy - ci) ** 2 + (xx - cj) ** 2) / (2 * s * s))
    if rng.random() < 0.5:
        img = img[:, ::-1]
    if rng.random() < 0.5:
        img = img[::-1, :]
    return np.clip(img, 0.0, 1.0)


def make_toy_images(n, size=32, seed=0):
    """``n`` images of shape ``(1, size, size)`` in [0, 1], reproducible per seed."""
    rng = make_rng(seed)
    return np.stack([toy_image(rng, size)[None] for _ in range(n)])


def load_image_dir(folder):
    """All ``*.pgm``/``*.ppm`` images in ``folder`` as ``(n, C, H, W)``; sizes must agree."""
    from .io import load_pnm

    files = sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not files:
        raise ValueError(f"no PGM/PPM images in {folder}")
    imgs = [load_pnm(f) for f in files]
    imgs = [im[None] if im.ndim == 2 else im for im in imgs]
    if len({im.shape for im in imgs}) != 1:
        raise ValueError("images in a dataset folder must share one shape")
    return np.stack(imgs)
