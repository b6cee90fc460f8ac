"""Procedurally drawn sample images shipped with the package.

The corpus under ``ailsr/sample_images`` was produced by
``generate_corpus`` and is regenerated bit-identically by
``scripts/make_samples.py``.  Each image mixes smooth shading with
anti-aliased edges, stripes and texture so that a super-resolution network
has both easy (flat) and hard (detailed) pixels to learn from.
"""

from pathlib import Path

import numpy as np
from PIL import Image

SAMPLE_ROOT = Path(__file__).parent / "sample_images"


def sample_dir(split="train"):
    return SAMPLE_ROOT / split


def _shapes(rng, yy, xx):
    """Coverage in [0, 1] of one random shape on supersampled coordinates."""
    kind = rng.integers(4)
    cy, cx = rng.uniform(0.15, 0.85, 2)
    if kind == 0:
        r = rng.uniform(0.08, 0.3)
        return ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(float)
    if kind == 1:
        hh, hw = rng.uniform(0.05, 0.3, 2)
        ang = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)
        v = -(xx - cx) * np.sin(ang) + (yy - cy) * np.cos(ang)
        return ((np.abs(u) < hw) & (np.abs(v) < hh)).astype(float)
    if kind == 2:
        freq = rng.uniform(6, 18)
        ang = rng.uniform(0, np.pi)
        u = xx * np.cos(ang) + yy * np.sin(ang)
        r = rng.uniform(0.15, 0.35)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        return (mask & (np.sin(2 * np.pi * freq * u) > 0)).astype(float)
    a, b, c = rng.uniform(-1, 1, 3)
    return (a * (xx - cx) + b * (yy - cy) + 0.1 * c > 0).astype(float)


def render(rng, size=64, supersample=4):
    n = size * supersample
    t = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(t, t, indexing="ij")
    g = rng.uniform(-1, 1, 3)
    base = rng.uniform(0.2, 0.8, 3)
    img = base[None, None, :] + 0.25 * (g[0] * xx + g[1] * yy)[..., None] * rng.uniform(0.5, 1.0, 3)
    for _ in range(rng.integers(3, 7)):
        cover = _shapes(rng, yy, xx)[..., None]
        colour = rng.uniform(0, 1, 3)
        img = img * (1 - cover) + colour * cover
    img = img.reshape(size, supersample, size, supersample, 3).mean(axis=(1, 3))
    img += rng.normal(0, 0.01, img.shape)
    return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def generate_corpus(out_dir, count, size=64, seed=0, prefix="img"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = out_dir / f"{prefix}{i:03d}.png"
        Image.fromarray(render(rng, size)).save(p, optimize=False)
        paths.append(p)
    return paths
