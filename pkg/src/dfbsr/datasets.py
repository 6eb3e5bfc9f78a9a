"""Small reproducible image sets for desk-scale experiments and tests."""

import numpy as np

from ._validation import check_random_state

NATURAL_SOURCES = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry")


def natural_crops(n, size=96, seed=0):
    """``n`` random ``size x size`` RGB crops of the photographs bundled with scikit-image."""
    from skimage import data as skdata

    rng = check_random_state(seed)
    sources = [getattr(skdata, name)().astype(np.float32) / 255.0 for name in NATURAL_SOURCES]
    out = []
    for i in range(n):
        src = sources[i % len(sources)]
        h, w = src.shape[:2]
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        out.append(np.ascontiguousarray(src[top : top + size, left : left + size, :3]))
    return out


def synthetic_textures(n, size=96, channels=3, seed=0):
    """Random mixtures of oriented gratings, hard-edged discs and smooth ramps."""
    rng = check_random_state(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = []
    for _ in range(n):
        img = np.zeros((size, size, channels))
        for c in range(channels):
            base = rng.uniform(0.2, 0.8) + rng.uniform(-0.2, 0.2) * (xx + yy - 1.0)
            for _ in range(3):
                theta = rng.uniform(0, np.pi)
                freq = rng.uniform(2.0, size / 4.0)
                phase = rng.uniform(0, 2 * np.pi)
                amp = rng.uniform(0.03, 0.12)
                base += amp * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            img[:, :, c] = base
        for _ in range(int(rng.integers(1, 4))):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            r = rng.uniform(0.05, 0.25)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            img[mask] += rng.uniform(-0.3, 0.3, size=channels)
        out.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return out


def named(images, prefix="img"):
    """Attach zero-padded names so the images can serve as a dataset."""
    return [(f"{prefix}{i:03d}", im) for i, im in enumerate(images)]
