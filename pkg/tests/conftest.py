import numpy as np
import pytest


def smooth_rgb(h, w, seed=0, cycles=3.0):
    """Small-amplitude cosine mixture in (0.3, 0.7); independent of the package's scene generator."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    out = np.full((h, w, 3), 0.5)
    for c in range(3):
        for _ in range(4):
            fx, fy = rng.uniform(-cycles, cycles, 2)
            out[..., c] += 0.04 * np.cos(2 * np.pi * (fx * xs / w + fy * ys / h) + rng.uniform(0, 2 * np.pi))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
