"""Fidelity metrics on linear images: PSNR, SSIM and band-split RMSE."""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .spectral import project

PSNR_TEXT_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0, mask=None):
    """``10 log10(peak^2 / MSE)`` over pixels where ``mask`` is true; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    sq = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:2]:
            raise ShapeError("mask must match the image's spatial size")
        if not mask.any():
            raise ShapeError("mask selects no pixels")
        sq = sq[mask]
    mse = float(np.mean(sq))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def format_db(value):
    return f"{min(value, PSNR_TEXT_CAP):.2f}"


def _gaussian_window(window, sigma):
    r = window // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b, window=8, k1=0.01, k2=0.03, peak=1.0, sigma=1.5):
    """Mean structural similarity with a separable Gaussian window.

    The window has radius ``window // 2`` and standard deviation ``sigma``;
    only positions where it fits inside the image contribute. Multi-channel
    inputs return the mean over channels.
    """
    a, b = _pair(a, b)
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], window, k1, k2, peak, sigma)
                              for c in range(a.shape[2])]))
    g = _gaussian_window(window, sigma)
    if min(a.shape) < len(g):
        raise ShapeError(f"image {a.shape} is smaller than the {len(g)}-tap window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _is_binary(mask):
    v = mask.values
    return bool(np.all((v == 0.0) | (v == 1.0)))


def band_error(a, b, mask):
    """RMSE of the difference's low (``1 - h``) and high (``h``) projections.

    For binary masks the two bands are orthogonal and their squares must add
    up to the full MSE; that is checked.
    """
    a, b = _pair(a, b)
    diff = a - b
    low = float(np.sqrt(np.mean(project(diff, mask, "low") ** 2)))
    high = float(np.sqrt(np.mean(project(diff, mask, "high") ** 2)))
    if _is_binary(mask):
        total = float(np.mean(diff * diff))
        if abs(low * low + high * high - total) > 1e-10 * max(1.0, total):
            raise AssertionError("binary band split does not conserve energy")
    return low, high


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    lowband_rmse: float
    highband_rmse: float
    valid_fraction: float

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["psnr"]):
            d["psnr"] = PSNR_TEXT_CAP
            d["psnr_infinite"] = True
        return d


def evaluate(ref, test, mask, valid=None, peak=1.0):
    """All metrics at once; PSNR honours the ``valid`` pixel mask."""
    ref, test = _pair(ref, test)
    frac = 1.0 if valid is None else float(np.mean(valid))
    low, high = band_error(ref, test, mask)
    return MetricReport(psnr(ref, test, peak, valid), ssim(ref, test, peak=peak), low, high, frac)
