"""Vectorized numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def bilinear_sample(img, xs, ys):
    """Sample ``img`` at continuous index coordinates ``(xs, ys)``.

    A sample is valid when it lies inside the hull of pixel centers, i.e.
    ``0 <= x <= W-1`` and ``0 <= y <= H-1``. Invalid samples are returned as 0.
    """
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    out = np.zeros(xs.shape, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        valid = (
            np.isfinite(xs) & np.isfinite(ys)
            & (xs >= 0.0) & (ys >= 0.0) & (xs <= w - 1) & (ys <= h - 1)
        )
    x = xs[valid]
    y = ys[valid]
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    out[valid] = (1.0 - fy) * top + fy * bot
    return out, valid


def splat(px, py, values, channels, sigma, radius, num, den):
    """Accumulate Gaussian-weighted samples into ``num``/``den`` (C, H, W) in place."""
    n_ch, h, w = num.shape
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    channels = np.asarray(channels, dtype=np.int64)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)

    lox = np.ceil(px - 0.5 - radius).astype(np.int64)
    hix = np.floor(px - 0.5 + radius).astype(np.int64)
    loy = np.ceil(py - 0.5 - radius).astype(np.int64)
    hiy = np.floor(py - 0.5 + radius).astype(np.int64)
    span = int(np.floor(2.0 * radius)) + 2

    size = n_ch * h * w
    acc_num = np.zeros(size)
    acc_den = np.zeros(size)
    for oy in range(span):
        jy = loy + oy
        ok_y = (jy <= hiy) & (jy >= 0) & (jy < h)
        if not ok_y.any():
            continue
        dy = jy + 0.5 - py
        for ox in range(span):
            jx = lox + ox
            ok = ok_y & (jx <= hix) & (jx >= 0) & (jx < w)
            if not ok.any():
                continue
            dx = jx[ok] + 0.5 - px[ok]
            wgt = np.exp(-(dx * dx + dy[ok] * dy[ok]) * inv2s2)
            flat = (channels[ok] * h + jy[ok]) * w + jx[ok]
            acc_num += np.bincount(flat, weights=wgt * values[ok], minlength=size)
            acc_den += np.bincount(flat, weights=wgt, minlength=size)
    num += acc_num.reshape(num.shape)
    den += acc_den.reshape(den.shape)
