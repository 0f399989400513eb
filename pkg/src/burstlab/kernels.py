"""Backend selection for the hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is used. Set ``BURSTLAB_PURE_PYTHON=1`` to force the fallback.
"""

import logging
import os

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

_impl = _pykernels
BACKEND = "python"

if not os.environ.get("BURSTLAB_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        log.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _pykernels


def bilinear_sample(img, xs, ys):
    """Bilinear gather at index coordinates; returns ``(values, valid)`` shaped like ``xs``."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    shape = xs.shape
    x = np.ascontiguousarray(xs.ravel())
    y = np.ascontiguousarray(np.asarray(ys, dtype=np.float64).ravel())
    out, valid = _impl.bilinear_sample(img, x, y)
    return np.asarray(out).reshape(shape), np.asarray(valid, dtype=bool).reshape(shape)


def splat(px, py, values, channels, sigma, radius, num, den):
    """Gaussian splatting of scattered samples into accumulators ``num``/``den`` (C, H, W)."""
    _impl.splat(
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(channels, dtype=np.int64),
        float(sigma),
        float(radius),
        num,
        den,
    )
