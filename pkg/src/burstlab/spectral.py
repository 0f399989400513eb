"""Centered unitary 2-D Fourier transforms and radial frequency projectors."""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

IMAG_TOL = 1e-10


def fft2(x):
    """Unitary 2-D DFT over the first two axes, DC moved to ``(H // 2, W // 2)``."""
    x = np.asarray(x)
    return np.fft.fftshift(np.fft.fft2(x, axes=(0, 1), norm="ortho"), axes=(0, 1))


def ifft2(spec):
    """Inverse of :func:`fft2`; returns a complex array."""
    return np.fft.ifft2(np.fft.ifftshift(spec, axes=(0, 1)), axes=(0, 1), norm="ortho")


def real_part(z, tol=IMAG_TOL, scale=1.0):
    """Drop the imaginary part after checking it is numerical residue."""
    resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if resid > tol * max(1.0, scale):
        raise ValueError(f"imaginary residue {resid:.3e} exceeds tolerance; spectrum is not Hermitian")
    return np.ascontiguousarray(z.real)


def frequency_grid(height, width):
    """Integer centered frequency coordinates ``(u, v)`` of shape (H, W)."""
    u = np.arange(width) - width // 2
    v = np.arange(height) - height // 2
    return np.meshgrid(u, v)


@dataclass(frozen=True)
class RadialMask:
    """Real gains in [0, 1] on a centered frequency grid.

    ``alpha``/``beta``/``gamma`` record the generating parameters and are
    ``None`` for masks built from explicit gains.
    """

    values: np.ndarray
    alpha: float = None
    beta: float = None
    gamma: float = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError("mask values must be 2-D")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ParameterError("mask gains must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_gains(cls, gains):
        return cls(np.asarray(gains, dtype=np.float64))

    def complement(self):
        return RadialMask(1.0 - self.values, self.alpha, self.beta, self.gamma)


def _radius(height, width, mode):
    if mode == "min":
        r = min(height, width) / 2.0
        return r, r
    if mode == "max":
        r = max(height, width) / 2.0
        return r, r
    if mode == "per-axis":
        return width / 2.0, height / 2.0
    raise ParameterError(f"unknown radius mode {mode!r}")


def make_mask(height, width, alpha=0.8, beta=0.2, gamma=4.0, radius="min"):
    """Soft radial high-pass gains ``clip(((a u/R)^2 + (a v/R)^2)^g + b, 0, 1)``.

    ``R`` is half the grid size (``radius`` selects min/max side or per-axis).
    """
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if beta < 0:
        raise ParameterError("beta must be non-negative")
    u, v = frequency_grid(height, width)
    ru, rv = _radius(height, width, radius)
    rho2 = (alpha * u / ru) ** 2 + (alpha * v / rv) ** 2
    return RadialMask(np.clip(rho2 ** gamma + beta, 0.0, 1.0), alpha, beta, gamma)


def binary_mask_from(mask, threshold=0.5):
    if not 0.0 < threshold < 1.0:
        raise ParameterError("threshold must lie in (0, 1)")
    return RadialMask((mask.values >= threshold).astype(np.float64), mask.alpha, mask.beta, mask.gamma)


def lowband_zero_mask(height, width, cutoff):
    """Binary high-pass gains: 0 for ``u^2 + v^2 <= cutoff^2``, 1 elsewhere."""
    u, v = frequency_grid(height, width)
    return RadialMask((u * u + v * v > cutoff * cutoff).astype(np.float64))


def apply_gains(img, gains):
    """Multiply every channel's centered spectrum by ``gains`` and return the real result."""
    img = np.asarray(img, dtype=np.float64)
    gains = np.asarray(gains)
    if img.shape[:2] != gains.shape:
        raise ShapeError(f"mask grid {gains.shape} does not match image {img.shape[:2]}")
    g = gains if img.ndim == 2 else gains[..., None]
    scale = float(np.max(np.abs(img))) if img.size else 1.0
    return real_part(ifft2(g * fft2(img)), scale=scale)


def project(img, mask, mode="high"):
    """Apply the mask (``high``) or its complement ``1 - h`` (``low``) per channel."""
    if mode == "high":
        return apply_gains(img, mask.values)
    if mode == "low":
        return apply_gains(img, 1.0 - mask.values)
    raise ParameterError(f"mode must be 'high' or 'low', got {mode!r}")


def log_spectrum(img):
    """``ln(1 + |F(x)|)`` on the centered grid."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("log_spectrum expects a single-channel image")
    return np.log1p(np.abs(fft2(img)))


def band_energy_fraction(img, mask):
    """Share of spectral energy weighted by the mask gains."""
    power = np.abs(fft2(np.asarray(img, dtype=np.float64))) ** 2
    if power.ndim == 3:
        power = power.sum(axis=2)
    total = power.sum()
    return float((mask.values * power).sum() / total) if total > 0 else 0.0
