"""Sensor-domain operations: Bayer mosaicing, linear channel extraction,
Bayer-preserving decimation and Poisson-Gaussian noise.

Images are plain float64 numpy arrays in linear radiometry: ``(H, W)`` for a
single channel and ``(H, W, C)`` otherwise.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ParameterError, ShapeError

CFA_LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CHANNEL = {"R": 0, "G": 1, "B": 2}

# Rec. 709 luminance of linear RGB
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


def cfa_indices(cfa="RGGB"):
    """2x2 array giving the RGB channel index sampled at ``(r % 2, c % 2)``."""
    if cfa not in CFA_LAYOUTS:
        raise ParameterError(f"unknown CFA layout {cfa!r}; expected one of {CFA_LAYOUTS}")
    return np.array([[_CHANNEL[cfa[0]], _CHANNEL[cfa[1]]],
                     [_CHANNEL[cfa[2]], _CHANNEL[cfa[3]]]])


def cfa_channel_map(height, width, cfa="RGGB"):
    """Per-pixel channel index of a mosaic of the given size."""
    idx = cfa_indices(cfa)
    return np.tile(idx, (height // 2 + 1, width // 2 + 1))[:height, :width]


@dataclass(frozen=True)
class RawFrame:
    """Single-channel Bayer mosaic with values in [0, 1]."""

    data: np.ndarray
    cfa: str = "RGGB"
    bit_depth: int = 16

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ShapeError(f"raw frame must be 2-D, got shape {data.shape}")
        h, w = data.shape
        if h % 2 or w % 2:
            raise DimensionError(f"raw frame dimensions must be even, got {h}x{w}")
        if self.cfa not in CFA_LAYOUTS:
            raise ParameterError(f"unknown CFA layout {self.cfa!r}")
        if not 1 <= int(self.bit_depth) <= 16:
            raise ParameterError(f"bit_depth must be in [1, 16], got {self.bit_depth}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("raw frame contains non-finite values")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ParameterError("raw frame values must lie in [0, 1]")

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class NoiseParams:
    """Heteroscedastic sensor noise: variance ``shot_gain * mu + read_sigma**2``."""

    shot_gain: float = 0.01
    read_sigma: float = 0.02
    seed: int = 0
    exact_poisson: bool = False

    def __post_init__(self):
        if self.shot_gain < 0 or self.read_sigma < 0:
            raise ParameterError("noise parameters must be non-negative")

    @classmethod
    def at_iso(cls, iso_scale, seed=0, base_gain=0.01, base_sigma=0.02, exact_poisson=False):
        """Noise level scaled linearly from the level-1 defaults."""
        return cls(base_gain * iso_scale, base_sigma * iso_scale, seed, exact_poisson)

    def variance(self, mu):
        return self.shot_gain * np.asarray(mu) + self.read_sigma ** 2


def _check_even(h, w):
    if h % 2 or w % 2:
        raise DimensionError(f"dimensions must be even, got {h}x{w}")


def mosaic(rgb, cfa="RGGB", bit_depth=16):
    """Sample a linear RGB image through a Bayer color filter array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"mosaic expects an (H, W, 3) image, got {rgb.shape}")
    h, w, _ = rgb.shape
    _check_even(h, w)
    chan = cfa_channel_map(h, w, cfa)
    raw = np.take_along_axis(rgb, chan[..., None], axis=2)[..., 0]
    return RawFrame(raw, cfa, bit_depth)


def _upsample_sites(sites, r0, c0, h, w):
    """Bilinear interpolation of a stride-2 site grid with offset (r0, c0) onto the full grid.

    Coordinates outside the site hull are clamped (edge replication), so the
    value at every native site is reproduced exactly.
    """
    hs, ws = sites.shape

    def axis_weights(n_out, offset, n_sites):
        g = np.clip((np.arange(n_out) - offset) / 2.0, 0.0, n_sites - 1)
        i0 = np.minimum(np.floor(g).astype(np.int64), max(n_sites - 2, 0))
        i1 = np.minimum(i0 + 1, n_sites - 1)
        return i0, i1, g - i0

    y0, y1, fy = axis_weights(h, r0, hs)
    x0, x1, fx = axis_weights(w, c0, ws)
    fy = fy[:, None]
    fx = fx[None, :]
    top = (1.0 - fx) * sites[np.ix_(y0, x0)] + fx * sites[np.ix_(y0, x1)]
    bot = (1.0 - fx) * sites[np.ix_(y1, x0)] + fx * sites[np.ix_(y1, x1)]
    return (1.0 - fy) * top + fy * bot


def extract_channels(raw):
    """Linear channel extraction of a mosaic into a full-resolution RGB image.

    R and B are bilinearly upsampled from their quarter-resolution site grids.
    G is the mean of the two upsampled green site grids, except at native green
    sites where the recorded value is kept, so every channel is exact at its
    own CFA sites.
    """
    data = raw.data
    h, w = data.shape
    idx = cfa_indices(raw.cfa)
    out = np.empty((h, w, 3))
    greens = []
    for dr in range(2):
        for dc in range(2):
            sites = data[dr::2, dc::2]
            up = _upsample_sites(sites, dr, dc, h, w)
            ch = idx[dr, dc]
            if ch == 1:
                greens.append((dr, dc, up))
            else:
                out[..., ch] = up
    g = 0.5 * (greens[0][2] + greens[1][2])
    for dr, dc, _ in greens:
        g[dr::2, dc::2] = data[dr::2, dc::2]
    out[..., 1] = g
    return out


def luma(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return rgb @ LUMA_WEIGHTS


def pack_burst(burst):
    """Stack the extracted RGB of every frame into an ``(H, W, 3N)`` volume.

    Accepts a ``Burst`` or any sequence of ``RawFrame``.
    """
    frames = list(getattr(burst, "frames", burst))
    if not frames:
        raise ShapeError("cannot pack an empty burst")
    first = frames[0]
    for f in frames[1:]:
        if f.shape != first.shape or f.cfa != first.cfa:
            raise ShapeError("all frames of a burst must share dimensions and CFA")
    return np.concatenate([extract_channels(f) for f in frames], axis=2)


def space_to_depth_decimate(raw, factor):
    """Keep one 2x2 Bayer quad per ``factor x factor`` block of quads.

    Output quad ``(I, J)`` is input quad ``(factor*I, factor*J)``; the CFA
    phase is unchanged and no anti-alias prefilter is applied.
    """
    if factor == 1:
        return raw
    return replace(raw, data=decimate_quads(raw.data, factor))


def decimate_quads(arr, factor):
    """Quad-preserving decimation of any (H, W) array (e.g. a validity mask)."""
    s = int(factor)
    if s < 1:
        raise ParameterError(f"decimation factor must be >= 1, got {factor}")
    arr = np.asarray(arr)
    h, w = arr.shape
    if h % (2 * s) or w % (2 * s):
        raise DimensionError(f"{h}x{w} frame is not divisible by 2*{s}")
    quads = arr.reshape(h // 2, 2, w // 2, 2)
    return quads[::s, :, ::s, :].reshape(h // s, w // s).copy()


def lr_sample_positions(lr_height, lr_width, factor):
    """High-resolution pixel-center coordinates of every low-resolution sample.

    Inverse of :func:`space_to_depth_decimate`: LR pixel ``r`` came from HR
    pixel ``2*s*(r // 2) + r % 2``. Returns ``(x, y)`` arrays of shape (h, w).
    """
    s = int(factor)
    r = np.arange(lr_height)
    c = np.arange(lr_width)
    ys = 2 * s * (r // 2) + r % 2 + 0.5
    xs = 2 * s * (c // 2) + c % 2 + 0.5
    return np.meshgrid(xs, ys)


def sample_poisson_gaussian(mu, params, rng):
    """Draw unclamped noisy observations of the mean field ``mu``."""
    mu = np.asarray(mu, dtype=np.float64)
    if params.exact_poisson and params.shot_gain > 0:
        photons = rng.poisson(np.maximum(mu, 0.0) / params.shot_gain)
        out = photons * params.shot_gain
        if params.read_sigma > 0:
            out = out + params.read_sigma * rng.standard_normal(mu.shape)
        return out
    std = np.sqrt(np.maximum(params.variance(mu), 0.0))
    return mu + std * rng.standard_normal(mu.shape)


def add_poisson_gaussian(frame, params, frame_index=None):
    """Noisy copy of ``frame``, clamped to [0, 1].

    The generator is seeded with ``params.seed``, or ``params.seed ^ frame_index``
    when a frame index is given, so bursts can be noised frame by frame.
    """
    if params.shot_gain == 0 and params.read_sigma == 0:
        return replace(frame, data=frame.data.copy())
    seed = params.seed if frame_index is None else params.seed ^ int(frame_index)
    rng = np.random.default_rng(seed)
    noisy = sample_poisson_gaussian(frame.data, params, rng)
    return replace(frame, data=np.clip(noisy, 0.0, 1.0))
