"""Kernel-regression fusion of an aligned Bayer burst onto a super-resolved RGB grid."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InsufficientCoverageError, ParameterError, ShapeError
from .geometry import Burst, Trajectory, align_burst, apply_homography
from .raw import cfa_channel_map, lr_sample_positions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    sr_factor: int = 1
    kernel_sigma: float = 0.7
    min_weight: float = 1e-3
    use_given_trajectory: bool = False
    kernel_radius: float = None  # defaults to 3 sigma

    def __post_init__(self):
        if int(self.sr_factor) < 1:
            raise ParameterError("sr_factor must be >= 1")
        if self.kernel_sigma <= 0:
            raise ParameterError("kernel_sigma must be positive")

    @property
    def radius(self):
        return 3.0 * self.kernel_sigma if self.kernel_radius is None else float(self.kernel_radius)


_NEIGHBOURS = np.array([[0.5, 1.0, 0.5], [1.0, 0.0, 1.0], [0.5, 1.0, 0.5]])


def fill_holes(values, valid):
    """Fill invalid pixels from valid neighbours, growing inward one ring per pass."""
    values = np.where(valid, values, 0.0)
    valid = valid.copy()
    if not valid.any():
        raise InsufficientCoverageError("channel received no samples")
    while not valid.all():
        wsum = ndimage.convolve(valid.astype(np.float64), _NEIGHBOURS, mode="constant")
        vsum = ndimage.convolve(values, _NEIGHBOURS, mode="constant")
        grow = ~valid & (wsum > 0)
        values[grow] = vsum[grow] / wsum[grow]
        valid |= grow
    return values


def accumulate(burst, trajectory, cfg):
    """Splat every valid sample landing on the image; returns ``(num, den)`` of shape (3, sH, sW).

    A sample is kept when its frame marks it valid and its reference position
    lies inside the HR image area ``[0, sW] x [0, sH]``.
    """
    if len(burst.frames) == 0:
        raise ShapeError("cannot fuse an empty burst")
    if len(trajectory) != len(burst.frames):
        raise ShapeError("trajectory length does not match the burst")
    s = int(cfg.sr_factor)
    h, w = burst.frames[0].shape
    big_h, big_w = s * h, s * w
    xs, ys = lr_sample_positions(h, w, s)
    chan = cfa_channel_map(h, w, burst.frames[0].cfa).ravel()
    num = np.zeros((3, big_h, big_w))
    den = np.zeros((3, big_h, big_w))
    for i, (frame, hmat) in enumerate(zip(burst.frames, trajectory.frames)):
        px, py = apply_homography(np.linalg.inv(hmat), xs.ravel(), ys.ravel())
        keep = (px >= 0.0) & (px <= big_w) & (py >= 0.0) & (py <= big_h)
        keep &= burst.frame_validity(i).ravel()
        kernels.splat(px[keep], py[keep], frame.data.ravel()[keep], chan[keep],
                      cfg.kernel_sigma, cfg.radius, num, den)
    return num, den


def fuse(burst, trajectory, cfg):
    """Fuse ``burst`` into an ``(sH, sW, 3)`` image using homographies in HR coordinates.

    Each valid raw sample is placed at its reference-frame position (the inverse of
    its frame's homography applied to its HR pixel center), Gaussian-weighted
    into its color plane, and normalized. Bins with accumulated weight below
    ``min_weight`` are holes filled from neighbouring bins.
    """
    num, den = accumulate(burst, trajectory, cfg)
    out = np.empty((num.shape[1], num.shape[2], 3))
    for ch in range(3):
        valid = den[ch] >= cfg.min_weight
        plane = np.divide(num[ch], den[ch], out=np.zeros_like(num[ch]), where=valid)
        if not valid.all():
            try:
                plane = fill_holes(plane, valid)
            except InsufficientCoverageError as exc:
                raise InsufficientCoverageError(f"channel {ch}: {exc}") from None
        out[..., ch] = plane
    return out


def hole_count(burst, trajectory, cfg):
    _, den = accumulate(burst, trajectory, cfg)
    return int(np.sum(den < cfg.min_weight))


@dataclass
class Reconstruction:
    image: np.ndarray
    trajectory: Trajectory
    dropped: list


def reconstruct(burst, cfg, model="homography", levels=3):
    """Align (unless ``cfg.use_given_trajectory``) and fuse.

    Frames whose alignment fails are dropped from the fusion and listed in
    ``dropped``. A single-frame burst skips alignment.
    """
    if cfg.use_given_trajectory:
        return Reconstruction(fuse(burst, burst.trajectory, cfg), burst.trajectory, [])
    if len(burst) == 1:
        traj = Trajectory.identity(1)
        return Reconstruction(fuse(burst, traj, cfg), traj, [])
    result = align_burst(burst, model, levels, sr_factor=cfg.sr_factor)
    traj = result.trajectory
    if result.failed:
        log.warning("dropping %d frame(s) that failed alignment: %s", len(result.failed), result.failed)
        keep = [i for i in range(len(burst)) if i not in result.failed]
        frames = tuple(burst.frames[i] for i in keep)
        sub_traj = Trajectory(tuple(traj.frames[i] for i in keep))
        masks = None if burst.validity is None else tuple(burst.validity[i] for i in keep)
        sub = Burst(frames, sub_traj, dict(burst.meta), masks)
        return Reconstruction(fuse(sub, sub_traj, cfg), traj, list(result.failed))
    return Reconstruction(fuse(burst, traj, cfg), traj, [])
