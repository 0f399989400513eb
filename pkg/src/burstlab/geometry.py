"""Homographies, sub-pixel warping, tremor trajectories and classical registration.

Coordinates follow the pixel-center convention: pixel ``(r, c)`` sits at
``(x, y) = (c + 0.5, r + 0.5)``. A homography ``H`` maps reference
coordinates to frame coordinates; ``warp(src, H)`` produces the image whose
pixel ``p`` shows ``src`` at ``H^-1 p``.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import (
    FlatImageError,
    InvertibilityError,
    ParameterError,
    ReferenceFrameError,
    ShapeError,
    TrajectoryFormatError,
)
from .raw import extract_channels, luma

log = logging.getLogger(__name__)

DET_EPS = 1e-12


def normalize_homography(m):
    """Return ``m / m[2, 2]`` after checking shape, finiteness and invertibility."""
    m = np.array(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ShapeError(f"homography must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvertibilityError("homography has non-finite entries")
    if m[2, 2] == 0.0:
        raise InvertibilityError("homography has m[2][2] == 0 and cannot be normalized")
    m = m / m[2, 2]
    if abs(np.linalg.det(m)) <= DET_EPS:
        raise InvertibilityError("homography is singular")
    return m


def translation(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def rotation(theta, center=(0.0, 0.0)):
    """Rotation by ``theta`` radians about ``center``."""
    c, s = math.cos(theta), math.sin(theta)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    cx, cy = center
    return translation(cx, cy) @ r @ translation(-cx, -cy)


def scaling(sx, sy=None):
    sy = sx if sy is None else sy
    return np.diag([float(sx), float(sy), 1.0])


def apply_homography(h, xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    den = h[2, 0] * xs + h[2, 1] * ys + h[2, 2]
    return ((h[0, 0] * xs + h[0, 1] * ys + h[0, 2]) / den,
            (h[1, 0] * xs + h[1, 1] * ys + h[1, 2]) / den)


def corner_error(h_est, h_true, width, height):
    """Max displacement (pixels) between the image corners mapped by two homographies."""
    xs = np.array([0.0, width, 0.0, width])
    ys = np.array([0.0, 0.0, height, height])
    xa, ya = apply_homography(h_est, xs, ys)
    xb, yb = apply_homography(h_true, xs, ys)
    return float(np.max(np.hypot(xa - xb, ya - yb)))


def rescale_homography(h, scale, offset=0.0):
    """Express ``h`` in coordinates ``X = scale * x + offset``."""
    s = np.array([[scale, 0.0, offset], [0.0, scale, offset], [0.0, 0.0, 1.0]])
    return normalize_homography(s @ h @ np.linalg.inv(s))


@dataclass(frozen=True)
class Trajectory:
    """Per-frame homographies relative to frame 0, which must be the identity."""

    frames: tuple

    def __post_init__(self):
        if len(self.frames) == 0:
            raise TrajectoryFormatError("trajectory must contain at least one frame")
        mats = tuple(normalize_homography(m) for m in self.frames)
        if not np.allclose(mats[0], np.eye(3), rtol=0.0, atol=1e-9):
            raise ReferenceFrameError("first trajectory matrix must be the identity")
        object.__setattr__(self, "frames", mats)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @classmethod
    def identity(cls, n):
        return cls(tuple(np.eye(3) for _ in range(n)))

    def to_lr(self, factor):
        """Same motion expressed in the coordinates of Bayer space-to-depth frames."""
        return Trajectory(tuple(
            rescale_homography(m, 1.0 / factor, (factor - 1.0) / factor) for m in self.frames))


@dataclass(frozen=True)
class Burst:
    frames: tuple
    trajectory: Trajectory
    meta: dict = field(default_factory=dict)
    validity: tuple = None  # optional per-frame boolean masks; False marks synthetic fill

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise ShapeError("burst must contain at least one frame")
        if len(frames) != len(self.trajectory):
            raise ShapeError(
                f"burst has {len(frames)} frames but trajectory has {len(self.trajectory)}")
        f0 = frames[0]
        for f in frames[1:]:
            if f.shape != f0.shape or f.cfa != f0.cfa:
                raise ShapeError("all frames of a burst must share dimensions and CFA")
        if self.validity is not None:
            masks = tuple(np.asarray(v, dtype=bool) for v in self.validity)
            if len(masks) != len(frames) or any(v.shape != f0.shape for v in masks):
                raise ShapeError("validity needs one mask per frame with the frame's shape")
            object.__setattr__(self, "validity", masks)

    def frame_validity(self, i):
        if self.validity is None:
            return np.ones(self.frames[i].shape, dtype=bool)
        return self.validity[i]

    def __len__(self):
        return len(self.frames)

    @property
    def sr_factor(self):
        return int(self.meta.get("sr_factor", 1))


@dataclass
class WarpResult:
    image: np.ndarray
    validity: np.ndarray


def warp(src, h):
    """Bilinear warp of ``src`` (H, W[, C]) by homography ``h``.

    Pixels whose source position leaves the hull of pixel centers are set to
    zero and flagged invalid.
    """
    src = np.asarray(src, dtype=np.float64)
    hinv = np.linalg.inv(normalize_homography(h))
    rows, cols = src.shape[:2]
    xs, ys = np.meshgrid(np.arange(cols) + 0.5, np.arange(rows) + 0.5)
    sx, sy = apply_homography(hinv, xs, ys)
    sx -= 0.5
    sy -= 0.5
    if src.ndim == 2:
        out, valid = kernels.bilinear_sample(src, sx, sy)
        return WarpResult(out, valid)
    out = np.empty_like(src)
    valid = None
    for ch in range(src.shape[2]):
        out[..., ch], valid = kernels.bilinear_sample(np.ascontiguousarray(src[..., ch]), sx, sy)
    return WarpResult(out, valid)


def _params_to_matrix(params):
    tx, ty, theta, sx, sy, shear, px, py = params
    c, s = math.cos(theta), math.sin(theta)
    lin = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
    m = np.eye(3)
    m[:2, :2] = lin
    m[2, :2] = (px, py)
    return m


def synth_trajectory(n_frames, magnitude=2.0, smoothness=0.9, seed=0, *,
                     rotation_sigma=math.radians(0.1), scale_sigma=0.002,
                     shear_sigma=0.001, perspective_sigma=1e-5, center=(0.0, 0.0)):
    """Hand-tremor trajectory as a random walk with AR(1) increments.

    Eight motion parameters (translation x/y, rotation, scale x/y, shear,
    perspective x/y) each accumulate frame-to-frame increments that follow a
    stationary AR(1) process with lag-1 correlation ``smoothness``. The
    translation increment standard deviation is ``magnitude`` pixels.
    Rotation, scale and shear act about ``center``.
    """
    if n_frames < 1:
        raise ParameterError("n_frames must be >= 1")
    rho = float(smoothness)
    if not 0.0 <= rho < 1.0:
        raise ParameterError("smoothness must lie in [0, 1)")
    sig = np.array([magnitude, magnitude, rotation_sigma, scale_sigma, scale_sigma,
                    shear_sigma, perspective_sigma, perspective_sigma], dtype=np.float64)
    if magnitude == 0:
        return Trajectory.identity(n_frames)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((max(n_frames - 1, 0), 8))
    innov = math.sqrt(1.0 - rho * rho)
    state = np.zeros(8)
    vel = np.zeros(8)
    cx, cy = center
    to_c, from_c = translation(cx, cy), translation(-cx, -cy)
    mats = [np.eye(3)]
    for k in range(n_frames - 1):
        vel = sig * xi[k] if k == 0 else rho * vel + innov * sig * xi[k]
        state = state + vel
        p = state.copy()
        p[3:5] += 1.0
        core = _params_to_matrix(np.concatenate([[0.0, 0.0], p[2:]]))
        m = translation(p[0], p[1]) @ to_c @ core @ from_c
        mats.append(normalize_homography(m))
    return Trajectory(tuple(mats))


def regular_offset_trajectory(factor):
    """``factor**2`` translations that place a direct sample on every HR Bayer site.

    Frames shift by ``-2k`` HR pixels (k = 0..factor-1) on each axis, i.e. by
    whole LR pixels, which walks every retained Bayer quad across the
    ``factor x factor`` block of quads it was decimated from.
    """
    s = int(factor)
    mats = [translation(-2.0 * kx, -2.0 * ky) for ky in range(s) for kx in range(s)]
    return Trajectory(tuple(mats))


def save_trajectory(traj, path):
    payload = {"frames": [m.tolist() for m in traj.frames]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_trajectory(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TrajectoryFormatError(f"{path}: malformed JSON ({exc})") from exc
    frames = payload.get("frames") if isinstance(payload, dict) else None
    if not isinstance(frames, list):
        raise TrajectoryFormatError(f"{path}: expected an object with a 'frames' list")
    if not frames:
        raise TrajectoryFormatError(f"{path}: trajectory is empty")
    try:
        mats = tuple(np.array(m, dtype=np.float64) for m in frames)
    except (TypeError, ValueError) as exc:
        raise TrajectoryFormatError(f"{path}: non-numeric matrix entries") from exc
    for m in mats:
        if m.shape != (3, 3):
            raise TrajectoryFormatError(f"{path}: every frame must be a 3x3 matrix")
    try:
        return Trajectory(mats)
    except InvertibilityError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from exc


# --- registration ---------------------------------------------------------

MODELS = {"translation": 2, "affine": 6, "homography": 8}


def _model_matrix(p, model):
    if model == "translation":
        return translation(p[0], p[1])
    m = np.array([[1.0 + p[0], p[2], p[4]],
                  [p[1], 1.0 + p[3], p[5]],
                  [0.0, 0.0, 1.0]])
    if model == "homography":
        m[2, 0], m[2, 1] = p[6], p[7]
    return m


def _steepest_descent(gx, gy, xn, yn, model):
    if model == "translation":
        return np.stack([gx, gy], axis=-1)
    cols = [gx * xn, gy * xn, gx * yn, gy * yn, gx, gy]
    if model == "homography":
        cols += [-(gx * xn + gy * yn) * xn, -(gx * xn + gy * yn) * yn]
    return np.stack(cols, axis=-1)


def _downsample(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


@dataclass
class Registration:
    """Result of :func:`estimate_homography`. ``h`` satisfies ref ~ warp(moving, h)."""

    h: np.ndarray
    converged: bool
    iterations: int
    ssd_initial: float
    ssd_final: float
    ssd_history: list = field(default_factory=list)


def _downsample_mask(valid):
    h, w = valid.shape
    valid = valid[: h - h % 2, : w - w % 2]
    return valid[0::2, 0::2] & valid[1::2, 0::2] & valid[0::2, 1::2] & valid[1::2, 1::2]


def _fill_invalid(img, valid):
    """Replace invalid pixels by their nearest valid neighbour (keeps spline prefilters local)."""
    if valid.all():
        return img
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return img[ri, ci]


class _Sampler:
    """Cubic B-spline resampling of the moving image plus its validity.

    Bilinear resampling has a frequency-dependent phase error that biases
    sub-pixel estimates, so registration resamples with cubic splines.
    """

    def __init__(self, img, valid):
        self.coeffs = ndimage.spline_filter(_fill_invalid(img, valid), order=3, mode="mirror")
        self.valid = None if valid.all() else valid.astype(np.float64)
        rows, cols = img.shape
        self.xs, self.ys = np.meshgrid(np.arange(cols) + 0.5, np.arange(rows) + 0.5)

    def __call__(self, g):
        rows, cols = self.coeffs.shape
        sx, sy = apply_homography(g, self.xs, self.ys)
        sx -= 0.5
        sy -= 0.5
        valid = (sx >= 0) & (sx <= cols - 1) & (sy >= 0) & (sy <= rows - 1)
        if self.valid is not None:
            cover, _ = kernels.bilinear_sample(self.valid, sx, sy)
            valid &= cover >= 1.0 - 1e-9
        # the sampling mode must match the prefilter or the outer two pixels are wrong
        out = ndimage.map_coordinates(self.coeffs, [sy, sx], order=3, mode="mirror", prefilter=False)
        return np.where(valid, out, 0.0), valid


def _register_level(ref, mov, ref_valid, mov_valid, g, model, max_iters, tol):
    rows, cols = ref.shape
    sample = _Sampler(mov, mov_valid)
    scale = max(rows, cols) / 2.0
    norm = np.array([[1 / scale, 0, -cols / 2 / scale], [0, 1 / scale, -rows / 2 / scale], [0, 0, 1]])
    norm_inv = np.linalg.inv(norm)
    xn, yn = apply_homography(norm, sample.xs, sample.ys)

    gy, gx = np.gradient(ref)
    sd = _steepest_descent(gx * scale, gy * scale, xn, yn, model)
    # central differences need both neighbours
    usable = ndimage.binary_erosion(ref_valid, np.ones((3, 3), bool), border_value=0)

    def residual(g):
        img, valid = sample(g)
        mask = valid & usable
        return img[mask] - ref[mask], mask

    gn = norm @ g @ norm_inv
    history = []
    best = (np.inf, g)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = norm_inv @ gn @ norm
        err, mask = residual(g)
        if mask.sum() < MODELS[model] * 4:
            break
        ssd = float(np.mean(err * err))
        history.append(ssd)
        if ssd < best[0]:
            best = (ssd, g)
        a = sd[mask]
        try:
            dp = np.linalg.solve(a.T @ a, a.T @ err)
        except np.linalg.LinAlgError:
            break
        gn = gn @ np.linalg.inv(_model_matrix(dp, model))
        gn = gn / gn[2, 2]
        if np.linalg.norm(dp) < tol:
            converged = True
            g = norm_inv @ gn @ norm
            err, mask = residual(g)
            if mask.any():
                ssd = float(np.mean(err * err))
                history.append(ssd)
                if ssd < best[0]:
                    best = (ssd, g)
            break
    return best[1], converged, it, history


def _validity(valid, shape, name):
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != shape:
        raise ShapeError(f"{name} validity {valid.shape} does not match image {shape}")
    return valid


def estimate_homography(ref, moving, model="homography", levels=3, max_iters=50, tol=1e-6,
                        init=None, ref_valid=None, moving_valid=None):
    """Inverse-compositional Gauss-Newton registration on image intensities.

    Finds ``h`` minimizing the mean squared difference between ``ref`` and
    ``warp(moving, h)`` over valid pixels, coarse-to-fine over ``levels``
    octaves. If ``moving = warp(ref, t)`` the result approximates ``inv(t)``.
    Optional boolean validity masks exclude pixels (e.g. zero fill from a
    synthetic warp) from the residual. The best iterate seen at the finest
    level is returned together with a convergence flag.
    """
    if model not in MODELS:
        raise ParameterError(f"unknown motion model {model!r}")
    ref = luma(np.asarray(ref, dtype=np.float64))
    moving = luma(np.asarray(moving, dtype=np.float64))
    if ref.shape != moving.shape:
        raise ShapeError(f"shape mismatch {ref.shape} vs {moving.shape}")
    ref_valid = _validity(ref_valid, ref.shape, "reference")
    moving_valid = _validity(moving_valid, moving.shape, "moving")
    for name, img, valid in (("reference", ref, ref_valid), ("moving", moving, moving_valid)):
        if not valid.any() or np.ptp(img[valid]) <= 1e-12:
            raise FlatImageError(f"{name} image is constant; registration is undefined")

    pyr = [(ref, moving, ref_valid, moving_valid)]
    for _ in range(max(levels, 1) - 1):
        if min(pyr[-1][0].shape) < 16:
            break
        r, m, rv, mv = pyr[-1]
        pyr.append((_downsample(r), _downsample(m), _downsample_mask(rv), _downsample_mask(mv)))

    # the search runs on g = h^-1, the map from reference to moving coordinates
    g0 = np.eye(3) if init is None else np.linalg.inv(normalize_homography(init))
    half = np.diag([0.5, 0.5, 1.0])
    n_lv = len(pyr)
    g = g0.copy()
    for _ in range(n_lv - 1):
        g = half @ g @ np.linalg.inv(half)

    init_img, init_valid = _Sampler(moving, moving_valid)(g0)
    m0 = init_valid & ndimage.binary_erosion(ref_valid, np.ones((3, 3), bool), border_value=0)
    ssd0 = float(np.mean((init_img[m0] - ref[m0]) ** 2)) if m0.any() else np.inf

    converged, iters, history = False, 0, []
    for lv in range(n_lv - 1, -1, -1):
        g, converged, iters, history = _register_level(*pyr[lv], g, model, max_iters, tol)
        if lv > 0:
            g = np.linalg.inv(half) @ g @ half

    ssd_final = min(history) if history else np.inf
    if ssd0 <= ssd_final:
        g, ssd_final = g0, ssd0
    return Registration(normalize_homography(np.linalg.inv(g)), converged, iters,
                        ssd0, ssd_final, history)


@dataclass
class BurstAlignment:
    trajectory: Trajectory
    failed: list
    registrations: list


def align_burst(burst, model="homography", levels=3, max_iters=50, tol=1e-6, sr_factor=None):
    """Estimate each frame's homography to frame 0 on the luma of extracted channels.

    Returned matrices use the high-resolution coordinates of ``sr_factor``
    (default ``burst.sr_factor``). Frames whose registration fails are listed
    in ``failed`` and carry the identity.
    """
    s = burst.sr_factor if sr_factor is None else int(sr_factor)
    lumas = [luma(extract_channels(f)) for f in burst.frames]
    # demosaicing spreads each invalid sample over a 5x5 neighbourhood
    valid = [ndimage.binary_erosion(burst.frame_validity(i), np.ones((5, 5), bool), border_value=1)
             for i in range(len(burst))]
    mats, failed, regs = [np.eye(3)], [], [None]
    for i in range(1, len(lumas)):
        try:
            reg = estimate_homography(lumas[0], lumas[i], model, levels, max_iters, tol,
                                      ref_valid=valid[0], moving_valid=valid[i])
        except FlatImageError as exc:
            log.warning("frame %d: alignment failed (%s)", i, exc)
            failed.append(i)
            mats.append(np.eye(3))
            regs.append(None)
            continue
        if not reg.converged:
            log.info("frame %d: registration stopped before convergence", i)
        h_lr = np.linalg.inv(reg.h)
        mats.append(rescale_homography(h_lr, s, 1.0 - s) if s != 1 else normalize_homography(h_lr))
        regs.append(reg)
    return BurstAlignment(Trajectory(tuple(mats)), failed, regs)
