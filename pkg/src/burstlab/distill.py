"""Variance-preserving diffusion arithmetic and (high-frequency) variational score distillation.

The frozen prior is a stationary Gaussian, diagonal in the unitary Fourier
basis, so its noisy-marginal epsilon prediction is exact. The generator is a
direct per-pixel image estimate whose noisy distribution is a point mass
blurred by the forward process, so its epsilon prediction is also exact.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError, TimestepError, WeightOverflowError
from .spectral import RadialMask, apply_gains, fft2, ifft2, project, real_part

log = logging.getLogger(__name__)

MODES = ("naive_vsd", "hf_vsd", "data_only")
MODE_ALIASES = {"naive": "naive_vsd", "hf": "hf_vsd", "data": "data_only"}


@dataclass(frozen=True)
class DiffusionSchedule:
    """Signal/noise coefficients for t = 0..T; ``alphas[0] == 1``."""

    alphas: np.ndarray
    betas: np.ndarray

    @property
    def T(self):
        return len(self.alphas) - 1

    @property
    def alpha_bar(self):
        return self.alphas ** 2


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linear DDPM variance schedule in variance-preserving form."""
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ParameterError("need 0 < beta_start < beta_end < 1")
    if T < 1:
        raise ParameterError("T must be >= 1")
    b = np.linspace(beta_start, beta_end, T)
    abar = np.concatenate([[1.0], np.cumprod(1.0 - b)])
    return DiffusionSchedule(np.sqrt(abar), np.sqrt(1.0 - abar))


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def noisify(x, t, eps, sched):
    _same_shape(x, eps)
    return sched.alphas[t] * np.asarray(x) + sched.betas[t] * np.asarray(eps)


def one_step_denoise(z_t, v0_hat, sched, t=None):
    """``(z_t - sqrt(1 - abar_t) v0) / sqrt(abar_t)``; ``t`` defaults to ``T``."""
    _same_shape(z_t, v0_hat)
    t = sched.T if t is None else t
    return (np.asarray(z_t) - sched.betas[t] * np.asarray(v0_hat)) / sched.alphas[t]


@dataclass(frozen=True)
class StationaryGaussianPrior:
    """Gaussian prior with image mean and per-frequency variance (centered grid).

    ``spectral_variance`` has shape (H, W) and is shared by all channels.
    It must be symmetric under ``(u, v) -> (-u, -v)`` so the prior is real.
    """

    mean: np.ndarray
    spectral_variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.spectral_variance, dtype=np.float64)
        if var.shape != mean.shape[:2]:
            raise ShapeError("spectral variance grid must match the mean's spatial size")
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise ParameterError("spectral variances must be finite and non-negative")
        nat = np.fft.ifftshift(var)
        mirrored = np.roll(nat[::-1, ::-1], 1, axis=(0, 1))
        if not np.allclose(nat, mirrored, rtol=0, atol=1e-12 * max(1.0, var.max())):
            raise ParameterError("spectral variance must be point-symmetric for a real prior")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "spectral_variance", var)

    @classmethod
    def point_mass(cls, mean):
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean, np.zeros(mean.shape[:2]))


def _per_bin(gains, img):
    return gains if np.ndim(img) == 2 else gains[..., None]


def prior_eps(prior, z_t, t, sched):
    """Exact epsilon prediction of the noisy prior marginal N(a mu, a^2 S + b^2 I)."""
    _same_shape(prior.mean, z_t)
    a, b = sched.alphas[t], sched.betas[t]
    if b < 1e-8:
        raise TimestepError(f"noise coefficient {b:.2e} at t={t} is too small to divide by")
    if np.all(prior.spectral_variance == 0):
        return (np.asarray(z_t) - a * prior.mean) / b
    denom = a * a * prior.spectral_variance + b * b
    resid = np.asarray(z_t) - a * prior.mean
    return b * real_part(ifft2(fft2(resid) / _per_bin(denom, resid)), scale=float(np.abs(resid).max()))


def generator_eps(x_hat, z_t, t, sched):
    """Epsilon prediction for a point-mass generator at ``x_hat``."""
    _same_shape(x_hat, z_t)
    b = sched.betas[t]
    if b < 1e-8:
        raise TimestepError(f"noise coefficient {b:.2e} at t={t} is too small to divide by")
    return (np.asarray(z_t) - sched.alphas[t] * np.asarray(x_hat)) / b


def vsd_gradient(x_hat, prior, t, eps, sched, omega=1.0):
    """Single-sample VSD gradient ``omega * a_t * (prior_eps - generator_eps)``.

    Descending along it moves ``x_hat`` toward higher prior likelihood.
    """
    z_t = noisify(x_hat, t, eps, sched)
    # omega applied last so that scaling it scales the sample exactly
    return omega * (sched.alphas[t] * (prior_eps(prior, z_t, t, sched) - generator_eps(x_hat, z_t, t, sched)))


def closed_form_vsd_gradient(x_hat, prior, sched, t_range=(20, 980), omega_rule=None):
    """Expectation of :func:`vsd_gradient` over eps and integer t uniform on ``t_range``.

    Per frequency bin the expectation at fixed t is
    ``omega(t) a^2 b (x - mu) / (a^2 S + b^2)``; it is averaged over t.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    _same_shape(prior.mean, x_hat)
    t_lo, t_hi = t_range
    ts = np.arange(t_lo, t_hi + 1)
    diff = fft2(x_hat - prior.mean)
    gain = np.zeros(prior.spectral_variance.shape)
    for t in ts:
        a, b = sched.alphas[t], sched.betas[t]
        w = 1.0 if omega_rule is None else omega_rule(t)
        gain += w * a * a * b / (a * a * prior.spectral_variance + b * b)
    gain /= len(ts)
    return real_part(ifft2(_per_bin(gain, diff) * diff), scale=float(np.abs(x_hat - prior.mean).max()) + 1.0)


def hf_vsd_update(x_hat, prior, mask, t, eps, sched, omega=1.0):
    """VSD gradient projected onto the high band of ``mask``."""
    return project(vsd_gradient(x_hat, prior, t, eps, sched, omega), mask, "high")


def compute_vsd_weight(x_hat, eps_pred, floor=1e-12):
    """Adaptive weight ``1 / mean((x_hat - eps_pred)^2)``."""
    _same_shape(x_hat, eps_pred)
    denom = float(np.mean((np.asarray(x_hat) - np.asarray(eps_pred)) ** 2))
    if denom < floor:
        raise WeightOverflowError(f"mean squared difference {denom:.3e} below {floor:g}")
    return 1.0 / denom


@dataclass
class DistillConfig:
    lam: float = 1.0
    t_min: int = 20
    t_max: int = 980
    mask: RadialMask = None
    steps: int = 2000
    lr: float = 0.05
    mode: str = "hf_vsd"
    seed: int = 0
    omega: str = "constant"
    tail_fraction: float = 0.5
    schedule: DiffusionSchedule = None

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ParameterError(f"unknown distillation mode {self.mode!r}")
        if self.schedule is None:
            self.schedule = make_schedule()
        if not 0 <= self.t_min < self.t_max <= self.schedule.T:
            raise ParameterError("need 0 <= t_min < t_max <= T")
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if self.omega not in ("constant", "adaptive"):
            raise ParameterError("omega must be 'constant' or 'adaptive'")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ParameterError("tail_fraction must lie in (0, 1]")


TRACE_COLUMNS = ("iter", "data_loss", "reg_norm", "lowband_err", "highband_energy")


@dataclass
class DistillState:
    x_hat: np.ndarray
    iteration: int = 0
    trace: dict = field(default_factory=lambda: {k: [] for k in TRACE_COLUMNS})
    x_init: np.ndarray = None
    tail_lowband_rmse: float = None
    tail_highband_rmse: float = None

    def rows(self):
        return list(zip(*(self.trace[k] for k in TRACE_COLUMNS)))


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _spec_ms(z):
    """Mean square of the image whose unitary spectrum is ``z`` (Parseval)."""
    return float(np.vdot(z, z).real) / z.size


def _chw(img):
    """(H, W[, C]) -> contiguous (C, H, W)."""
    img = np.asarray(img)
    return np.ascontiguousarray(img[None] if img.ndim == 2 else np.moveaxis(img, -1, 0))


def _spec(img):
    return np.fft.fft2(img, norm="ortho")


def run_distillation(target_lowband, prior, config, reference=None, init=None, callback=None):
    """Gradient descent on ``x_hat`` for the data term plus lambda times the distillation term.

    The data term is the MSE of ``x_hat - target`` seen through the observation
    gains ``1 - h`` (the complement of ``config.mask``). Gradients are those of
    the pixel-summed objective, so ``lr`` does not depend on image size:
    ``(1 - h)^2 (x - y) + lam * u`` per bin, where ``u`` is a VSD sample
    (``naive_vsd``), its high-band projection (``hf_vsd``) or zero.

    Every term is a per-bin linear map, so the iteration runs on the unitary
    spectrum of ``x_hat``; band errors follow from Parseval. One timestep and
    one noise field are drawn per iteration from a counter-based generator
    seeded by ``config.seed`` whenever the regularizer is active, so runs that
    differ only in mode see the same draws. Band errors are measured against ``reference``
    (default: the target) and the tail RMSEs aggregate squared band errors
    over the last ``tail_fraction`` of iterations.

    ``callback(k, spectrum)`` receives the centered spectrum of ``x_hat``
    (as :func:`burstlab.spectral.fft2` would return it) after step ``k``.
    """
    y = np.asarray(target_lowband, dtype=np.float64)
    _same_shape(prior.mean, y)
    mask = config.mask
    if mask is None or mask.shape != y.shape[:2]:
        raise ShapeError("config.mask must be set and match the image grid")
    ref = y if reference is None else np.asarray(reference, dtype=np.float64)
    _same_shape(ref, y)
    sched = config.schedule
    color = y.ndim == 3

    # natural-order gains; spectra are held as (C, H, W)
    h = np.fft.ifftshift(mask.values)
    g = 1.0 - h
    g2 = g * g
    var = np.fft.ifftshift(prior.spectral_variance)
    point_mass = bool(np.all(var == 0))
    y_s, ref_s, mu_s = _spec(_chw(y)), _spec(_chw(ref)), _spec(_chw(prior.mean))

    x = y.copy() if init is None else np.array(init, dtype=np.float64)
    _same_shape(x, y)
    xs = _spec(_chw(x))
    state = DistillState(x_hat=x, x_init=x.copy())
    rng = np.random.Generator(np.random.Philox(config.seed))
    tail_start = config.steps - max(1, int(round(config.tail_fraction * config.steps)))
    low_sq, high_sq, n_tail = 0.0, 0.0, 0
    use_reg = config.mode != "data_only" and config.lam != 0
    tr = state.trace

    def to_image(spec):
        out = real_part(np.fft.ifft2(spec, norm="ortho"), scale=float(np.abs(spec).max()) + 1.0)
        return np.ascontiguousarray(np.moveaxis(out, 0, -1)) if color else out[0]

    def centered(spec):
        out = np.fft.fftshift(spec, axes=(1, 2))
        return np.moveaxis(out, 0, -1) if color else out[0]

    hd = h if config.mode == "hf_vsd" else 1.0
    h_ref = h * ref_s
    for k in range(config.steps):
        if use_reg:
            t = int(rng.integers(config.t_min, config.t_max + 1))
            eps = rng.standard_normal(y.shape)
        gr = g * (xs - y_s)
        data_loss = _spec_ms(gr)
        step = g * gr

        reg_norm = 0.0
        if use_reg:
            a, b = sched.alphas[t], sched.betas[t]
            if b < 1e-8:
                raise TimestepError(f"noise coefficient {b:.2e} at t={t} is too small to divide by")
            omega = 1.0
            if config.omega == "adaptive":
                x = to_image(xs)
                omega = compute_vsd_weight(x, generator_eps(x, noisify(x, t, eps, sched), t, sched))
            # a * (prior_eps - generator_eps) with z - a x = b eps substituted:
            # (a^2 b (x - mu) - a^3 S eps) / (a^2 S + b^2) per bin
            den = a * a * var + b * b
            c_mean = (omega * a * a * b) * hd / den
            reg = c_mean * (xs - mu_s)
            if not point_mass:
                reg -= ((omega * a * a * a) * hd * var / den) * _spec(_chw(eps))
            reg_norm = math.sqrt(_spec_ms(reg))
            step += config.lam * reg
        xs = xs - config.lr * step

        ge = g * (xs - ref_s)
        low = math.sqrt(_spec_ms(ge))
        hx = h * xs
        high_e = _spec_ms(hx)
        tr["iter"].append(k + 1)
        tr["data_loss"].append(data_loss)
        tr["reg_norm"].append(reg_norm)
        tr["lowband_err"].append(low)
        tr["highband_energy"].append(high_e)
        if k >= tail_start:
            low_sq += low * low
            high_sq += _spec_ms(hx - h_ref)
            n_tail += 1
        state.iteration = k + 1
        if callback is not None:
            callback(k, centered(xs))
        if not math.isfinite(data_loss) or data_loss > 1e6 or not math.isfinite(high_e):
            state.x_hat = np.moveaxis(np.fft.ifft2(xs, norm="ortho").real, 0, -1) if color else \
                np.fft.ifft2(xs[0], norm="ortho").real
            raise DivergenceError(f"distillation diverged at iteration {k + 1}", trace=state)

    state.x_hat = to_image(xs)
    if n_tail:
        state.tail_lowband_rmse = float(np.sqrt(low_sq / n_tail))
        state.tail_highband_rmse = float(np.sqrt(high_sq / n_tail))
    return state
