"""Exact range/null-space projectors of small circular-convolution operators.

An operator is a circular convolution on an ``n x n`` grid, optionally followed
by stride-``d`` decimation. For ``d == 1`` it is block-circulant with circulant
blocks and is diagonalized by the 2-D DFT, so its null-space projector is a
binary Fourier mask; the dense SVD path checks that identity and also covers
``d > 1``, where the diagonalization no longer holds.
"""

from dataclasses import dataclass

import numpy as np

from .errors import OracleScaleError, ParameterError, ShapeError, UnsupportedOperatorError

MAX_DENSE_N = 32
SV_TOL = 1e-10


def _circular_offsets(n):
    i = np.arange(n)
    return np.minimum(i, n - i)


def make_kernel(spec, n):
    """Build an ``n x n`` circular kernel (origin at index (0, 0)) from a spec string.

    Terms: ``delta``, ``zero``, ``gaussian:SIGMA``, ``box:K``, ``hpair``,
    ``vpair``. Terms joined by ``*`` are circularly convolved.
    """
    if "*" in spec:
        spectra = [np.fft.fft2(make_kernel(term, n)) for term in spec.split("*")]
        return np.real(np.fft.ifft2(np.prod(spectra, axis=0)))
    name, _, arg = spec.strip().partition(":")
    k = np.zeros((n, n))
    if name == "delta":
        k[0, 0] = 1.0
    elif name == "zero":
        pass
    elif name == "gaussian":
        sigma = float(arg or 1.0)
        if sigma <= 0:
            raise ParameterError("gaussian sigma must be positive")
        d = _circular_offsets(n).astype(np.float64)
        k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
        k /= k.sum()
    elif name == "box":
        size = int(arg or 3)
        if not 1 <= size <= n:
            raise ParameterError(f"box size must be in [1, {n}]")
        idx = (np.arange(size) - size // 2) % n
        k[np.ix_(idx, idx)] = 1.0 / (size * size)
    elif name == "hpair":
        k[0, 0] = k[0, 1] = 0.5
    elif name == "vpair":
        k[0, 0] = k[1, 0] = 0.5
    else:
        raise ParameterError(f"unknown kernel term {spec!r}")
    return k


@dataclass(frozen=True)
class BccbOperator:
    kernel: np.ndarray
    decimation: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ShapeError("kernel must be a square n x n array")
        if self.decimation < 1 or k.shape[0] % self.decimation:
            raise ParameterError("decimation must be >= 1 and divide the grid size")
        object.__setattr__(self, "kernel", k)

    @property
    def n(self):
        return self.kernel.shape[0]

    @property
    def spectrum(self):
        """Eigenvalues of the undecimated convolution, natural DFT order."""
        return np.fft.fft2(self.kernel)

    @property
    def output_shape(self):
        m = self.n // self.decimation
        return (m, m)


def apply_forward(op, x):
    """Circular convolution with the kernel, then keep every ``d``-th sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (op.n, op.n):
        raise ShapeError(f"signal shape {x.shape} does not match grid {(op.n, op.n)}")
    y = np.real(np.fft.ifft2(np.fft.fft2(x) * op.spectrum))
    d = op.decimation
    return y[::d, ::d] if d > 1 else y


def dense_matrix(op):
    """Materialize ``A`` as an ``(n^2/d^2) x n^2`` matrix acting on row-major vectors."""
    n = op.n
    if n > MAX_DENSE_N:
        raise OracleScaleError(f"dense oracle is limited to n <= {MAX_DENSE_N}, got {n}")
    basis = np.eye(n * n).reshape(n * n, n, n)
    cols = np.real(np.fft.ifft2(np.fft.fft2(basis, axes=(1, 2)) * op.spectrum, axes=(1, 2)))
    d = op.decimation
    cols = cols[:, ::d, ::d]
    return cols.reshape(n * n, -1).T.copy()


def range_projector(op, tol=SV_TOL):
    """``A^+ A`` via a full SVD, singular values below ``tol * s_max`` treated as zero."""
    a = dense_matrix(op)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    v = vt[:rank]
    return v.T @ v


def null_projector(op, tol=SV_TOL):
    """``I - A^+ A``."""
    return np.eye(op.n * op.n) - range_projector(op, tol)


def fourier_null_gains(op, tol=SV_TOL):
    """Binary null-space gains in natural DFT order: 1 where ``|Lambda| <= tol * max|Lambda|``."""
    if op.decimation != 1:
        raise UnsupportedOperatorError(
            "decimated operators are not diagonalized by the DFT; use null_projector")
    mag = np.abs(op.spectrum)
    peak = mag.max()
    if peak == 0:
        return np.ones_like(mag)
    return (mag <= tol * peak).astype(np.float64)


def apply_fourier_gains(gains, x):
    """Spectral multiplication with natural-order gains; real output."""
    return np.real(np.fft.ifft2(np.fft.fft2(np.asarray(x, dtype=np.float64)) * gains))


def _dense_from_gains(gains):
    n = gains.shape[0]
    basis = np.eye(n * n).reshape(n * n, n, n)
    cols = np.real(np.fft.ifft2(np.fft.fft2(basis, axes=(1, 2)) * gains, axes=(1, 2)))
    return cols.reshape(n * n, n * n).T.copy()


def unitary_dft_matrix(n):
    f1 = np.fft.fft(np.eye(n), norm="ortho", axis=0)
    return np.kron(f1, f1)


def mask_fidelity_report(op, mask, threshold=0.5, tol=SV_TOL):
    """Compare a centered soft mask with the operator's exact null-space projector.

    Reports the spectral-norm distance between the mask's dense action and
    ``I - A^+ A``, per-bin soft versus exact gains (the diagonal of the exact
    projector in the Fourier basis), and the fraction of likelihood-strong bins
    (``|Lambda| > tol * max``) on which the soft gain exceeds ``threshold``.
    """
    n = op.n
    if mask.shape != (n, n):
        raise ShapeError(f"mask grid {mask.shape} does not match operator grid {(n, n)}")
    soft = np.fft.ifftshift(mask.values)
    p_h = null_projector(op, tol)
    diff = _dense_from_gains(soft) - p_h
    f = unitary_dft_matrix(n)
    exact = np.real(np.einsum("ij,jk,ik->i", f, p_h, f.conj())).reshape(n, n)
    mag = np.abs(op.spectrum)
    strong = mag > tol * mag.max() if mag.max() > 0 else np.zeros_like(mag, dtype=bool)
    n_strong = int(strong.sum())
    leaked = int(np.sum(soft[strong] > threshold))
    return {
        "n": n,
        "decimation": op.decimation,
        "operator_norm_diff": float(np.linalg.norm(diff, 2)),
        "max_gain_diff": float(np.max(np.abs(soft - exact))),
        "null_dim": int(round(np.trace(p_h))),
        "strong_bins": n_strong,
        "leak_threshold": threshold,
        "leak_fraction": leaked / n_strong if n_strong else 0.0,
        "soft_gains": np.round(np.fft.fftshift(soft), 12).tolist(),
        "exact_gains": np.round(np.fft.fftshift(exact), 12).tolist(),
    }
