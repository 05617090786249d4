"""Fourier-domain degradation operators.

Conventions
-----------
* Spectra are stored centered: ``fftshift`` of the FFT, DC at ``(H//2, W//2)``.
* The image origin is pixel 0 (no ``ifftshift`` on the image side), so the
  low-resolution pixel ``j`` of every downsampler sits on high-resolution
  pixel ``factor * j``. f-cropping and Sinc decimation therefore share one
  sampling phase and agree exactly in the full-kernel limit.
* An even-length crop keeps shifted indices ``[-n/2, n/2)``; the lone
  ``-n/2`` line is zeroed in both axes so the cropped spectrum is Hermitian.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, sep_linear


@dataclass(frozen=True)
class ComplexGrid:
    """Centered 2D spectrum under the unitary DFT."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[-2]

    @property
    def width(self) -> int:
        return self.data.shape[-1]

    @property
    def dc(self) -> complex:
        return complex(self.data[..., self.height // 2, self.width // 2])


def dft2(img: np.ndarray) -> ComplexGrid:
    img = np.asarray(img)
    if img.shape[-2] < 2 or img.shape[-1] < 2:
        raise ShapeError(f"dft2 needs extents >= 2, got {img.shape}")
    return ComplexGrid(np.fft.fftshift(np.fft.fft2(img, norm="ortho"), axes=(-2, -1)))


def idft2(grid: ComplexGrid) -> tuple[np.ndarray, float]:
    """Inverse of :func:`dft2`; returns the real part and the largest discarded |imag|."""
    z = np.fft.ifft2(np.fft.ifftshift(grid.data, axes=(-2, -1)), norm="ortho")
    return z.real.copy(), float(np.abs(z.imag).max(initial=0.0))


# -- f-cropping ------------------------------------------------------------------

def _check_crop(shape: tuple[int, ...], factor: int) -> tuple[int, int]:
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    h, w = shape[-2:]
    if h % (2 * factor) or w % (2 * factor):
        raise ShapeError(f"f_crop needs extents divisible by {2 * factor}, got {h}x{w}")
    return h // factor, w // factor


def _crop_block(h: int, w: int, n: int, m: int) -> tuple[slice, slice]:
    return slice(h // 2 - n // 2, h // 2 + n // 2), slice(w // 2 - m // 2, w // 2 + m // 2)


def f_crop(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Downsample by keeping the central k-space block (acts on the last two axes).

    The result is scaled by ``1/factor**2`` (numpy's unnormalized FFT pair)
    so the image mean is preserved.
    """
    img = np.asarray(img)
    n, m = _check_crop(img.shape, factor)
    h, w = img.shape[-2:]
    spec = np.fft.fftshift(np.fft.fft2(img), axes=(-2, -1))
    rs, cs = _crop_block(h, w, n, m)
    block = spec[..., rs, cs].copy()
    block[..., 0, :] = 0
    block[..., :, 0] = 0
    out = np.fft.ifft2(np.fft.ifftshift(block, axes=(-2, -1))).real / factor**2
    return out.astype(img.dtype if img.dtype in (np.float32, np.float64) else np.float64)


def f_crop_adjoint(y: np.ndarray, factor: int = 2) -> np.ndarray:
    """Adjoint of :func:`f_crop`: zero-fill the spectrum back to full size."""
    y = np.asarray(y)
    n, m = y.shape[-2:]
    h, w = n * factor, m * factor
    spec = np.fft.fftshift(np.fft.fft2(y), axes=(-2, -1))
    spec[..., 0, :] = 0
    spec[..., :, 0] = 0
    full = np.zeros(y.shape[:-2] + (h, w), dtype=spec.dtype)
    rs, cs = _crop_block(h, w, n, m)
    full[..., rs, cs] = spec
    return np.fft.ifft2(np.fft.ifftshift(full, axes=(-2, -1))).real.astype(y.dtype)


def f_crop_op(x: Tensor, factor: int = 2) -> Tensor:
    """Differentiable :func:`f_crop`; backward applies :func:`f_crop_adjoint`."""
    out = f_crop(x.data, factor)
    return Tensor._make(out, (x,), lambda g: (f_crop_adjoint(g, factor),))


# -- Sinc decimation -------------------------------------------------------------

@dataclass(frozen=True)
class SincKernel:
    """Odd-length, even-symmetric low-pass kernel with unit DC gain."""

    values: tuple[float, ...]
    factor: int = 2
    period: int | None = None

    @property
    def taps(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values)


def dirichlet(t: np.ndarray, period: int, factor: int = 2) -> np.ndarray:
    """Spatial response of the f-crop box (Nyquist line removed) on a ``period``-point grid."""
    if period % (2 * factor):
        raise ShapeError(f"period {period} must be divisible by {2 * factor}")
    half = period // (2 * factor)
    k = np.arange(1, half)
    return (1.0 + 2.0 * np.cos(2 * np.pi * np.outer(t, k) / period).sum(axis=1)) / period


def build_sinc_kernel(taps: int, factor: int = 2, period: int | None = None) -> SincKernel:
    """Half-band Sinc kernel truncated to ``taps`` and renormalized to sum 1.

    Without ``period`` this samples ``sin(pi t / factor) / (pi t)``. With
    ``period`` it samples the Dirichlet kernel that realizes f-cropping on a
    grid of that many points; ``taps == period + 1`` covers the full period,
    the two end taps (which alias onto the same offset) sharing its value.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"taps must be a positive odd integer, got {taps}")
    half = (taps - 1) // 2
    t = np.arange(-half, half + 1)
    if period is None:
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(t == 0, 1.0 / factor, np.sin(np.pi * t / factor) / (np.pi * t))
    else:
        if taps > period + 1:
            raise ValueError(f"taps={taps} exceeds one period ({period}) of the Dirichlet kernel")
        h = dirichlet(t, period, factor)
        if taps == period + 1:
            h[0] *= 0.5
            h[-1] *= 0.5
    h = h / h.sum()
    h = 0.5 * (h + h[::-1])  # exact symmetry after rounding
    return SincKernel(tuple(float(v) for v in h), factor, period)


@functools.lru_cache(maxsize=64)
def _decimation_matrix(n: int, kernel: SincKernel) -> np.ndarray:
    f = kernel.factor
    half = (kernel.taps - 1) // 2
    mat = np.zeros((n // f, n))
    rows = np.arange(n // f)
    for t, h in zip(range(-half, half + 1), kernel.values):
        np.add.at(mat, (rows, (f * rows - t) % n), h)
    return mat


def _check_sinc(shape: tuple[int, ...], kernel: SincKernel) -> None:
    f = kernel.factor
    for n in shape[-2:]:
        if n % f:
            raise ShapeError(f"extent {n} not divisible by factor {f}")
        full_period = kernel.period == n and kernel.taps == n + 1
        if kernel.taps > n and not full_period:
            raise ShapeError(f"kernel taps {kernel.taps} exceed image extent {n}")
        if kernel.period is not None and kernel.period != n:
            raise ShapeError(f"kernel built for period {kernel.period}, image extent is {n}")


def sinc_downsample_op(x: Tensor, kernel: SincKernel) -> Tensor:
    """Separable circular Sinc convolution (width, then height) and decimation at index 0, 2, 4, ..."""
    _check_sinc(x.shape, kernel)
    rows = _decimation_matrix(x.shape[-2], kernel)
    cols = _decimation_matrix(x.shape[-1], kernel)
    return sep_linear(x, rows, cols)


def sinc_downsample(img: np.ndarray, kernel: SincKernel) -> np.ndarray:
    img = np.asarray(img)
    return sinc_downsample_op(Tensor(img), kernel).data


# -- bicubic ---------------------------------------------------------------------

def keys_cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@functools.lru_cache(maxsize=64)
def _bicubic_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Pixel-center aligned interpolation weights with clamped edges."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in range(-1, 3):
        idx = base + off
        wts = keys_cubic(src - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), wts)
    return mat


def bicubic_resize(img: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Separable Keys (a=-0.5) bicubic resize of the last two axes."""
    img = np.asarray(img)
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise ValueError(f"output extents must be positive, got {out_shape}")
    rows = _bicubic_matrix(oh, img.shape[-2])
    cols = _bicubic_matrix(ow, img.shape[-1])
    out = rows @ img @ cols.T
    return out.astype(img.dtype if img.dtype in (np.float32, np.float64) else np.float64)


# -- acquisition model -----------------------------------------------------------

@dataclass(frozen=True)
class DegradeConfig:
    factor: int = 2
    noise_sigma: float = 0.0
    sinc_taps: int = 31

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError(f"factor must be >= 2, got {self.factor}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.sinc_taps < 1 or self.sinc_taps % 2 == 0:
            raise ValueError(f"sinc_taps must be odd, got {self.sinc_taps}")

    def kernel(self) -> SincKernel:
        return build_sinc_kernel(self.sinc_taps, self.factor)


def degrade(img: np.ndarray, cfg: DegradeConfig = DegradeConfig(), seed: int = 0) -> np.ndarray:
    """Low-resolution acquisition: f-crop plus optional Gaussian noise."""
    out = f_crop(img, cfg.factor)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape).astype(out.dtype)
    return out
