"""Image distance L_d (L1 + MS-SSIM mix) and the uSRGR training objectives.

Every objective takes callables ``f`` / ``g`` mapping a (B,1,H,W) Tensor to a
Tensor, so they work with the networks in :mod:`usrgr.models` as well as with
hand-written maps in tests.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, no_grad
from .kspace import SincKernel, build_sinc_kernel, f_crop, f_crop_op, sinc_downsample_op

MSSSIM_WEIGHTS_5 = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

Net = Callable[[Tensor], Tensor]


def msssim_weights(scales: int) -> tuple[float, ...]:
    """The conventional 5-scale weights, truncated to ``scales`` and renormalized."""
    if not 1 <= scales <= 5:
        raise ValueError(f"msssim scales must be in 1..5, got {scales}")
    w = np.asarray(MSSSIM_WEIGHTS_5[:scales])
    return tuple(float(v) for v in w / w.sum())


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.84
    beta: float = 1.0
    gamma: float = 0.5
    a: float = 0.001
    msssim_scales: int = 3
    msssim_weights: tuple[float, ...] | None = None
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    # drop coarse scales (renormalizing weights) when an image is too small for msssim_scales
    adaptive_scales: bool = True
    sinc_taps: int = 31

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.msssim_weights is None:
            object.__setattr__(self, "msssim_weights", msssim_weights(self.msssim_scales))
        w = tuple(float(v) for v in self.msssim_weights)
        object.__setattr__(self, "msssim_weights", w)
        if len(w) != self.msssim_scales:
            raise ValueError(f"{len(w)} msssim weights for {self.msssim_scales} scales")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"msssim weights sum to {sum(w)}, expected 1")
        if self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd")

    def min_extent(self, scales: int | None = None) -> int:
        s = self.msssim_scales if scales is None else scales
        return self.ssim_window * 2 ** (s - 1)

    def fitted(self, h: int, w: int) -> "LossConfig":
        """Config whose scale count fits an ``h x w`` image (self if it already fits)."""
        if min(h, w) >= self.min_extent():
            return self
        s = self.msssim_scales
        while s > 1 and min(h, w) < self.min_extent(s):
            s -= 1
        weights = np.asarray(self.msssim_weights[:s])
        return replace(self, msssim_scales=s, msssim_weights=tuple(weights / weights.sum()))

    def kernel(self) -> SincKernel:
        return build_sinc_kernel(self.sinc_taps)


@functools.lru_cache(maxsize=32)
def _gauss_valid(n: int, window: int, sigma: float) -> np.ndarray:
    """(n - window + 1, n) matrix applying a normalized Gaussian with 'valid' support."""
    r = window // 2
    t = np.arange(-r, r + 1)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    m = np.zeros((n - window + 1, n))
    for i in range(n - window + 1):
        m[i, i:i + window] = k
    return m


def _ssim_terms(x: Tensor, y: Tensor, cfg: LossConfig) -> tuple[Tensor, Tensor]:
    """Per-image mean luminance-contrast-structure and contrast-structure maps."""
    h, w = x.shape[-2:]
    gh = _gauss_valid(h, cfg.ssim_window, cfg.ssim_sigma)
    gw = _gauss_valid(w, cfg.ssim_window, cfg.ssim_sigma)
    filt = lambda t: ad.sep_linear(t, gh, gw)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mx, my = filt(x), filt(y)
    mxx, myy, mxy = mx * mx, my * my, mx * my
    sxx = filt(x * x) - mxx
    syy = filt(y * y) - myy
    sxy = filt(x * y) - mxy
    cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum_map = (2.0 * mxy + c1) / (mxx + myy + c1)
    axes = tuple(range(1, x.ndim))
    return ad.mean(lum_map * cs_map, axis=axes), ad.mean(cs_map, axis=axes)


def _check_pair(x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")


def ssim(x, y, cfg: LossConfig = LossConfig(), reduction: str = "mean") -> Tensor:
    """Single-scale SSIM with a Gaussian window over the valid region."""
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    _check_pair(x, y)
    if min(x.shape[-2:]) < cfg.ssim_window:
        raise ShapeError(f"ssim needs extents >= {cfg.ssim_window}, got {x.shape[-2:]}")
    s, _ = _ssim_terms(x, y, cfg)
    return ad.mean(s) if reduction == "mean" else s


def ms_ssim(x, y, cfg: LossConfig = LossConfig(), reduction: str = "mean") -> Tensor:
    """Multi-scale SSIM; contrast-structure at every scale, luminance at the coarsest.

    Inputs are (B, C, H, W) or (H, W); ``reduction='none'`` returns one value per
    leading item. Negative per-scale terms are floored at a tiny positive value
    so fractional powers stay defined.
    """
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    _check_pair(x, y)
    if x.ndim == 2:
        x = ad.reshape(x, (1, 1) + x.shape)
        y = ad.reshape(y, (1, 1) + y.shape)
    need = cfg.min_extent()
    if min(x.shape[-2:]) < need:
        raise ShapeError(
            f"ms_ssim with {cfg.msssim_scales} scales needs extents >= {need}, got {x.shape[-2:]}")
    vals = None
    for i, w in enumerate(cfg.msssim_weights):
        last = i == cfg.msssim_scales - 1
        full, cs = _ssim_terms(x, y, cfg)
        term = ad.power(ad.maximum(full if last else cs, 1e-8), w)
        vals = term if vals is None else vals * term
        if not last:
            x, y = ad.avg_pool2(x), ad.avg_pool2(y)
    return ad.mean(vals) if reduction == "mean" else vals


def l1(x, y, reduction: str = "mean") -> Tensor:
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    _check_pair(x, y)
    d = ad.absolute(x - y)
    if reduction == "mean":
        return ad.mean(d)
    return ad.mean(d, axis=tuple(range(1, d.ndim)))


def l_d(x, y, cfg: LossConfig = LossConfig(), reduction: str = "mean") -> Tensor:
    """``alpha * (1 - MS-SSIM) + (1 - alpha) * L1``."""
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    _check_pair(x, y)
    if cfg.adaptive_scales:
        cfg = cfg.fitted(*x.shape[-2:])
    parts = []
    if cfg.alpha > 0:
        parts.append(cfg.alpha * (1.0 - ms_ssim(x, y, cfg, reduction)))
    if cfg.alpha < 1:
        parts.append((1.0 - cfg.alpha) * l1(x, y, reduction))
    return parts[0] if len(parts) == 1 else parts[0] + parts[1]


# -- training objectives ---------------------------------------------------------

def _batch(x) -> Tensor:
    x = x.detach() if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a (B,1,H,W) batch, got {x.shape}")
    return x


def _check_divisible(x: Tensor, k: int, what: str) -> None:
    h, w = x.shape[-2:]
    if h % k or w % k:
        raise ShapeError(f"{what} needs batch extents divisible by {k}, got {h}x{w}")


def loss_ss(f: Net, lr_batch, cfg: LossConfig = LossConfig()) -> Tensor:
    """Self-supervision: L_d(f(fcrop(I_LR)), I_LR), averaged over the batch."""
    x = _batch(lr_batch)
    _check_divisible(x, 4, "loss_ss")
    return l_d(f(Tensor(f_crop(x.data))), x, cfg)


def loss_fid(f: Net, lr_batch, cfg: LossConfig = LossConfig()) -> Tensor:
    """Fidelity: L_d(fcrop(f(I_LR)), I_LR), gradient flowing through the crop."""
    x = _batch(lr_batch)
    _check_divisible(x, 4, "loss_fid")
    return l_d(f_crop_op(f(x)), x, cfg)


def loss_g(g: Net, batch, cfg: LossConfig = LossConfig(), kernel: SincKernel | None = None) -> Tensor:
    """Sinc-residual objective: L_d(g(fcrop(I)), sinc(I)); the Sinc target is a constant."""
    x = _batch(batch)
    _check_divisible(x, 2, "loss_g")
    kernel = kernel or cfg.kernel()
    target = Tensor(sinc_downsample_op(x, kernel).data)
    return l_d(g(Tensor(f_crop(x.data))), target, cfg)


def sinc_hinge(pred_hr: Tensor, g_target: Tensor, cfg: LossConfig, kernel: SincKernel | None = None) -> Tensor:
    """Per-item ``max(L_d(sinc(pred_hr), g_target), a)`` as a (B,) vector."""
    kernel = kernel or cfg.kernel()
    inner = l_d(sinc_downsample_op(pred_hr, kernel), g_target.detach(), cfg, reduction="none")
    return ad.maximum(inner, cfg.a)


def loss_sinc(f: Net, g: Net, batch, cfg: LossConfig = LossConfig(), kernel: SincKernel | None = None) -> Tensor:
    """Sinc-convolution constraint on one population of images ``I``."""
    x = _batch(batch)
    with no_grad():
        target = g(x).detach()
    return ad.mean(sinc_hinge(f(x), target, cfg, kernel))


@dataclass
class Objective:
    total: Tensor
    terms: dict[str, float]
    hr_pred: Tensor | None = None


def loss_total(f: Net, g: Net | None, lr_batch, cfg: LossConfig = LossConfig(), use_fid: bool = True,
               use_sinc: bool = True, kernel: SincKernel | None = None) -> Objective:
    """L_ss + beta * L_f + gamma * L_sinc, with per-term values for logging.

    L_sinc runs over the concatenation of the I_LR items and their f-cropped
    I_LR' children, each item weighted equally. Disabled terms (flag off or
    zero weight) are left out of ``terms``.
    """
    x = _batch(lr_batch)
    _check_divisible(x, 4, "loss_total")
    use_fid = use_fid and cfg.beta != 0
    use_sinc = use_sinc and cfg.gamma != 0
    if use_sinc and g is None:
        raise ValueError("the Sinc constraint needs a g network")
    x_small = Tensor(f_crop(x.data))
    pred_small = f(x_small)
    l_ss = l_d(pred_small, x, cfg)
    total = l_ss
    terms = {"l_ss": float(l_ss.data)}
    pred_hr = f(x) if (use_fid or use_sinc) else None
    if use_fid:
        l_f = l_d(f_crop_op(pred_hr), x, cfg)
        total = total + cfg.beta * l_f
        terms["l_f"] = float(l_f.data)
    if use_sinc:
        with no_grad():
            g_lr = g(x).detach()
            g_small = g(x_small).detach()
        hinge = ad.concat([sinc_hinge(pred_hr, g_lr, cfg, kernel), sinc_hinge(pred_small, g_small, cfg, kernel)])
        l_sinc = ad.mean(hinge)
        total = total + cfg.gamma * l_sinc
        terms["l_sinc"] = float(l_sinc.data)
    terms["total"] = float(total.data)
    return Objective(total, terms, pred_hr)
