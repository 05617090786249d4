"""Finite-difference suites for every differentiable op and the full network graphs.

Each suite builds float64 inputs from a seed and returns the worst relative
error between backprop and central differences.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients
from .kspace import build_sinc_kernel, f_crop_op, sinc_downsample_op
from .losses import LossConfig, l1, l_d, loss_fid, loss_g, loss_sinc, loss_total, ms_ssim
from .models import GNet, ModelConfig, SRNet

TOL = 1e-4

# small-image loss settings: windows must fit 8x8 and smaller images
SMALL_LOSS = LossConfig(ssim_window=5, ssim_sigma=1.0, msssim_scales=2, sinc_taps=7)


def _rand(rng, *shape, grad=True, low=None) -> Tensor:
    x = rng.normal(size=shape) if low is None else rng.uniform(low, 1.0, size=shape)
    return Tensor(x, requires_grad=grad)


def _randomize(net, rng, scale: float = 0.3):
    """Replace every parameter (including zero-initialized ones) with random values."""
    for p in net.parameters():
        p.data = rng.normal(0.0, scale, size=p.shape) / np.sqrt(max(1, p.size // p.shape[0]))
    return net


def conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _rand(rng, 1, 2, 5, 5), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)
    return check_gradients(lambda: ad.total(ad.conv2d(x, w, b) ** 2), [x, w, b], seed=seed)


def conv1d_axis(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x, w, b = _rand(rng, 2, 2, 6, 7), _rand(rng, 3, 2, 5), _rand(rng, 3)
    err = 0.0
    for axis in ("width", "height"):
        err = max(err, check_gradients(lambda: ad.total(ad.conv1d_axis(x, w, b, axis) ** 2), [x, w, b], seed=seed))
    return err


def leaky_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(3, 4))
    v[np.abs(v) < 1e-3] = 0.5  # stay clear of the kink
    x = Tensor(v, requires_grad=True)
    c = rng.normal(size=(3, 4))
    return check_gradients(lambda: ad.total(ad.leaky_relu(x, 0.1) * c), [x], seed=seed)


def pixel_shuffle(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 1, 8, 3, 3)
    c = rng.normal(size=(1, 2, 6, 6))
    return check_gradients(lambda: ad.total(ad.pixel_shuffle(x, 2) * c), [x], seed=seed)


def elementwise(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a, b = _rand(rng, 3, 4, low=0.5), _rand(rng, 3, 4, low=0.5)
    fn = lambda: ad.mean(ad.power(a / b, 0.7) * a - b + ad.absolute(a - 0.25))
    return check_gradients(fn, [a, b], seed=seed)


def avg_pool2(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 2, 1, 6, 7)
    c = rng.normal(size=(2, 1, 3, 3))
    return check_gradients(lambda: ad.total(ad.avg_pool2(x) * c), [x], seed=seed)


def f_crop(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 2, 1, 8, 12)
    c = rng.normal(size=(2, 1, 4, 6))
    return check_gradients(lambda: ad.total(f_crop_op(x) * c), [x], seed=seed)


def sinc_downsample(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, 1, 1, 8, 8)
    c = rng.normal(size=(1, 1, 4, 4))
    k = build_sinc_kernel(7)
    return check_gradients(lambda: ad.total(sinc_downsample_op(x, k) * c), [x], seed=seed)


def l1_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x, y = _rand(rng, 2, 1, 4, 4), Tensor(rng.normal(size=(2, 1, 4, 4)))
    return check_gradients(lambda: l1(x, y), [x], seed=seed)


def ms_ssim_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    y = rng.uniform(size=(2, 1, 12, 12))
    x = Tensor(np.clip(y + 0.2 * rng.normal(size=y.shape), 0, 1), requires_grad=True)
    return check_gradients(lambda: ms_ssim(x, y, SMALL_LOSS), [x], seed=seed)


def l_d_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    y = rng.uniform(size=(2, 1, 12, 12))
    x = Tensor(np.clip(y + 0.2 * rng.normal(size=y.shape), 0, 1), requires_grad=True)
    return check_gradients(lambda: l_d(x, y, SMALL_LOSS), [x], seed=seed)


def _tiny(cls, seed: int):
    rng = np.random.default_rng(seed)
    net = cls(ModelConfig(n_feats=4, n_blocks=1, dtype="float64"), seed=seed)
    return _randomize(net, rng)


def srnet(seed: int) -> float:
    f = _tiny(SRNet, seed)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 8, 8))
    c = np.random.default_rng(seed + 2000).normal(size=(1, 1, 16, 16))
    return check_gradients(lambda: ad.total(f(Tensor(x)) * c), f.parameters(), max_coords=20, seed=seed)


def gnet(seed: int) -> float:
    g = _tiny(GNet, seed)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 8, 8))
    c = np.random.default_rng(seed + 2000).normal(size=(1, 1, 8, 8))
    return check_gradients(lambda: ad.total(g(Tensor(x)) * c), g.parameters(), max_coords=20, seed=seed)


def fidelity(seed: int) -> float:
    f = _tiny(SRNet, seed)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 8, 8))
    return check_gradients(lambda: loss_fid(f, x, SMALL_LOSS), f.parameters(), max_coords=10, seed=seed)


def sinc_hinge(seed: int) -> float:
    f, g = _tiny(SRNet, seed), _tiny(GNet, seed + 1)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 8, 8))
    return check_gradients(lambda: loss_sinc(f, g, x, SMALL_LOSS), f.parameters(), max_coords=10, seed=seed)


def g_objective(seed: int) -> float:
    g = _tiny(GNet, seed)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 16, 16))
    return check_gradients(lambda: loss_g(g, x, SMALL_LOSS), g.parameters(), max_coords=10, seed=seed)


def total_objective(seed: int) -> float:
    """f forward + L_ss + beta L_f + gamma L_sinc; I_LR is 16x16 so f sees 8x8 and 16x16 inputs."""
    f, g = _tiny(SRNet, seed), _tiny(GNet, seed + 1)
    x = np.random.default_rng(seed + 1000).uniform(size=(1, 1, 16, 16))
    return check_gradients(lambda: loss_total(f, g, x, SMALL_LOSS).total, f.parameters(), max_coords=10, seed=seed)


SUITES: dict[str, Callable[[int], float]] = {
    "conv2d": conv2d,
    "conv1d_axis": conv1d_axis,
    "leaky_relu": leaky_relu,
    "pixel_shuffle": pixel_shuffle,
    "elementwise": elementwise,
    "avg_pool2": avg_pool2,
    "f_crop": f_crop,
    "sinc_downsample": sinc_downsample,
    "l1": l1_loss,
    "ms_ssim": ms_ssim_loss,
    "l_d": l_d_loss,
    "srnet": srnet,
    "gnet": gnet,
    "loss_fid": fidelity,
    "loss_sinc": sinc_hinge,
    "loss_g": g_objective,
    "loss_total": total_objective,
}


def run(names=None, seeds=range(10), tol: float = TOL) -> dict[str, float]:
    """Worst error per suite over ``seeds``; raises KeyError for unknown names."""
    names = list(SUITES) if names is None else list(names)
    return {n: max(SUITES[n](s) for s in seeds) for n in names}
