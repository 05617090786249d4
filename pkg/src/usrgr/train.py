"""g pretraining, joint uSRGR training with online g fine-tuning, and the deG+SR pipeline."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, ShapeError, Tensor, grad, no_grad
from .kspace import bicubic_resize, f_crop
from .losses import LossConfig, l_d, loss_g, loss_total
from .models import GNet, ModelConfig, SRNet

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_ss", "l_f", "l_sinc", "total", "g_loss")


class TrainingDiverged(RuntimeError):
    """A loss or gradient went non-finite; ``net`` holds the last finite parameters."""

    def __init__(self, msg: str, net=None, records=None):
        super().__init__(msg)
        self.net = net
        self.records = records or []


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 4
    steps: int = 2000
    epochs: int = 0  # if > 0, overrides steps with epochs * ceil(n_images / batch)
    patch: int = 64
    seed: int = 0
    no_fid: bool = False
    no_sinc: bool = False
    plain_blocks: bool = False
    plain_feats: int = 0  # 0 -> round(n_feats * 135 / 80), keeping the 80:135 plain/wide width ratio
    g_pretrain_steps: int = 1000
    g_finetune_per_step: int = 1
    checkpoint_every: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.patch % 4:
            raise ShapeError(f"patch size must be divisible by 4, got {self.patch}")

    def sr_model(self) -> ModelConfig:
        if not self.plain_blocks:
            return self.model
        n = self.plain_feats or round(self.model.n_feats * 135 / 80)
        return replace(self.model, variant="plain", n_feats=n)

    def g_model(self) -> ModelConfig:
        return self.model

    def total_steps(self, n_images: int) -> int:
        if self.epochs > 0:
            return self.epochs * math.ceil(n_images / self.batch)
        return self.steps


class PatchSampler:
    """Seeded stream of (batch, 1, patch, patch) crops drawn from a list of images."""

    def __init__(self, images: Sequence[np.ndarray], patch: int, batch: int, seed: int, dtype=np.float32):
        if not images:
            raise ValueError("no training images")
        for im in images:
            if im.shape[0] < patch or im.shape[1] < patch:
                raise ShapeError(f"patch {patch} larger than image {im.shape}")
        self.images = [np.asarray(im, dtype=dtype) for im in images]
        self.patch, self.batch = patch, batch
        self.rng = np.random.default_rng(seed)

    def next(self) -> np.ndarray:
        out = np.empty((self.batch, 1, self.patch, self.patch), dtype=self.images[0].dtype)
        p = self.patch
        for b in range(self.batch):
            im = self.images[int(self.rng.integers(len(self.images)))]
            r = int(self.rng.integers(0, im.shape[0] - p + 1))
            c = int(self.rng.integers(0, im.shape[1] - p + 1))
            out[b, 0] = im[r:r + p, c:c + p]
        return out


def _finite(grads) -> bool:
    return all(np.isfinite(g).all() for g in grads)


def _step(opt: Adam, loss: Tensor) -> bool:
    """Backprop + Adam; returns False (and leaves params untouched) if anything is non-finite."""
    if not np.isfinite(loss.data).all():
        return False
    grads = grad(loss, opt.params)
    if not _finite(grads):
        return False
    opt.step(grads)
    return True


def _fit(net, loss_fn: Callable[[np.ndarray], Tensor], sampler: PatchSampler, steps: int, lr: float,
         what: str, on_step=None) -> list[float]:
    opt = Adam(net.parameters(), lr=lr)
    curve: list[float] = []
    for step in range(steps):
        batch = sampler.next()
        loss = loss_fn(batch)
        if not _step(opt, loss):
            raise TrainingDiverged(f"{what}: non-finite loss at step {step}", net, curve)
        curve.append(float(loss.data))
        if on_step:
            on_step(step, curve[-1])
    return curve


def pretrain_g(images: Sequence[np.ndarray], cfg: TrainConfig, g: GNet | None = None,
               on_step=None) -> tuple[GNet, list[float]]:
    """Fit g to map f_crop(I) onto sinc(I) over patches of ``images``."""
    g = g or GNet(cfg.g_model(), seed=cfg.seed + 1)
    sampler = PatchSampler(images, cfg.patch, cfg.batch, seed=cfg.seed + 11, dtype=cfg.model.np_dtype)
    kernel = cfg.loss.kernel()
    curve = _fit(g, lambda b: loss_g(g, b, cfg.loss, kernel), sampler, cfg.g_pretrain_steps, cfg.lr,
                 "pretrain_g", on_step)
    return g, curve


def train_usrgr(images: Sequence[np.ndarray], g: GNet | None, cfg: TrainConfig, f: SRNet | None = None,
                on_step=None, on_checkpoint=None) -> tuple[SRNet, GNet | None, list[dict]]:
    """Joint training of f under L_ss + beta L_f + gamma L_sinc with online g fine-tuning.

    ``g`` is fine-tuned in place (a copy is not made). Returns the trained f,
    g and one log record per step with keys :data:`LOG_COLUMNS` (absent terms
    are None).
    """
    use_fid, use_sinc = not cfg.no_fid, not cfg.no_sinc
    if use_sinc and g is None:
        raise ValueError("the Sinc constraint needs a pretrained g (or set no_sinc)")
    f = f or SRNet(cfg.sr_model(), seed=cfg.seed)
    sampler = PatchSampler(images, cfg.patch, cfg.batch, seed=cfg.seed + 23, dtype=cfg.model.np_dtype)
    kernel = cfg.loss.kernel()
    opt_f = Adam(f.parameters(), lr=cfg.lr)
    opt_g = Adam(g.parameters(), lr=cfg.lr) if (use_sinc and cfg.g_finetune_per_step > 0) else None
    records: list[dict] = []
    steps = cfg.total_steps(len(images))
    for step in range(steps):
        batch = sampler.next()
        obj = loss_total(f, g, batch, cfg.loss, use_fid=use_fid, use_sinc=use_sinc, kernel=kernel)
        if not _step(opt_f, obj.total):
            raise TrainingDiverged(f"train_usrgr: non-finite loss at step {step}", f, records)
        terms = obj.terms
        hr = obj.hr_pred.data if obj.hr_pred is not None else None
        del obj  # release the graph before g's pass
        g_loss = None
        if opt_g is not None:
            for _ in range(cfg.g_finetune_per_step):
                lg = 0.5 * (loss_g(g, batch, cfg.loss, kernel) + loss_g(g, hr, cfg.loss, kernel))
                if not _step(opt_g, lg):
                    raise TrainingDiverged(f"train_usrgr: g fine-tuning diverged at step {step}", f, records)
                g_loss = float(lg.data)
        rec = {"step": step, "l_ss": terms.get("l_ss"), "l_f": terms.get("l_f"),
               "l_sinc": terms.get("l_sinc"), "total": terms["total"], "g_loss": g_loss}
        records.append(rec)
        if on_step:
            on_step(rec)
        if on_checkpoint and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(step + 1, f, g)
    return f, g, records


def forward_batched(net, imgs: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Inference over a (B,1,H,W) stack in chunks, without building a graph."""
    outs = []
    with no_grad():
        for i in range(0, len(imgs), chunk):
            x = imgs[i:i + chunk].astype(net.cfg.np_dtype)
            outs.append(net(Tensor(x)).data)
    return np.concatenate(outs, axis=0)


def infer(f: SRNet, img: np.ndarray) -> np.ndarray:
    """Whole-image x2 super-resolution: normalize by the max, run f, restore the scale."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if h % 2 or w % 2 or h < 8 or w < 8:
        raise ShapeError(f"infer needs even extents >= 8, got {h}x{w}")
    peak = float(img.max())
    stat = peak if peak > 0 else 1.0
    out = forward_batched(f, (img / stat).reshape(1, 1, h, w))[0, 0]
    return out * stat


# -- deG+SR ------------------------------------------------------------------------

def train_deg_sr(images: Sequence[np.ndarray], cfg: TrainConfig, on_step=None) -> tuple[GNet, SRNet]:
    """Separate deGibbs (g on f_crop -> bicubic pairs) and SR (self-supervised loss on deGibbs'd inputs) models."""
    g = GNet(cfg.g_model(), seed=cfg.seed + 101)
    half = cfg.patch // 2

    def deg_loss(b):
        target = bicubic_resize(b, (half, half))
        return l_d(g(Tensor(f_crop(b))), Tensor(target), cfg.loss)

    sampler = PatchSampler(images, cfg.patch, cfg.batch, seed=cfg.seed + 37, dtype=cfg.model.np_dtype)
    _fit(g, deg_loss, sampler, cfg.g_pretrain_steps, cfg.lr, "deg_sr/deGibbs")

    f = SRNet(cfg.model, seed=cfg.seed + 102)

    def sr_loss(b):
        small = forward_batched(g, f_crop(b))
        return l_d(f(Tensor(small)), Tensor(b), cfg.loss)

    sampler = PatchSampler(images, cfg.patch, cfg.batch, seed=cfg.seed + 41, dtype=cfg.model.np_dtype)
    _fit(f, sr_loss, sampler, cfg.total_steps(len(images)), cfg.lr, "deg_sr/SR", on_step)
    return g, f


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
