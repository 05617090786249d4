"""Ablation study runner: uSRGR, its three single-component ablations, deG+SR and bicubic.

Results for each (seed, method) are written as report files as soon as they
are available, so an interrupted study resumes where it stopped.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import phantom_images
from .evaluate import EvalReport, deg_sr_predictor, evaluate, evaluate_predictor, run_baseline_bicubic
from .losses import LossConfig
from .models import GNet, ModelConfig, SRNet, load_checkpoint, save_checkpoint
from .train import LOG_COLUMNS, TrainConfig, pretrain_g, train_deg_sr, train_usrgr

log = logging.getLogger(__name__)

METHODS = ("Bicubic", "uSRGR", "uSRGR-fid", "uSRGR-sinc", "uSRGR-1Dconv", "deG+SR")


@dataclass
class Profile:
    name: str
    n_train: int
    n_test: int
    size: int
    train: TrainConfig
    data_seed: int = 0


PROFILES = {
    # the desk-scale acceptance configuration (N=16, B=4, patch 64, 2000 steps)
    "acceptance": Profile("acceptance", 200, 20, 64,
                          TrainConfig(steps=2000, g_pretrain_steps=1000, patch=64, batch=4, lr=1e-4,
                                      model=ModelConfig(n_feats=16, n_blocks=4))),
    # same data and schedule on a smaller network and 32x32 patches
    "reduced": Profile("reduced", 200, 20, 64,
                       TrainConfig(steps=2000, g_pretrain_steps=1000, patch=32, batch=4, lr=1e-4,
                                   model=ModelConfig(n_feats=8, n_blocks=2))),
    "smoke": Profile("smoke", 8, 4, 32,
                     TrainConfig(steps=4, g_pretrain_steps=4, patch=32, batch=2, lr=1e-4,
                                 model=ModelConfig(n_feats=4, n_blocks=1))),
}


def profile_datasets(p: Profile) -> tuple[list[np.ndarray], list[np.ndarray]]:
    train = phantom_images(p.n_train, p.size, seed=p.data_seed)
    test = phantom_images(p.n_test, p.size, seed=p.data_seed, offset=p.n_train)
    return train, test


def variant_config(base: TrainConfig, method: str, seed: int) -> TrainConfig:
    flags = {
        "uSRGR": {},
        "uSRGR-fid": {"no_fid": True},
        "uSRGR-sinc": {"no_sinc": True},
        "uSRGR-1Dconv": {"plain_blocks": True},
        "deG+SR": {},
    }[method]
    return replace(base, seed=seed, **flags)


def _summary(report: EvalReport, seconds: float) -> dict:
    agg = report.aggregate()
    return {m: agg[m]["mean"] for m in agg} | {"seconds": seconds}


def run_study(profile: Profile | str, seeds=(0, 1, 2), out_dir=None, methods=METHODS) -> dict:
    """Train and evaluate ``methods`` for every seed; returns {seed: {method: summary}}."""
    p = PROFILES[profile] if isinstance(profile, str) else profile
    out = Path(out_dir) if out_dir else None
    train_imgs, test_imgs = profile_datasets(p)
    results: dict = {}
    for seed in seeds:
        res = results.setdefault(seed, {})
        sdir = out / f"seed{seed}" if out else None
        cached = {}
        if sdir and (sdir / "summary.json").exists():
            cached = json.loads((sdir / "summary.json").read_text())
        g0 = None
        for method in methods:
            if method in cached:
                res[method] = cached[method]
                continue
            t0 = time.process_time()
            if method == "Bicubic":
                report = run_baseline_bicubic(test_imgs)
            elif method == "deG+SR":
                g, f = train_deg_sr(train_imgs, variant_config(p.train, method, seed))
                report = evaluate_predictor(deg_sr_predictor(g, f), test_imgs, method=method)
            else:
                cfg = variant_config(p.train, method, seed)
                g = None
                if not cfg.no_sinc:
                    if g0 is None:
                        g0 = _pretrained_g(train_imgs, replace(p.train, seed=seed), sdir)
                    g = GNet(g0.cfg)
                    for dst, src in zip(g.parameters(), g0.parameters()):
                        dst.data = src.data.copy()
                f, _, records = train_usrgr(train_imgs, g, cfg)
                report = evaluate(f, test_imgs, method=method)
                if sdir:
                    sdir.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(sdir / f"{method}.ckpt", f)
                    _write_log(sdir / f"{method}.log", records)
            res[method] = _summary(report, time.process_time() - t0)
            log.info("seed %d %s: %s", seed, method, res[method])
            if sdir:
                report.write(sdir, stem=method)
                cached[method] = res[method]
                (sdir / "summary.json").write_text(json.dumps(cached, indent=1, sort_keys=True) + "\n")
    return results


def _pretrained_g(train_imgs, cfg: TrainConfig, sdir: Path | None) -> GNet:
    path = sdir / "g_pretrained.ckpt" if sdir else None
    if path and path.exists():
        return load_checkpoint(path)
    g, _ = pretrain_g(train_imgs, cfg)
    if path:
        sdir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, g)
    return g


def _write_log(path: Path, records: list[dict]) -> None:
    fmt = lambda v: "" if v is None else repr(v)
    lines = ["\t".join(LOG_COLUMNS)] + ["\t".join(fmt(r[c]) for c in LOG_COLUMNS) for r in records]
    path.write_text("\n".join(lines) + "\n")


def medians(results: dict, metric: str = "psnr") -> dict[str, float]:
    methods = {m for r in results.values() for m in r}
    return {m: float(np.median([r[m][metric] for r in results.values() if m in r])) for m in methods}


def project_cost(profile: Profile | str, n_seeds: int = 3, probe_steps: int = 2, methods=METHODS) -> dict:
    """Projected CPU seconds of a study, extrapolated from a few timed steps of each stage."""
    p = PROFILES[profile] if isinstance(profile, str) else profile
    imgs = phantom_images(max(4, p.train.batch), p.size, seed=p.data_seed)
    probe = replace(p.train, steps=probe_steps, g_pretrain_steps=probe_steps)

    def timed(fn):
        fn()  # warm caches
        t0 = time.process_time()
        fn()
        return (time.process_time() - t0) / probe_steps

    per_step = {"g": timed(lambda: pretrain_g(imgs, probe))}
    g = GNet(probe.g_model())
    for method in ("uSRGR", "uSRGR-fid", "uSRGR-sinc", "uSRGR-1Dconv"):
        if method in methods:
            cfg = variant_config(probe, method, 0)
            per_step[method] = timed(lambda: train_usrgr(imgs, None if cfg.no_sinc else g, cfg))
    if "deG+SR" in methods:
        per_step["deG+SR"] = timed(lambda: train_deg_sr(imgs, probe)) / 2
    steps, gsteps = p.train.steps, p.train.g_pretrain_steps
    per_seed = per_step["g"] * gsteps
    per_method = {}
    for m, t in per_step.items():
        if m == "g":
            continue
        per_method[m] = t * (steps + gsteps) if m == "deG+SR" else t * steps
        per_seed += per_method[m]
    return {"per_step": per_step, "per_method_seconds": per_method, "per_seed_seconds": per_seed,
            "criterion5_seconds": n_seeds * (per_step["g"] * gsteps + per_method.get("uSRGR", 0.0)),
            "total_seconds": n_seeds * per_seed}
