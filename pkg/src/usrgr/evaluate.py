"""PSNR / SSIM evaluation and report files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .data import DatasetManifest, make_eval_pair
from .kspace import bicubic_resize, f_crop
from .losses import LossConfig, ssim
from .train import forward_batched

PSNR_CEILING = 99.0
METRICS = ("psnr", "ssim", "fid_psnr")

Predictor = Callable[[np.ndarray], np.ndarray]  # (B,1,h,w) -> (B,1,2h,2w)


def psnr(pred: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """20 log10(peak / RMSE), capped at 99 dB."""
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(ref, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CEILING
    return min(PSNR_CEILING, 20.0 * np.log10(peak / np.sqrt(mse)))


def ssim_metric(pred: np.ndarray, ref: np.ndarray, data_range: float = 1.0) -> float:
    """Single-scale SSIM (Gaussian window 11, sigma 1.5, K1=0.01, K2=0.03)."""
    cfg = LossConfig(dynamic_range=data_range)
    p = Tensor(np.asarray(pred, np.float64))
    r = Tensor(np.asarray(ref, np.float64))
    return float(ssim(p, r, cfg).data)


@dataclass
class EvalReport:
    method: str
    dataset: str
    rows: list[dict] = field(default_factory=list)

    def aggregate(self) -> dict[str, dict[str, float]]:
        agg = {}
        for m in METRICS:
            vals = [r[m] for r in self.rows if r.get(m) is not None]
            if vals:
                agg[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return agg

    def mean(self, metric: str = "psnr") -> float:
        return self.aggregate()[metric]["mean"]

    def to_json(self) -> dict:
        return {"method": self.method, "dataset": self.dataset, "rows": self.rows, "aggregate": self.aggregate()}

    def to_tsv(self) -> str:
        lines = [f"# method={self.method}\tdataset={self.dataset}", "id\t" + "\t".join(METRICS)]
        fmt = lambda v: "" if v is None else repr(float(v))
        for r in self.rows:
            lines.append(r["id"] + "\t" + "\t".join(fmt(r.get(m)) for m in METRICS))
        agg = self.aggregate()
        for stat in ("mean", "std"):
            lines.append(stat + "\t" + "\t".join(fmt(agg.get(m, {}).get(stat)) for m in METRICS))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.method.replace("+", "_").replace(" ", "_")
        tsv, js = out / f"{stem}.tsv", out / f"{stem}.json"
        tsv.write_text(self.to_tsv())
        js.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        return tsv, js

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(d["method"], d["dataset"], d["rows"])


def _as_images(data) -> tuple[list[str], list[np.ndarray]]:
    if isinstance(data, DatasetManifest):
        return [e.id for e in data.entries], data.load_images()
    imgs = list(data)
    return [f"{i:04d}" for i in range(len(imgs))], imgs


def evaluate_predictor(predict: Predictor, data, mode: str = "synthetic", method: str = "uSRGR",
                       dataset: str = "phantom", keep_predictions: bool = False):
    """Run ``predict`` over every image and score it.

    Synthetic mode feeds f_crop(img) and scores against img (PSNR, SSIM) plus
    fidelity PSNR(f_crop(pred), input). Real mode feeds img unchanged and
    records no metrics.
    """
    ids, imgs = _as_images(data)
    report = EvalReport(method, dataset)
    preds = []
    for sid, img in zip(ids, imgs):
        img = np.asarray(img, np.float64)
        x, ref = make_eval_pair(img, mode)
        if mode == "synthetic" and ref is None:
            raise ValueError(f"sample {sid} has no reference for synthetic evaluation")
        pred = np.asarray(predict(x[None, None]), np.float64)[0, 0]
        row = {"id": sid}
        if mode == "synthetic":
            row["psnr"] = psnr(pred, ref)
            row["ssim"] = ssim_metric(pred, ref)
            row["fid_psnr"] = psnr(f_crop(pred), x)
        report.rows.append(row)
        if keep_predictions:
            preds.append(pred)
    return (report, preds) if keep_predictions else report


def net_predictor(f) -> Predictor:
    return lambda x: forward_batched(f, x)


def evaluate(f, data, mode: str = "synthetic", method: str = "uSRGR", dataset: str = "phantom", **kw):
    return evaluate_predictor(net_predictor(f), data, mode, method, dataset, **kw)


def bicubic_predictor(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    return bicubic_resize(x, (2 * h, 2 * w))


def run_baseline_bicubic(data, mode: str = "synthetic", dataset: str = "phantom", **kw):
    return evaluate_predictor(bicubic_predictor, data, mode, "Bicubic", dataset, **kw)


def deg_sr_predictor(g, f) -> Predictor:
    return lambda x: forward_batched(f, forward_batched(g, x))


def run_deg_sr(train_images, data, cfg, dataset: str = "phantom", **kw):
    """Train the separate deGibbs + SR pair on ``train_images`` and evaluate the chain on ``data``."""
    from .train import train_deg_sr

    g, f = train_deg_sr(train_images, cfg)
    return evaluate_predictor(deg_sr_predictor(g, f), data, "synthetic", "deG+SR", dataset, **kw)
