"""Command-line front end.

Exit status: 0 success, 1 usage or config error, 2 data or shape error,
3 numerical failure (non-finite loss, failed gradient check).

Every command that takes ``--out DIR`` writes into a fixed layout::

    DIR/config.echo   effective config, version and command line
    DIR/train.log     tab-separated per-step losses (training commands)
    DIR/ckpt/         model checkpoints
    DIR/reports/      evaluation tables (.tsv) and structured results (.json)
    DIR/images/       predicted rasters
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ShapeError
from .config import ConfigError, RunConfig
from .data import DatasetManifest, RasterError, load_raster, save_pgm, save_raster, write_phantom_dataset
from .evaluate import EvalReport, deg_sr_predictor, evaluate, evaluate_predictor, run_baseline_bicubic
from .kspace import degrade
from .models import CheckpointError, GNet, SRNet, load_checkpoint, save_checkpoint
from .train import LOG_COLUMNS, TrainingDiverged, infer, pretrain_g, train_deg_sr, train_usrgr

log = logging.getLogger("usrgr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.apply(getattr(args, "set", None) or [])
    for flag in ("no_fid", "no_sinc", "plain_blocks"):
        if getattr(args, flag, False):
            cfg.set(flag, True)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    return cfg.validate()


def _prepare_out(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = [f"usrgr {__version__}", "command: " + " ".join(args.argv)]
    text = cfg.echo(header) if cfg else "\n".join(f"# {h}" for h in header) + "\n"
    (out / "config.echo").write_text(text)
    return out


def _manifest(data: str, split: str) -> DatasetManifest:
    p = Path(data)
    if p.is_dir():
        p = p / f"{split}.manifest"
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    return DatasetManifest.load(p)


def _save_image(path: Path, img: np.ndarray) -> None:
    if path.suffix.lower() == ".pgm":
        save_pgm(path, np.clip(img, 0.0, 1.0))
    else:
        save_raster(path, img)


def _load_net(path, kind):
    net = load_checkpoint(path)
    if not isinstance(net, kind):
        raise CheckpointError(f"{path}: expected a {kind.__name__} checkpoint, got {type(net).__name__}")
    return net


def _write_log(path: Path, records: list[dict], columns=LOG_COLUMNS) -> None:
    def fmt(v):
        if v is None:
            return ""
        return str(v) if isinstance(v, int) else repr(float(v))

    lines = ["\t".join(columns)] + ["\t".join(fmt(r.get(c)) for c in columns) for r in records]
    path.write_text("\n".join(lines) + "\n")


def _progress(every: int = 100):
    def cb(rec):
        step = rec["step"] if isinstance(rec, dict) else rec
        if (step + 1) % every == 0:
            log.info("step %d %s", step + 1, rec if isinstance(rec, dict) else "")
    return cb


# -- commands -----------------------------------------------------------------------

def cmd_phantom(args) -> int:
    counts = {args.split: args.count}
    if args.test_count:
        if args.split == "test":
            raise UsageError("--test-count needs --split other than 'test'")
        counts["test"] = args.test_count
    manifests = write_phantom_dataset(args.out, counts, size=args.size, seed=args.seed)
    for split, m in manifests.items():
        print(f"{split}: {len(m.entries)} images -> {Path(args.out) / (split + '.manifest')}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    cfg = _run_config(args)
    if args.noise is not None:
        cfg.set("noise_sigma", args.noise)
    img = load_raster(args.input)
    if img.ndim != 2:
        raise ShapeError(f"{args.input}: expected a 2D raster, got shape {img.shape}")
    out = degrade(img, cfg.degrade_config(), seed=cfg["seed"])
    _save_image(Path(args.output), out)
    return EXIT_OK


def cmd_pretrain_g(args) -> int:
    cfg = _run_config(args)
    tc = cfg.train_config()
    out = _prepare_out(args, cfg)
    (out / "ckpt").mkdir(exist_ok=True)
    images = _manifest(args.data, args.split).load_images()
    try:
        g, curve = pretrain_g(images, tc, on_step=lambda s, v: _progress()(s))
    except TrainingDiverged as e:
        save_checkpoint(out / "ckpt" / "g_last_finite.ckpt", e.net)
        _write_log(out / "train.log", [{"step": i, "g_loss": v} for i, v in enumerate(e.records)])
        raise
    save_checkpoint(out / "ckpt" / "g.ckpt", g)
    _write_log(out / "train.log", [{"step": i, "g_loss": v} for i, v in enumerate(curve)])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    tc = cfg.train_config()
    if not tc.no_sinc and not args.g:
        raise UsageError("train: --g CKPT is required unless no_sinc is set")
    out = _prepare_out(args, cfg)
    ckpt = out / "ckpt"
    ckpt.mkdir(exist_ok=True)
    images = _manifest(args.data, args.split).load_images()
    g = _load_net(args.g, GNet) if (args.g and not tc.no_sinc) else None
    if g is not None and g.cfg.np_dtype != tc.model.np_dtype:
        g = _cast(g, tc.model.dtype)

    def on_checkpoint(step, f, g_):
        save_checkpoint(ckpt / f"f_step{step:06d}.ckpt", f)

    try:
        f, g, records = train_usrgr(images, g, tc, on_step=_progress(), on_checkpoint=on_checkpoint)
    except TrainingDiverged as e:
        save_checkpoint(ckpt / "f_last_finite.ckpt", e.net)
        _write_log(out / "train.log", e.records)
        raise
    _write_log(out / "train.log", records)
    save_checkpoint(ckpt / "f.ckpt", f)
    if g is not None:
        save_checkpoint(ckpt / "g_finetuned.ckpt", g)
    return EXIT_OK


def _cast(net, dtype: str):
    other = type(net)(replace(net.cfg, dtype=dtype))
    for dst, src in zip(other.parameters(), net.parameters()):
        dst.data = src.data.astype(dtype)
    return other


def cmd_infer(args) -> int:
    f = _load_net(args.model, SRNet)
    img = load_raster(args.input)
    if img.ndim != 2:
        raise ShapeError(f"{args.input}: expected a 2D raster, got shape {img.shape}")
    _save_image(Path(args.output), infer(f, img))
    return EXIT_OK


def _emit(out: Path, report: EvalReport, manifest: DatasetManifest, preds, stem: str, mode: str) -> None:
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    for e, pred in zip(manifest.entries, preds):
        save_raster(img_dir / f"{e.id}.usrt", pred)
    if mode == "synthetic":
        tsv, js = report.write(out / "reports", stem=stem)
        agg = report.aggregate()
        print(f"{report.method}: " + "  ".join(f"{m}={v['mean']:.4f}" for m, v in agg.items()))


def cmd_eval(args) -> int:
    out = _prepare_out(args, None)
    f = _load_net(args.model, SRNet)
    manifest = _manifest(args.data, args.split)
    report, preds = evaluate(f, manifest, mode=args.mode, method=args.method,
                             dataset=manifest.split, keep_predictions=True)
    _emit(out, report, manifest, preds, _stem(args.method), args.mode)
    return EXIT_OK


def _stem(method: str) -> str:
    return method.replace("+", "_").replace(" ", "_")


def cmd_baseline(args) -> int:
    cfg = _run_config(args)
    out = _prepare_out(args, cfg)
    manifest = _manifest(args.data, args.split)
    if args.method == "bicubic":
        report, preds = run_baseline_bicubic(manifest, dataset=manifest.split, keep_predictions=True)
    else:
        tc = cfg.train_config()
        train_images = _manifest(args.data, args.train_split).load_images()
        g, f = train_deg_sr(train_images, tc)
        (out / "ckpt").mkdir(exist_ok=True)
        save_checkpoint(out / "ckpt" / "deg_g.ckpt", g)
        save_checkpoint(out / "ckpt" / "deg_f.ckpt", f)
        report, preds = evaluate_predictor(deg_sr_predictor(g, f), manifest, "synthetic", "deG+SR",
                                           manifest.split, keep_predictions=True)
    _emit(out, report, manifest, preds, _stem(report.method), "synthetic")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    names = [args.op] if args.op else list(gradcheck.SUITES)
    unknown = [n for n in names if n not in gradcheck.SUITES]
    if unknown:
        raise UsageError(f"unknown op {unknown[0]!r}; choose from {', '.join(gradcheck.SUITES)}")
    failed = []
    for name in names:
        err = max(gradcheck.SUITES[name](s) for s in range(args.seeds))
        ok = np.isfinite(err) and err < args.tol
        print(f"{'PASS' if ok else 'FAIL'} {name} max_rel_err={err:.3e}")
        if not ok:
            failed.append(name)
    if failed:
        raise NumericalFailure(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import METHODS, PROFILES, medians, run_study

    if args.profile not in PROFILES:
        raise UsageError(f"unknown profile {args.profile!r}; choose from {', '.join(PROFILES)}")
    methods = tuple(args.methods) if args.methods else METHODS
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method {bad[0]!r}; choose from {', '.join(METHODS)}")
    out = _prepare_out(args, None)
    results = run_study(args.profile, seeds=tuple(args.seeds), out_dir=out / "reports", methods=methods)
    summary = {"profile": args.profile, "seeds": list(args.seeds), "median_psnr": medians(results),
               "median_ssim": medians(results, "ssim")}
    (out / "reports" / "study.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for m in methods:
        print(f"{m}\tpsnr={summary['median_psnr'][m]:.3f}\tssim={summary['median_ssim'][m]:.4f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="usrgr", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"usrgr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic phantom dataset and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--test-count", type=int, default=0, help="also write a 'test' split of this many images")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", help="f-crop a raster to half resolution")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--noise", type=float, help="Gaussian noise sigma added after cropping")
    _config_args(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("pretrain-g", help="pretrain the auxiliary network g")
    p.add_argument("--data", required=True, help="dataset directory or manifest file")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    _config_args(p)
    p.set_defaults(func=cmd_pretrain_g)

    p = sub.add_parser("train", help="train the SR network f")
    p.add_argument("--data", required=True, help="dataset directory or manifest file")
    p.add_argument("--split", default="train")
    p.add_argument("--g", help="pretrained g checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fid", action="store_true", help="drop the fidelity term")
    p.add_argument("--no-sinc", action="store_true", help="drop the Sinc constraint")
    p.add_argument("--plain-blocks", action="store_true", help="use 2D-only residual blocks")
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one raster")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a trained f on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("synthetic", "real"), default="synthetic")
    p.add_argument("--method", default="uSRGR", help="method label written into the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="bicubic or separate deGibbs + SR baseline")
    p.add_argument("--method", choices=("bicubic", "deg-sr"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="evaluation split")
    p.add_argument("--train-split", default="train", help="training split (deg-sr)")
    p.add_argument("--out", required=True)
    _config_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", help="run only this suite")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment", help="run the ablation study for a named profile")
    p.add_argument("--profile", default="reduced")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--methods", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NumericalFailure, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, RasterError, CheckpointError, FileNotFoundError, IsADirectoryError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
