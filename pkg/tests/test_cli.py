import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from usrgr import __version__
from usrgr.cli import main
from usrgr.config import SCHEMA, ConfigError, RunConfig
from usrgr.data import load_raster, save_raster
from usrgr.models import load_checkpoint

TINY_CFG = """\
# tiny run for tests
n_feats = 4
n_blocks = 1
batch = 1
patch = 32
steps = 3
g_pretrain_steps = 2
dtype = float64
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.cfg").write_text(TINY_CFG)
    assert main(["phantom", "--out", "data", "--count", "4", "--size", "32", "--test-count", "2"]) == 0
    return tmp_path


# -- config -----------------------------------------------------------------------


def test_config_defaults_match_dataclasses():
    cfg = RunConfig()
    tc = cfg.train_config()
    assert tc.lr == 1e-4 and tc.batch == 4 and tc.loss.alpha == 0.84 and tc.model.n_feats == 16
    assert cfg.degrade_config().sinc_taps == tc.loss.sinc_taps == 31


def test_config_parsing_and_overrides():
    cfg = RunConfig().update_text("lr = 0.001\nno-fid = yes  # inline\n\nmsssim_scales = 2\n")
    cfg.apply(["steps=7", "alpha=0.5"])
    tc = cfg.train_config()
    assert tc.lr == 0.001 and tc.no_fid and tc.steps == 7 and tc.loss.alpha == 0.5
    assert tc.loss.msssim_scales == 2 and len(tc.loss.msssim_weights) == 2


def test_unknown_key_named():
    with pytest.raises(ConfigError) as info:
        RunConfig().update_text("learning_rate = 1")
    assert info.value.key == "learning_rate"


def test_bad_value_named():
    with pytest.raises(ConfigError, match="batch"):
        RunConfig().update_text("batch = four")
    with pytest.raises(ConfigError):
        RunConfig().update_text("no_fid = maybe")
    with pytest.raises(ConfigError):
        RunConfig().update_text("just words")


def test_invalid_combination_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"patch": "30"}).validate()


@given(st.floats(1e-6, 1.0), st.integers(1, 64), st.booleans(), st.sampled_from(["wide", "plain"]))
def test_echo_round_trip(lr, batch, flag, variant):
    cfg = RunConfig({"lr": lr, "batch": batch, "no_sinc": flag, "variant": variant})
    back = RunConfig().update_text(cfg.echo(["header"]))
    assert back.values == cfg.values


def test_schema_covers_every_group():
    assert {"lr", "alpha", "n_feats", "noise_sigma", "factor", "g_finetune_per_step"} <= set(SCHEMA)


# -- commands ---------------------------------------------------------------------


def test_degrade_halves_raster(workdir):
    save_raster("x.usrt", np.random.default_rng(0).uniform(size=(64, 64)).astype(np.float32))
    assert main(["degrade", "--in", "x.usrt", "--out", "y.usrt"]) == 0
    assert load_raster("y.usrt").shape == (32, 32)
    assert main(["degrade", "--in", "x.usrt", "--out", "n.usrt", "--noise", "0.1"]) == 0
    assert not np.array_equal(load_raster("y.usrt"), load_raster("n.usrt"))


def test_train_without_fid_and_sinc_logs_two_columns(workdir):
    rc = main(["train", "--data", "data", "--config", "tiny.cfg", "--out", "run", "--no-fid", "--no-sinc"])
    assert rc == 0
    lines = (workdir / "run" / "train.log").read_text().splitlines()
    assert lines[0].split("\t") == ["step", "l_ss", "l_f", "l_sinc", "total", "g_loss"]
    for ln in lines[1:]:
        step, l_ss, l_f, l_sinc, total, g_loss = ln.split("\t")
        assert l_ss and total and not (l_f or l_sinc or g_loss)
    echo = (workdir / "run" / "config.echo").read_text()
    assert f"usrgr {__version__}" in echo and "seed = 0" in echo and "no_fid = true" in echo


def test_full_pipeline_layout(workdir):
    assert main(["pretrain-g", "--data", "data", "--config", "tiny.cfg", "--out", "g"]) == 0
    assert main(["train", "--data", "data", "--config", "tiny.cfg", "--g", "g/ckpt/g.ckpt", "--out", "f",
                 "--set", "checkpoint_every=2"]) == 0
    assert sorted(p.name for p in (workdir / "f" / "ckpt").iterdir()) == ["f.ckpt", "f_step000002.ckpt", "g_finetuned.ckpt"]
    assert main(["eval", "--model", "f/ckpt/f.ckpt", "--data", "data", "--out", "ev"]) == 0
    assert (workdir / "ev" / "reports" / "uSRGR.tsv").exists()
    assert sorted(p.name for p in (workdir / "ev" / "images").iterdir()) == ["test_0000.usrt", "test_0001.usrt"]
    assert main(["eval", "--model", "f/ckpt/f.ckpt", "--data", "data", "--out", "evr", "--mode", "real"]) == 0
    assert not (workdir / "evr" / "reports").exists()
    assert len(list((workdir / "evr" / "images").iterdir())) == 2
    save_raster("lr.usrt", np.random.default_rng(1).uniform(size=(16, 16)))
    assert main(["infer", "--model", "f/ckpt/f.ckpt", "--in", "lr.usrt", "--out", "hr.usrt"]) == 0
    assert load_raster("hr.usrt").shape == (32, 32)


def test_same_command_twice_is_byte_identical(workdir):
    args = ["train", "--data", "data", "--config", "tiny.cfg", "--no-sinc", "--out", "r"]
    assert main(args) == 0
    first = {p.relative_to(workdir / "r"): p.read_bytes() for p in (workdir / "r").rglob("*") if p.is_file()}
    assert main(args) == 0
    second = {p.relative_to(workdir / "r"): p.read_bytes() for p in (workdir / "r").rglob("*") if p.is_file()}
    assert first == second


def test_baselines(workdir):
    assert main(["baseline", "--method", "bicubic", "--data", "data", "--out", "b"]) == 0
    assert (workdir / "b" / "reports" / "Bicubic.json").exists()
    assert main(["baseline", "--method", "deg-sr", "--data", "data", "--config", "tiny.cfg", "--out", "d"]) == 0
    assert (workdir / "d" / "reports" / "deG_SR.json").exists()
    assert type(load_checkpoint(workdir / "d" / "ckpt" / "deg_g.ckpt")).__name__ == "GNet"


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--op", "pixel_shuffle"]) == 0
    assert "PASS pixel_shuffle" in capsys.readouterr().out
    assert main(["gradcheck", "--op", "conv2d", "--tol", "0"]) == 3
    assert main(["gradcheck", "--op", "nope"]) == 1


def test_exit_codes(workdir, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train", "--data", "data", "--out", "x", "--set", "bogus=1"]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["train", "--data", "data", "--config", "tiny.cfg", "--out", "x"]) == 1  # no --g
    assert main(["train", "--data", "missing", "--config", "tiny.cfg", "--no-sinc", "--out", "x"]) == 2
    assert "missing" in capsys.readouterr().err
    (workdir / "bad.usrt").write_bytes(b"USRT\x01")
    assert main(["degrade", "--in", "bad.usrt", "--out", "y.usrt"]) == 2
    save_raster("odd.usrt", np.zeros((10, 10)))
    assert main(["degrade", "--in", "odd.usrt", "--out", "y.usrt"]) == 2
    assert main(["infer", "--model", "nothere.ckpt", "--in", "odd.usrt", "--out", "z.usrt"]) == 2


def test_divergence_exit_code(workdir):
    save_raster(workdir / "data" / "train" / "train_0000.usrt", np.full((32, 32), np.nan, np.float32))
    rc = main(["train", "--data", "data", "--config", "tiny.cfg", "--no-sinc", "--out", "nan"])
    assert rc == 3
    assert (workdir / "nan" / "ckpt" / "f_last_finite.ckpt").exists()
