import struct

import numpy as np
import pytest

from usrgr import autodiff as ad
from usrgr.autodiff import ShapeError, Tensor
from usrgr.models import (
    CheckpointError,
    GNet,
    ModelConfig,
    SRNet,
    block_param_count,
    clone,
    load_checkpoint,
    param_count,
    save_checkpoint,
    wide_channels,
)


def zero_params(net):
    for p in net.parameters():
        p.data = np.zeros_like(p.data)
    return net


def test_wide_channel_truncation():
    assert wide_channels(80) == 384
    assert wide_channels(16) == 76
    assert wide_channels(1) == 4


def test_srnet_shape():
    f = SRNet(ModelConfig(n_feats=4, n_blocks=1))
    assert f(np.zeros((1, 1, 80, 80), np.float32)).shape == (1, 1, 160, 160)


def test_gnet_shape():
    g = GNet(ModelConfig(n_feats=4, n_blocks=1))
    assert g(np.zeros((1, 1, 40, 40), np.float32)).shape == (1, 1, 40, 40)


@pytest.mark.parametrize("cls", [SRNet, GNet])
def test_zero_parameters_give_zero_output(cls):
    net = zero_params(cls(ModelConfig(n_feats=4, n_blocks=2)))
    x = np.random.default_rng(0).normal(size=(2, 1, 8, 8)).astype(np.float32)
    assert not np.any(net(x).data)


def test_srnet_rejects_multichannel_and_small_inputs():
    f = SRNet(ModelConfig(n_feats=4, n_blocks=1))
    with pytest.raises(ShapeError):
        f(np.zeros((1, 2, 8, 8), np.float32))
    with pytest.raises(ShapeError):
        f(np.zeros((1, 1, 4, 4), np.float32))


@pytest.mark.parametrize("variant", ["wide", "plain"])
def test_blocks_start_as_identity(variant):
    # the final conv of every residual branch is zero-initialized
    cfg = ModelConfig(n_feats=4, n_blocks=3, variant=variant, dtype="float64")
    f = SRNet(cfg, seed=1)
    f.tail.weight.data = np.random.default_rng(3).normal(size=f.tail.weight.shape)
    x = Tensor(np.random.default_rng(2).normal(size=(1, 1, 8, 8)))
    oracle = ad.pixel_shuffle(f.tail(f.head(x)), 2)
    np.testing.assert_array_equal(f(x).data, oracle.data)
    y = f.head(x)
    for blk in f.body:
        np.testing.assert_array_equal(blk(y).data, y.data)


@pytest.mark.parametrize("cls", [SRNet, GNet])
def test_untrained_output_is_zero(cls):
    net = cls(ModelConfig(n_feats=4, n_blocks=2), seed=5)
    x = np.random.default_rng(0).uniform(size=(2, 1, 8, 8)).astype(np.float32)
    assert not np.any(net(x).data)
    assert np.any(net.head.weight.data)


def test_wide_block_layer_shapes():
    f = SRNet(ModelConfig(n_feats=16, n_blocks=1))
    blk = f.body[0]
    assert blk.conv_expand.weight.shape == (96, 16, 1, 1)
    assert blk.conv_reduce.weight.shape == (76, 96, 1, 1)
    assert blk.conv_spatial.weight.shape == (76, 76, 3, 3)
    assert blk.conv1d_a.weight.shape == (76, 76, 15) and blk.conv1d_a.axis == "width"
    assert blk.conv1d_b.weight.shape == (16, 76, 15) and blk.conv1d_b.axis == "height"


def test_param_count_minimal_net():
    assert param_count(SRNet(ModelConfig(n_feats=1, n_blocks=0))) == 50


@pytest.mark.parametrize("variant", ["wide", "plain"])
def test_param_count_additive_in_blocks(variant):
    n = 6
    counts = [param_count(SRNet(ModelConfig(n_feats=n, n_blocks=b, variant=variant))) for b in (2, 4)]
    assert counts[1] - counts[0] == 2 * block_param_count(n, variant)


def test_n80_block_counts():
    # literal layer dimensions at N=80 and N=135; twelve wide blocks already exceed 4.2M
    wide = block_param_count(80, "wide")
    plain = block_param_count(135, "plain")
    assert wide == 6 * 80 * 80 + 480 + 384 * 480 + 384 + 384 * 384 * 9 + 384 + 384 * 384 * 15 + 384 + 80 * 384 * 15 + 80
    assert 12 * wide > 4.2e6
    assert plain == 6 * 135 * 135 + 810 + 648 * 810 + 648 + 135 * 648 * 9 + 135


def test_forward_deterministic():
    f = SRNet(ModelConfig(n_feats=4, n_blocks=2), seed=3)
    x = np.random.default_rng(4).uniform(size=(2, 1, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(f(x).data, f(x).data)
    g = SRNet(ModelConfig(n_feats=4, n_blocks=2), seed=3)
    np.testing.assert_array_equal(f(x).data, g(x).data)


def test_global_skip_flag():
    cfg = ModelConfig(n_feats=4, n_blocks=1, global_skip=True, dtype="float64")
    g = zero_params(GNet(cfg))
    x = np.random.default_rng(5).uniform(size=(1, 1, 8, 8))
    np.testing.assert_array_equal(g(x).data, x)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="deep")
    with pytest.raises(ValueError):
        ModelConfig(kernel_1d=4)


# -- checkpoints ----------------------------------------------------------------


@pytest.mark.parametrize("cls,variant", [(SRNet, "wide"), (SRNet, "plain"), (GNet, "wide")])
def test_checkpoint_round_trip(tmp_path, cls, variant):
    net = cls(ModelConfig(n_feats=4, n_blocks=2, variant=variant), seed=7)
    for p in net.parameters():
        p.data = np.random.default_rng(p.size).normal(size=p.shape).astype(np.float32)
    save_checkpoint(tmp_path / "a.ckpt", net)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert type(back) is cls and back.cfg == net.cfg
    for (na, a), (nb, b) in zip(net.named_parameters(), back.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)
    save_checkpoint(tmp_path / "b.ckpt", back)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_header_layout(tmp_path):
    net = SRNet(ModelConfig(n_feats=1, n_blocks=0))
    save_checkpoint(tmp_path / "m.ckpt", net)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"USRM"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    klen = struct.unpack("<I", raw[8:12])[0]
    assert raw[12:12 + klen] == b"SRNet"


def test_checkpoint_errors(tmp_path):
    net = GNet(ModelConfig(n_feats=2, n_blocks=1))
    save_checkpoint(tmp_path / "g.ckpt", net)
    raw = (tmp_path / "g.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")


def test_clone_is_independent():
    f = SRNet(ModelConfig(n_feats=2, n_blocks=1))
    c = clone(f)
    c.parameters()[0].data += 1.0
    assert not np.array_equal(c.parameters()[0].data, f.parameters()[0].data)
