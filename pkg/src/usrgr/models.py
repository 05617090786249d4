"""Residual networks with wide activation for SR (f) and Sinc-residual correction (g).

Both networks are a 3x3 head conv, a stack of residual blocks and a 3x3 tail
conv; the SR network adds a x2 pixel shuffle. Wide blocks append two length-15
1D convolutions (width, then height) after the 3x3 conv.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tensor, conv1d_axis, conv2d, leaky_relu, pixel_shuffle

CKPT_MAGIC = b"USRM"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    n_feats: int = 16
    n_blocks: int = 4
    variant: str = "wide"  # "wide" | "plain"
    kernel_1d: int = 15
    leaky_slope: float = 0.1
    global_skip: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in ("wide", "plain"):
            raise ValueError(f"variant must be 'wide' or 'plain', got {self.variant!r}")
        if self.n_feats < 1 or self.n_blocks < 0:
            raise ValueError("n_feats must be >= 1 and n_blocks >= 0")
        if self.kernel_1d % 2 == 0:
            raise ValueError("kernel_1d must be odd")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def wide_channels(n: int) -> int:
    """int(4.8 N), truncating toward zero; done in integer arithmetic so 4.8*80 gives 384."""
    return (48 * n) // 10


class Module:
    """Ordered parameter container."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{k}", v) for k, v in val.named_parameters())
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend((f"{name}.{i}.{k}", v) for k, v in m.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class Conv(Module):
    """2D (k x k) or axis-aligned 1D convolution with bias."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, dtype,
                 axis: str | None = None, gain: float = np.sqrt(2.0), zero: bool = False):
        self.axis = axis
        shape = (cout, cin, k) if axis else (cout, cin, k, k)
        fan_in = cin * (k if axis else k * k)
        if zero:
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if self.axis:
            return conv1d_axis(x, self.weight, self.bias, axis=self.axis)
        return conv2d(x, self.weight, self.bias)


class ResBlockWide(Module):
    def __init__(self, n: int, cfg: ModelConfig, rng: np.random.Generator):
        c = wide_channels(n)
        dt = cfg.np_dtype
        gain = np.sqrt(2.0 / (1.0 + cfg.leaky_slope**2))
        self.slope = cfg.leaky_slope
        self.conv_expand = Conv(n, 6 * n, 1, rng, dt)
        self.conv_reduce = Conv(6 * n, c, 1, rng, dt, gain=gain)
        self.conv_spatial = Conv(c, c, 3, rng, dt, gain=1.0)
        self.conv1d_a = Conv(c, c, cfg.kernel_1d, rng, dt, axis="width", gain=1.0)
        self.conv1d_b = Conv(c, n, cfg.kernel_1d, rng, dt, axis="height", zero=True)

    def residual(self, x: Tensor) -> Tensor:
        y = leaky_relu(self.conv_expand(x), self.slope)
        y = self.conv_spatial(self.conv_reduce(y))
        return self.conv1d_b(self.conv1d_a(y))

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.residual(x)


class ResBlockPlain(Module):
    def __init__(self, n: int, cfg: ModelConfig, rng: np.random.Generator):
        c = wide_channels(n)
        dt = cfg.np_dtype
        gain = np.sqrt(2.0 / (1.0 + cfg.leaky_slope**2))
        self.slope = cfg.leaky_slope
        self.conv_expand = Conv(n, 6 * n, 1, rng, dt)
        self.conv_reduce = Conv(6 * n, c, 1, rng, dt, gain=gain)
        self.conv_spatial = Conv(c, n, 3, rng, dt, zero=True)

    def residual(self, x: Tensor) -> Tensor:
        y = leaky_relu(self.conv_expand(x), self.slope)
        return self.conv_spatial(self.conv_reduce(y))

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.residual(x)


class _ResNet(Module):
    out_channels = 1
    upscale = 1
    kind = ""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        n, dt = self.cfg.n_feats, self.cfg.np_dtype
        block = ResBlockWide if self.cfg.variant == "wide" else ResBlockPlain
        self.head = Conv(1, n, 3, rng, dt, gain=1.0)
        self.body = [block(n, self.cfg, rng) for _ in range(self.cfg.n_blocks)]
        # zero output layer: SSIM-type losses have a spurious optimum at the sign-flipped image,
        # and a random linear path can start the net inside it
        self.tail = Conv(n, self.out_channels * self.upscale**2, 3, rng, dt, zero=True)

    def features(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"{self.kind} takes single-channel (B,1,H,W) input, got {x.shape}")
        if x.dtype != self.cfg.np_dtype:
            x = Tensor(x.data.astype(self.cfg.np_dtype)) if not x.requires_grad else x
        y = self.head(x)
        for blk in self.body:
            y = blk(y)
        return self.tail(y)

    def __call__(self, x) -> Tensor:
        raise NotImplementedError


class SRNet(_ResNet):
    """f: (B,1,H,W) -> (B,1,2H,2W)."""

    upscale = 2
    kind = "SRNet"

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 4 and (x.shape[2] < 8 or x.shape[3] < 8):
            raise ShapeError(f"SRNet needs extents >= 8, got {x.shape[2:]}")
        y = pixel_shuffle(self.features(x), 2)
        if self.cfg.global_skip:
            up = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
            y = y + Tensor(up.astype(y.dtype))
        return y


class GNet(_ResNet):
    """g: (B,1,H,W) -> (B,1,H,W)."""

    kind = "GNet"

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        y = self.features(x)
        if self.cfg.global_skip:
            y = y + Tensor(x.data.astype(y.dtype))
        return y


def param_count(net: Module) -> int:
    return int(sum(p.size for p in net.parameters()))


def block_param_count(n: int, variant: str, kernel_1d: int = 15) -> int:
    """Per-block scalar parameter count from the layer formulas."""
    c = wide_channels(n)
    count = (6 * n * n + 6 * n) + (c * 6 * n + c)
    if variant == "wide":
        count += (c * c * 9 + c) + (c * c * kernel_1d + c) + (n * c * kernel_1d + n)
    else:
        count += n * c * 9 + n
    return count


# -- checkpoints -----------------------------------------------------------------
#
# Layout (all integers little-endian u32):
#   magic "USRM" | version | kind length | kind (utf-8) | config length |
#   config (utf-8 JSON, sorted keys) | tensor count |
#   per tensor: rank, extents..., float32 payload (row-major, little-endian)

class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: _ResNet, extra: dict | None = None) -> None:
    cfg = asdict(net.cfg)
    if extra:
        cfg["extra"] = extra
    kind = net.kind.encode()
    blob = json.dumps(cfg, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(kind)))
    buf.write(kind)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    params = net.parameters()
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        buf.write(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        buf.write(p.data.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> _ResNet:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def u32(n=1):
        nonlocal pos
        if pos + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated header")
        vals = struct.unpack_from(f"<{n}I", raw, pos)
        pos += 4 * n
        return vals

    version, klen = u32(2)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    kind = bytes(view[pos:pos + klen]).decode()
    pos += klen
    (clen,) = u32()
    cfg = json.loads(bytes(view[pos:pos + clen]).decode())
    pos += clen
    cfg.pop("extra", None)
    cls = {"SRNet": SRNet, "GNet": GNet}.get(kind)
    if cls is None:
        raise CheckpointError(f"{path}: unknown network kind {kind!r}")
    net = cls(ModelConfig(**cfg))
    (count,) = u32()
    params = net.parameters()
    if count != len(params):
        raise CheckpointError(f"{path}: {count} tensors stored, network has {len(params)}")
    for p in params:
        (rank,) = u32()
        shape = u32(rank)
        if tuple(shape) != p.shape:
            raise CheckpointError(f"{path}: tensor shape {shape} != expected {p.shape}")
        nbytes = 4 * int(np.prod(shape))
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload")
        p.data = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(
            net.cfg.np_dtype)
        pos += nbytes
    return net


def clone(net: _ResNet) -> _ResNet:
    out = type(net)(ModelConfig(**asdict(net.cfg)))
    for dst, src in zip(out.parameters(), net.parameters()):
        dst.data = src.data.copy()
    return out
