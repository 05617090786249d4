"""Synthetic phantoms, raster files, manifests and patch sampling."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .kspace import f_crop

RASTER_MAGIC = b"USRT"
RASTER_VERSION = 1
RASTER_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One SplitMix64 output for ``state``; used to derive per-sample seeds."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(global_seed: int, index: int) -> int:
    return splitmix64((global_seed * 0x100000001 + index) & MASK64)


# -- phantoms --------------------------------------------------------------------

@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float  # semi-axis along the rotated x direction, fraction of width
    b: float  # fraction of height
    theta: float = 0.0
    intensity: float = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    size: tuple[int, int]
    ellipses: tuple[Ellipse, ...]
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.ellipses:
            raise ValueError("a phantom needs at least one ellipse")


def gen_phantom(spec: PhantomSpec, dtype=np.float64) -> np.ndarray:
    """Hard-edged sum of constant ellipses on a background, clipped at 0.

    Coordinates are fractions of the image extent, sampled at pixel centers.
    """
    h, w = spec.size
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    img = np.full((h, w), spec.background, dtype=np.float64)
    for e in spec.ellipses:
        dx, dy = xx - e.cx, yy - e.cy
        c, s = np.cos(e.theta), np.sin(e.theta)
        u = (dx * c + dy * s) / e.a
        v = (-dx * s + dy * c) / e.b
        img[u * u + v * v <= 1.0] += e.intensity
    return np.clip(img, 0.0, None).astype(dtype)


def random_phantom_spec(size: tuple[int, int], seed: int, n_ellipses: tuple[int, int] = (3, 8)) -> PhantomSpec:
    """An outer 'body' ellipse plus smaller inner structures with +/- contrast."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(n_ellipses[0], n_ellipses[1] + 1))
    outer = Ellipse(cx=rng.uniform(0.45, 0.55), cy=rng.uniform(0.45, 0.55), a=rng.uniform(0.3, 0.44),
                    b=rng.uniform(0.3, 0.44), theta=rng.uniform(-0.5, 0.5), intensity=rng.uniform(0.6, 1.0))
    ellipses = [outer]
    for _ in range(k - 1):
        ellipses.append(Ellipse(
            cx=rng.uniform(0.3, 0.7), cy=rng.uniform(0.3, 0.7),
            a=rng.uniform(0.03, 0.2), b=rng.uniform(0.03, 0.2),
            theta=rng.uniform(0, np.pi),
            intensity=float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.4)),
        ))
    return PhantomSpec(size=tuple(size), ellipses=tuple(ellipses), background=0.0, seed=seed)


def phantom_for_seed(size: tuple[int, int], seed: int, min_jump: float = 0.2) -> np.ndarray:
    """Raw float32 phantom for ``seed``; re-draws from a derived seed until its normalized form has an edge jump >= ``min_jump``."""
    s = seed
    while True:
        img = gen_phantom(random_phantom_spec(size, s), dtype=np.float32)
        norm, _ = normalize(img)
        if max_jump(norm) >= min_jump:
            return img
        s = splitmix64(s)


def max_jump(img: np.ndarray) -> float:
    """Largest absolute difference between 4-neighbours."""
    return float(max(np.abs(np.diff(img, axis=0)).max(initial=0), np.abs(np.diff(img, axis=1)).max(initial=0)))


# -- raster files ----------------------------------------------------------------
#
# "USRT" | version u32 | rank u32 | extents u32 * rank | dtype u32 (0=float32, 1=float64) |
# row-major little-endian payload

class RasterError(ValueError):
    code = "raster"


class BadMagic(RasterError):
    code = "bad-magic"


class TruncatedPayload(RasterError):
    code = "truncated-payload"


class UnknownDtype(RasterError):
    code = "unknown-dtype"


class UnknownVersion(RasterError):
    code = "unknown-version"


def save_raster(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}.get(arr.dtype)
    if code is None:
        raise UnknownDtype(f"cannot store dtype {arr.dtype}")
    header = RASTER_MAGIC + struct.pack(f"<II{arr.ndim}II", RASTER_VERSION, arr.ndim, *arr.shape, code)
    Path(path).write_bytes(header + arr.astype(RASTER_DTYPES[code]).tobytes())


def load_raster(path) -> np.ndarray:
    """Read a USRT raster, or import an 8/16-bit binary PGM scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"P5":
        return _load_pgm(raw, path)
    if raw[:4] != RASTER_MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise TruncatedPayload(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != RASTER_VERSION:
        raise UnknownVersion(f"{path}: unknown raster version {version}")
    end = 12 + 4 * rank + 4
    if len(raw) < end:
        raise TruncatedPayload(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, 12)
    (code,) = struct.unpack_from("<I", raw, 12 + 4 * rank)
    if code not in RASTER_DTYPES:
        raise UnknownDtype(f"{path}: unknown dtype code {code}")
    dt = RASTER_DTYPES[code]
    n = int(np.prod(shape))
    if len(raw) - end < n * dt.itemsize:
        raise TruncatedPayload(f"{path}: truncated payload ({len(raw) - end} of {n * dt.itemsize} bytes)")
    return np.frombuffer(raw, dtype=dt, count=n, offset=end).reshape(shape).astype(dt.newbyteorder("="))


def _load_pgm(raw: bytes, path) -> np.ndarray:
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedPayload(f"{path}: truncated PGM header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace before the payload
    w, h, maxval = fields
    dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    if len(raw) - pos < w * h * dt.itemsize:
        raise TruncatedPayload(f"{path}: truncated PGM payload")
    pix = np.frombuffer(raw, dtype=dt, count=w * h, offset=pos).reshape(h, w)
    return pix.astype(np.float64) / maxval


def save_pgm(path, img: np.ndarray, maxval: int = 255) -> None:
    """Write an image in [0, 1] as binary PGM (for viewing; lossy)."""
    dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    q = np.round(np.clip(img, 0.0, 1.0) * maxval).astype(dt)
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + q.tobytes())


# -- normalization ---------------------------------------------------------------

def normalize(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Divide by the image maximum; all-zero (or non-positive) images pass through with statistic 1."""
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("cannot normalize an empty image")
    peak = float(img.max())
    if peak <= 0:
        return img.copy(), 1.0
    return (img / peak).astype(img.dtype), peak


def denormalize(img: np.ndarray, stat: float) -> np.ndarray:
    return (np.asarray(img) * stat).astype(np.asarray(img).dtype)


# -- patches ---------------------------------------------------------------------

def patch_corners(shape: tuple[int, int], patch: int, count: int, seed: int) -> np.ndarray:
    h, w = shape
    if patch > h or patch > w:
        raise ShapeError(f"patch {patch} larger than image {h}x{w}")
    rng = np.random.default_rng(seed)
    return np.stack([rng.integers(0, h - patch + 1, size=count),
                     rng.integers(0, w - patch + 1, size=count)], axis=1)


def sample_patches(img: np.ndarray, patch: int, count: int, seed: int) -> list[np.ndarray]:
    """``count`` square patches at uniformly random corners."""
    if patch % 4:
        raise ShapeError(f"patch size must be divisible by 4, got {patch}")
    corners = patch_corners(img.shape[-2:], patch, count, seed)
    return [img[..., r:r + patch, c:c + patch].copy() for r, c in corners]


def make_eval_pair(img: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Synthetic mode: (f_crop(img), img). Real mode: (img, None)."""
    if mode == "synthetic":
        h, w = img.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"synthetic evaluation needs extents divisible by 4, got {h}x{w}")
        return f_crop(img), img
    if mode == "real":
        return img, None
    raise ValueError(f"mode must be 'synthetic' or 'real', got {mode!r}")


# -- manifests -------------------------------------------------------------------
#
# Text file:
#   # usrgr-manifest 1
#   split <name>
#   seed <int>
#   <id> TAB <relative path> TAB <normalization statistic, repr float>
# Paths are relative to the manifest's directory.

MANIFEST_HEADER = "# usrgr-manifest 1"


@dataclass
class ManifestEntry:
    id: str
    path: str
    stat: float = 1.0


@dataclass
class DatasetManifest:
    split: str
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"manifest {self.split!r} has duplicate ids")

    def save(self, path) -> None:
        lines = [MANIFEST_HEADER, f"split {self.split}", f"seed {self.seed}"]
        lines += [f"{e.id}\t{e.path}\t{e.stat!r}" for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines or lines[0].strip() != MANIFEST_HEADER:
            raise ValueError(f"{path}: not a usrgr manifest")
        split = seed = None
        entries = []
        for ln in lines[1:]:
            if not ln.strip() or ln.startswith("#"):
                continue
            if ln.startswith("split "):
                split = ln.split(None, 1)[1].strip()
            elif ln.startswith("seed "):
                seed = int(ln.split()[1])
            else:
                sid, p, stat = ln.split("\t")
                entries.append(ManifestEntry(sid, p, float(stat)))
        m = cls(split=split or "", seed=seed or 0, entries=entries, root=path.parent)
        missing = [e.path for e in m.entries if not (m.root / e.path).exists()]
        if missing:
            raise FileNotFoundError(f"{path}: missing files {missing[:3]}")
        return m

    def load_images(self) -> list[np.ndarray]:
        """Images in manifest order, divided by their stored statistic."""
        return [load_raster(self.root / e.path) / e.stat for e in self.entries]


def write_phantom_dataset(out_dir, counts: dict[str, int], size: int = 64, seed: int = 0) -> dict[str, DatasetManifest]:
    """Generate phantoms into ``out_dir/<split>/`` with one manifest per split.

    Stored rasters are the raw (unnormalized) phantoms; the manifest keeps the
    per-image maximum so loading yields [0, 1] images.
    """
    out = Path(out_dir)
    manifests = {}
    index = 0
    for split, n in counts.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        entries = []
        for i in range(n):
            s = derive_seed(seed, index)
            index += 1
            img = phantom_for_seed((size, size), s)
            _, stat = normalize(img)
            rel = f"{split}/{split}_{i:04d}.usrt"
            save_raster(out / rel, img)
            entries.append(ManifestEntry(f"{split}_{i:04d}", rel, stat))
        m = DatasetManifest(split, seed, entries, out)
        m.save(out / f"{split}.manifest")
        manifests[split] = m
    return manifests


def phantom_images(count: int, size: int = 64, seed: int = 0, offset: int = 0) -> list[np.ndarray]:
    """In-memory normalized phantoms (same seeds as :func:`write_phantom_dataset`)."""
    imgs = []
    for i in range(count):
        img = phantom_for_seed((size, size), derive_seed(seed, offset + i))
        imgs.append(normalize(img)[0])
    return imgs
