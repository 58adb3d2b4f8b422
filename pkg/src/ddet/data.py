"""Training/evaluation pairs: synthetic degradation, PNG ingestion, patching.

Images are float arrays shaped ``(1, c, h, w)`` (or ``(n, c, h, w)``) with
values in [0, 1].  Resampling and shifting are expressed as per-axis weight
matrices applied as ``A @ img @ B.T``; borders use half-sample symmetric
extension, which keeps every row of those matrices summing to one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ImageDecodeError, MissingCounterpartError, PreconditionError, SizeMismatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImagePair:
    lr: np.ndarray
    hr: np.ndarray
    scene_id: str
    nominal_scale: int = 2

    def __post_init__(self):
        if self.lr.shape != self.hr.shape:
            raise SizeMismatchError(f"{self.scene_id}: lr {self.lr.shape} vs hr {self.hr.shape}")


@dataclass(frozen=True)
class DegradeConfig:
    """Blur + bicubic down/up + random sub-pixel shift.

    ``gauss_sigma``/``gauss_radius`` of ``None`` mean 0.6*scale and ceil(3*sigma).
    """

    scale: int = 2
    gauss_sigma: Optional[float] = None
    gauss_radius: Optional[int] = None
    shift_max: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.sigma <= 0:
            raise ValueError(f"gauss_sigma must be > 0, got {self.sigma}")
        if self.radius < math.ceil(3 * self.sigma):
            raise ValueError(f"gauss_radius {self.radius} < ceil(3*sigma) = {math.ceil(3 * self.sigma)}")
        if self.shift_max < 0:
            raise ValueError("shift_max must be >= 0")

    @property
    def sigma(self) -> float:
        return 0.6 * self.scale if self.gauss_sigma is None else float(self.gauss_sigma)

    @property
    def radius(self) -> int:
        return math.ceil(3 * self.sigma) if self.gauss_radius is None else int(self.gauss_radius)


def _array(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "data", img))
    if arr.ndim != 4:
        raise PreconditionError(f"expected an (n, c, h, w) image array, got shape {arr.shape}")
    return arr


def _fold(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by half-sample symmetric reflection."""
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def _apply_separable(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    out = np.einsum("yh,nchw->ncyw", rows, arr.astype(np.float64), optimize=True)
    return np.einsum("ncyw,xw->ncyx", out, cols, optimize=True)


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------

def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _conv_matrix(n: int, taps: np.ndarray) -> np.ndarray:
    radius = len(taps) // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for t, wgt in enumerate(taps):
        np.add.at(mat, (rows, _fold(rows + t - radius, n)), wgt)
    return mat


def gaussian_blur(img, sigma: float, radius: Optional[int] = None) -> np.ndarray:
    """Separable normalised Gaussian blur with symmetric borders."""
    if sigma <= 0:
        raise PreconditionError(f"sigma must be > 0, got {sigma}")
    arr = _array(img)
    radius = math.ceil(3 * sigma) if radius is None else radius
    taps = gaussian_kernel1d(sigma, radius)
    h, w = arr.shape[2:]
    out = _apply_separable(arr, _conv_matrix(h, taps), _conv_matrix(w, taps))
    return out.astype(arr.dtype)


# ---------------------------------------------------------------------------
# bicubic
# ---------------------------------------------------------------------------

def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_size: int, out_size: int, a: float = -0.5) -> np.ndarray:
    """Bicubic interpolation weights, ``(out_size, in_size)``.

    Pixel centres are aligned (``src = (dst + 0.5) * in/out - 0.5``).  When
    shrinking, the kernel is stretched by ``in/out`` to low-pass the input.
    """
    scale = out_size / in_size
    stretch = 1.0 / scale if scale < 1 else 1.0
    support = 2.0 * stretch
    dst = np.arange(out_size, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    left = np.floor(src - support).astype(int)
    taps = int(math.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = cubic((src[:, None] - idx) / stretch, a)
    wts /= wts.sum(axis=1, keepdims=True)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.repeat(np.arange(out_size), taps), _fold(idx, in_size).ravel()), wts.ravel())
    return mat


def bicubic_resize(img, scale_num: int = 1, scale_den: int = 1,
                   out_size: Optional[tuple] = None) -> np.ndarray:
    """Resize by ``scale_num/scale_den`` (or to ``out_size``), clamped to [0, 1]."""
    if scale_num <= 0 or scale_den <= 0:
        raise PreconditionError("scales must be positive")
    arr = _array(img)
    h, w = arr.shape[2:]
    if out_size is None:
        out_size = (math.ceil(h * scale_num / scale_den), math.ceil(w * scale_num / scale_den))
    oh, ow = out_size
    if oh < 1 or ow < 1:
        raise PreconditionError(f"output size {oh}x{ow} is empty")
    out = _apply_separable(arr, resize_matrix(h, oh), resize_matrix(w, ow))
    return np.clip(out, 0.0, 1.0).astype(arr.dtype)


# ---------------------------------------------------------------------------
# shift / degrade
# ---------------------------------------------------------------------------

def shift_matrix(n: int, d: float) -> np.ndarray:
    """Bilinear weights for ``out[u] = in[u - d]``."""
    src = np.arange(n, dtype=np.float64) - d
    j0 = np.floor(src).astype(int)
    frac = src - j0
    mat = np.zeros((n, n))
    rows = np.arange(n)
    np.add.at(mat, (rows, _fold(j0, n)), 1.0 - frac)
    np.add.at(mat, (rows, _fold(j0 + 1, n)), frac)
    return mat


def random_shift(img, dx: float, dy: float) -> np.ndarray:
    """Translate content by ``dx`` columns right and ``dy`` rows down (sub-pixel, bilinear)."""
    arr = _array(img)
    h, w = arr.shape[2:]
    return _apply_separable(arr, shift_matrix(h, dy), shift_matrix(w, dx)).astype(arr.dtype)


def degrade(hr, cfg: DegradeConfig, scene_id: str = "synthetic") -> ImagePair:
    hr = _array(hr)
    h, w = hr.shape[2:]
    rng = np.random.default_rng(cfg.seed)
    x = gaussian_blur(hr, cfg.sigma, cfg.radius)
    small = bicubic_resize(x, 1, cfg.scale)
    lr = bicubic_resize(small, out_size=(h, w))
    if cfg.shift_max > 0:
        dx, dy = rng.uniform(-cfg.shift_max, cfg.shift_max, size=2)
        lr = random_shift(lr, dx, dy)
    lr = np.clip(lr, 0.0, 1.0).astype(hr.dtype)
    return ImagePair(lr, hr.copy(), scene_id, cfg.scale)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def synthetic_image(h: int, w: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """A random piecewise-smooth RGB scene: gradient backdrop, shapes, striped patches."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    theta = rng.uniform(0, 2 * np.pi)
    t = (np.cos(theta) * xx / max(w - 1, 1) + np.sin(theta) * yy / max(h - 1, 1) + 1) / 2
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    for _ in range(int(rng.integers(5, 11))):
        color = rng.uniform(0.05, 0.95, size=3)
        kind = rng.integers(0, 3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if kind == 0:
            ry, rx = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        elif kind == 1:
            r = rng.uniform(0.04, 0.25) * min(h, w)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            r = rng.uniform(0.1, 0.3) * min(h, w)
            period = rng.uniform(3.0, 9.0)
            phi = rng.uniform(0, np.pi)
            stripes = np.sin((np.cos(phi) * xx + np.sin(phi) * yy) * 2 * np.pi / period) > 0
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r) & stripes
        img = np.where(mask[None], color[:, None, None], img)

    img = gaussian_blur(img[None], 0.5, 2)[0]
    return np.clip(img, 0.0, 1.0)[None].astype(dtype)


def synthetic_pairs(count: int, size: int, cfg: DegradeConfig, seed: int = 0) -> list[ImagePair]:
    """``count`` synthetic scenes of ``size x size`` and their degraded inputs."""
    pairs = []
    for i in range(count):
        hr = synthetic_image(size, size, np.random.default_rng([seed, i]))
        sub = DegradeConfig(cfg.scale, cfg.gauss_sigma, cfg.gauss_radius, cfg.shift_max,
                            seed=int(np.random.default_rng([cfg.seed, i]).integers(2**31)))
        pairs.append(degrade(hr, sub, scene_id=f"synthetic_{i:04d}"))
    return pairs


# ---------------------------------------------------------------------------
# disk I/O
# ---------------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:  # PIL raises a zoo of types for bad files
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    return (rgb / np.float32(255.0)).transpose(2, 0, 1)[None].copy()


def write_png(img, path) -> None:
    from PIL import Image

    arr = _array(img)[0]
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    u8 = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, "RGB").save(path)


def load_pair_dir(lr_dir, hr_dir, nominal_scale: int = 2) -> list[ImagePair]:
    """Pair ``*.png`` files with identical names in ``lr_dir`` and ``hr_dir``."""
    lr_dir, hr_dir = Path(lr_dir), Path(hr_dir)
    lr_names = {p.name for p in lr_dir.glob("*.png")}
    hr_names = {p.name for p in hr_dir.glob("*.png")}
    for orphan in sorted(lr_names ^ hr_names):
        side = lr_dir if orphan in lr_names else hr_dir
        raise MissingCounterpartError(f"{side / orphan} has no counterpart")
    pairs = []
    for name in sorted(lr_names):
        lr, hr = read_png(lr_dir / name), read_png(hr_dir / name)
        if lr.shape != hr.shape:
            raise SizeMismatchError(f"{name}: lr {lr.shape[2:]} vs hr {hr.shape[2:]}")
        pairs.append(ImagePair(lr, hr, Path(name).stem, nominal_scale))
    return pairs


def load_split(root, split: str, nominal_scale: int = 2) -> list[ImagePair]:
    base = Path(root) / split
    if not base.is_dir():
        raise DataError(f"no split directory {base}")
    return load_pair_dir(base / "lr", base / "hr", nominal_scale)


# ---------------------------------------------------------------------------
# patching
# ---------------------------------------------------------------------------

def sample_patches(pairs: Sequence[ImagePair], patch: int, count: int, seed) -> list[ImagePair]:
    """Random aligned crops; the same window is cut from lr and hr."""
    if patch < 4 or patch % 4:
        raise PreconditionError(f"patch size must be a positive multiple of 4, got {patch}")
    usable = []
    for p in pairs:
        h, w = p.hr.shape[2:]
        if patch > h or patch > w:
            log.warning("skipping %s: %dx%d is smaller than patch %d", p.scene_id, h, w, patch)
        else:
            usable.append(p)
    if not usable:
        raise DataError(f"no image is at least {patch}x{patch}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p = usable[int(rng.integers(len(usable)))]
        h, w = p.hr.shape[2:]
        y = int(rng.integers(0, h - patch + 1))
        x = int(rng.integers(0, w - patch + 1))
        win = (slice(None), slice(None), slice(y, y + patch), slice(x, x + patch))
        out.append(ImagePair(p.lr[win].copy(), p.hr[win].copy(), f"{p.scene_id}@{y},{x}",
                             p.nominal_scale))
    return out


def stack(pairs: Sequence[ImagePair]) -> tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([p.lr for p in pairs]), np.concatenate([p.hr for p in pairs]))
