"""PSNR / SSIM with a dynamic range of 1."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PreconditionError

LUMA = np.array([0.299, 0.587, 0.114])
IDENTICAL = math.inf  # PSNR value reported when the two images match exactly


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    psnr_db: float
    ssim: float
    forward_time_s: float = 0.0

    @property
    def identical(self) -> bool:
        return self.psnr_db == IDENTICAL

    def csv_row(self) -> str:
        psnr = "identical" if self.identical else f"{self.psnr_db:.12f}"
        return f"{self.image_id},{psnr},{self.ssim:.12f},{self.forward_time_s:.6f}"


CSV_HEADER = "image_id,psnr_db,ssim,forward_time_s"


def _as_chw(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise DimensionError(f"metrics take one image at a time, got batch {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"expected a (c, h, w) image, got shape {arr.shape}")
    return arr


def rgb_to_y(img) -> np.ndarray:
    """BT.601 luma of an RGB image, returned as ``(1, h, w)``."""
    arr = _as_chw(img)
    if arr.shape[0] == 1:
        return arr
    if arr.shape[0] != 3:
        raise DimensionError(f"rgb_to_y needs 3 channels, got {arr.shape[0]}")
    return np.tensordot(LUMA, arr, axes=1)[None]


def shave(img, border: int) -> np.ndarray:
    arr = _as_chw(img)
    if border <= 0:
        return arr
    return arr[:, border:-border, border:-border]


def psnr(a, b, mode: str = "y", border: int = 0) -> float:
    """Peak signal-to-noise ratio in dB; ``IDENTICAL`` (inf) when ``a == b``."""
    x, y = _as_chw(a), _as_chw(b)
    if x.shape != y.shape:
        raise DimensionError(f"psnr: shapes {x.shape} and {y.shape} differ")
    if mode == "y":
        x, y = rgb_to_y(x), rgb_to_y(y)
    elif mode != "rgb":
        raise ValueError(f"mode must be 'y' or 'rgb', got {mode!r}")
    x, y = shave(x, border), shave(y, border)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         mode: str = "y", border: int = 0) -> float:
    """Mean SSIM over all fully-covered Gaussian windows of the luma channel."""
    x, y = _as_chw(a), _as_chw(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if mode == "y":
        x, y = rgb_to_y(x), rgb_to_y(y)
    elif mode != "rgb":
        raise ValueError(f"mode must be 'y' or 'rgb', got {mode!r}")
    x, y = shave(x, border), shave(y, border)
    if min(x.shape[1:]) < window:
        raise PreconditionError(f"ssim needs images at least {window}x{window}, got {x.shape[1:]}")
    c1, c2 = (k1 ** 2), (k2 ** 2)
    g = _gauss_window(window, sigma)
    vals = []
    for xc, yc in zip(x, y):
        mx, my = _filter_valid(xc, g), _filter_valid(yc, g)
        sxx = _filter_valid(xc * xc, g) - mx * mx
        syy = _filter_valid(yc * yc, g) - my * my
        sxy = _filter_valid(xc * yc, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
