"""Per-pixel dynamic filtering.

A feature map with ``k*k`` channels is read as one ``k x k`` kernel per
pixel: channel ``m`` holds kernel element ``(m // k, m % k)``.  Each kernel
is applied to the image neighbourhood centred on its own pixel, shared
across all image channels, with zeros outside the image.  Several kernel
sizes are combined by summing their filtered images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .ops import softmax_channels
from .tensor import Tensor, make_result


@dataclass(frozen=True)
class KernelField:
    """One ``k x k`` kernel per spatial location, stored as ``(n, k*k, h, w)``."""

    k: int
    weights: Tensor

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise DimensionError(f"kernel size must be odd and >= 1, got {self.k}")
        if self.weights.ndim != 4:
            raise DimensionError(f"kernel field must be (n, k*k, h, w), got {self.weights.shape}")
        if self.weights.shape[1] != self.k * self.k:
            raise DimensionError(
                f"kernel field for k={self.k} needs {self.k * self.k} channels, "
                f"got {self.weights.shape[1]}")

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    def kernels(self) -> np.ndarray:
        """View as ``(n, k, k, h, w)``: ``kernels()[b, i, j, y, x]`` is K^(y,x)(i, j)."""
        n, _, h, w = self.weights.shape
        return self.weights.data.reshape(n, self.k, self.k, h, w)


class KernelFieldSet(tuple):
    """Ordered kernel fields sharing ``(n, h, w)``, distinct sizes."""

    def __new__(cls, fields: Sequence[KernelField]):
        fields = tuple(fields)
        if not fields:
            raise DimensionError("a kernel field set needs at least one field")
        n, _, h, w = fields[0].shape
        sizes = set()
        for idx, f in enumerate(fields):
            if (f.shape[0], f.shape[2], f.shape[3]) != (n, h, w):
                raise DimensionError(
                    f"field {idx} (k={f.k}) has (n, h, w)={f.shape[0], f.shape[2], f.shape[3]}, "
                    f"expected {(n, h, w)}")
            if f.k in sizes:
                raise DimensionError(f"duplicate kernel size {f.k} in field set")
            sizes.add(f.k)
        return super().__new__(cls, fields)

    @property
    def sizes(self) -> tuple:
        return tuple(f.k for f in self)

    @property
    def channel_budget(self) -> int:
        return sum(f.k * f.k for f in self)


def reshape_channels_to_kernels(field: Tensor, k: int) -> KernelField:
    """Interpret a ``(n, k*k, h, w)`` feature map as a kernel field (row-major)."""
    if field.ndim != 4 or field.shape[1] != k * k:
        raise DimensionError(
            f"expected {k * k} channels (k={k}) for a kernel field, got shape {field.shape}")
    return KernelField(k, field)


def kernels_to_channels(kernels: np.ndarray) -> np.ndarray:
    """Inverse of :meth:`KernelField.kernels`: ``(n, k, k, h, w)`` to ``(n, k*k, h, w)``."""
    n, k, k2, h, w = kernels.shape
    if k != k2:
        raise DimensionError(f"kernels must be square, got {k}x{k2}")
    return kernels.reshape(n, k * k, h, w)


def normalize_field(field: KernelField, mode: str = "none") -> KernelField:
    if mode == "none":
        return field
    if mode == "softmax":
        return KernelField(field.k, softmax_channels(field.weights))
    raise ValueError(f"unknown kernel normalization {mode!r}")


def _check_spatial(image: Tensor, field: KernelField, label: str = "kernel field") -> None:
    if image.ndim != 4:
        raise DimensionError(f"dynamic_filter: image must be NCHW, got {image.shape}")
    n, _, h, w = image.shape
    fn, _, fh, fw = field.shape
    if (fn, fh, fw) != (n, h, w):
        raise DimensionError(
            f"dynamic_filter: {label} has (n, h, w)={(fn, fh, fw)} but image has {(n, h, w)}")


def _padded(img: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return img
    n, c, h, w = img.shape
    xp = np.zeros((n, c, h + 2 * r, w + 2 * r), dtype=img.dtype)
    xp[:, :, r:r + h, r:r + w] = img
    return xp


def dynamic_filter_forward(image: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = image.shape
    r = k // 2
    xp = _padded(image, r)
    out = np.zeros_like(image)
    for m in range(k * k):
        i, j = divmod(m, k)
        out += weights[:, m:m + 1] * xp[:, :, i:i + h, j:j + w]
    return out


def dynamic_filter_backward(upstream: np.ndarray, image: np.ndarray, weights: np.ndarray,
                            k: int, need_image: bool = True, need_kernels: bool = True):
    """Gradients of ``dynamic_filter`` w.r.t. image and kernel channels.

    The image gradient scatters ``K * upstream`` back through each tap; the
    kernel gradient correlates the upstream gradient with the shifted image
    and sums over image channels.
    """
    n, c, h, w = image.shape
    r = k // 2
    xp = _padded(image, r)
    g_img = g_ker = None
    if need_image:
        gxp = np.zeros_like(xp)
        for m in range(k * k):
            i, j = divmod(m, k)
            gxp[:, :, i:i + h, j:j + w] += weights[:, m:m + 1] * upstream
        g_img = np.ascontiguousarray(gxp[:, :, r:r + h, r:r + w])
    if need_kernels:
        g_ker = np.empty_like(weights)
        for m in range(k * k):
            i, j = divmod(m, k)
            g_ker[:, m] = (upstream * xp[:, :, i:i + h, j:j + w]).sum(axis=1)
    return g_img, g_ker


def dynamic_filter(image: Tensor, kernels: KernelField) -> Tensor:
    """Filter every pixel of ``image`` with its own kernel from ``kernels``."""
    _check_spatial(image, kernels)
    k = kernels.k
    wt = kernels.weights
    if wt.dtype != image.dtype:
        raise DimensionError(f"dtype mismatch: image {image.dtype}, kernels {wt.dtype}")
    out = dynamic_filter_forward(image.data, wt.data, k)

    def backward(g):
        return dynamic_filter_backward(g, image.data, wt.data, k,
                                       need_image=image.requires_grad,
                                       need_kernels=wt.requires_grad)

    return make_result(out, (image, wt), backward, f"dynamic_filter_k{k}")


def multiscale_aggregate(image: Tensor, kernel_set: Sequence[KernelField]) -> Tensor:
    """Sum of ``dynamic_filter(image, field)`` over fields, in the given order."""
    fields = list(kernel_set)
    if not fields:
        raise DimensionError("multiscale_aggregate: empty kernel set")
    for idx, f in enumerate(fields):
        _check_spatial(image, f, label=f"field {idx} (k={f.k})")
    out = dynamic_filter(image, fields[0])
    for f in fields[1:]:
        out = out + dynamic_filter(image, f)
    return out


def dynamic_filter_naive(image, kernels: KernelField) -> np.ndarray:
    """Reference implementation: one scalar multiply-add at a time.

    Accumulates in the image's dtype, taps in row-major order, which is the
    same order the vectorised path uses.
    """
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    _check_spatial(Tensor(img, dtype=img.dtype), kernels)
    kern = kernels.kernels()
    k = kernels.k
    r = k // 2
    n, c, h, w = img.shape
    zero = img.dtype.type(0)
    out = np.zeros_like(img)
    for b in range(n):
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    acc = zero
                    for i in range(k):
                        for j in range(k):
                            yy, xx = y + i - r, x + j - r
                            if 0 <= yy < h and 0 <= xx < w:
                                acc = acc + kern[b, i, j, y, x] * img[b, ch, yy, xx]
                    out[b, ch, y, x] = acc
    return out
