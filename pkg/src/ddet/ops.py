"""Differentiable primitives on NCHW tensors.

Convolutions use an im2col layout of ``(ci, k, k, n, ho, wo)`` so that the
whole batch goes through a single BLAS matmul; col2im is k*k strided adds.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, PreconditionError
from .tensor import Tensor, make_result


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _check_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected a 4-D NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return make_result(x.data * f, (x,), lambda g: (g * f,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(0))
    return make_result(out, (x,), lambda g: (g * mask,), "relu")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                       lambda g: (np.full_like(x.data, g),), "sum")


def softmax_channels(x: Tensor) -> Tensor:
    _check_4d(x, "softmax_channels")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_result(s, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``(n, ci, h, w)``, ``weight`` is ``(co, ci, k, k)`` with odd ``k``,
    ``bias`` is ``(co,)``.
    """
    _check_4d(x, "conv2d input")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be (co, ci, k, k), got {weight.shape}")
    n, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise DimensionError(
            f"conv2d: channel axis (1) of input has {ci} but weight expects {wci}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d: bias axis (0) has {bias.shape} but weight has {co} outputs")
    if stride < 1 or padding < 0:
        raise PreconditionError(f"conv2d: need stride >= 1 and padding >= 0 (got {stride}, {padding})")
    k = kh
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: spatial axes (2, 3) of size {h}x{w} too small for k={k}")

    xd = x.data
    if padding:
        xp = np.zeros((n, ci, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = np.empty((ci, k, k, n, ho, wo), dtype=xd.dtype)
    xpt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xpt[:, :, i:i + span_h:stride, j:j + span_w:stride]
    cols2 = cols.reshape(ci * k * k, n * ho * wo)
    wmat = weight.data.reshape(co, ci * k * k)
    out = wmat @ cols2
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        gw = (gm @ cols2.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(ci, k, k, n, ho, wo)
            gxp = np.zeros((ci, n) + xp.shape[2:], dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += dcols[:, i, j]
            gx = gxp.transpose(1, 0, 2, 3)
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gx)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# resampling / reshaping
# ---------------------------------------------------------------------------

def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_4d(x, "upsample_nearest2x")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_result(out, (x,), backward, "upsample2x")


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    _check_4d(x, "channel_slice")
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"channel_slice: [{start}, {stop}) outside channel axis of size {x.shape[1]}")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return make_result(out, (x,), backward, "channel_slice")


def symmetric_indices(size: int, pad_after: int) -> np.ndarray:
    """Source indices for half-sample symmetric extension (``... c b a | a b c ...``)."""
    return np.pad(np.arange(size), (0, pad_after), mode="symmetric")


def pad_to_multiple(x: Tensor, multiple: int) -> Tensor:
    """Extend bottom/right edges by symmetric reflection up to a multiple of ``multiple``."""
    _check_4d(x, "pad_to_multiple")
    n, c, h, w = x.shape
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return x
    ih, iw = symmetric_indices(h, ph), symmetric_indices(w, pw)
    out = x.data[:, :, ih][:, :, :, iw]

    def backward(g):
        gh = np.zeros((n, c, h, w + pw), dtype=g.dtype)
        np.add.at(gh, (slice(None), slice(None), ih), g)
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), iw), gh)
        return (gx,)

    return make_result(np.ascontiguousarray(out), (x,), backward, "pad_symmetric")


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` window."""
    _check_4d(x, "crop")
    if x.shape[2] == h and x.shape[3] == w:
        return x
    if h > x.shape[2] or w > x.shape[3]:
        raise DimensionError(f"crop: {h}x{w} larger than input {x.shape[2]}x{x.shape[3]}")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        return (gx,)

    return make_result(np.ascontiguousarray(x.data[:, :, :h, :w]), (x,), backward, "crop")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at exact ties is 0."""
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    loss = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)

    def backward(g):
        s = np.sign(diff) * (g / count)
        return s, -s

    return make_result(loss, (pred, target), backward, "l1_loss")
