import numpy as np
import pytest

from ddet.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, shape, requires_grad=True, dtype=np.float64, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad, dtype=dtype)


def conv2d_loops(x, w, b, stride=1, padding=0):
    """Brute-force cross-correlation used as an independent oracle."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for bi in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o] if b is not None else 0.0
                    for c in range(ci):
                        for i in range(k):
                            for j in range(k):
                                yy = y * stride + i - padding
                                xj = xx * stride + j - padding
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += w[o, c, i, j] * x[bi, c, yy, xj]
                    out[bi, o, y, xx] = acc
    return out
