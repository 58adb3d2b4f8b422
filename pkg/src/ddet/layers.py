"""Composite blocks built from :mod:`ddet.ops`.

Blocks read their weights from a name -> Tensor mapping; ``prefix`` picks the
sub-tree, e.g. ``residual_block(x, params, "gsat.body.03")`` uses
``gsat.body.03.conv1.weight`` and friends.
"""

from __future__ import annotations

from typing import Mapping

from .errors import DimensionError, PreconditionError
from .ops import add, conv2d, relu, upsample_nearest2x
from .tensor import Tensor


def conv(x: Tensor, params: Mapping[str, Tensor], name: str, stride: int = 1) -> Tensor:
    w = params[f"{name}.weight"]
    return conv2d(x, w, params.get(f"{name}.bias"), stride=stride, padding=w.shape[-1] // 2)


def residual_block(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """conv3x3 -> relu -> conv3x3, added to the input."""
    channels = params[f"{prefix}.conv1.weight"].shape[1]
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(
            f"residual_block {prefix}: channel axis (1) is {x.shape[1] if x.ndim == 4 else x.shape}, "
            f"expected {channels}")
    y = relu(conv(x, params, f"{prefix}.conv1"))
    y = conv(y, params, f"{prefix}.conv2")
    return add(x, y)


def down4(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Quarter the spatial size with two stride-2 3x3 convs (relu between)."""
    h, w = x.shape[2], x.shape[3]
    if h % 4 or w % 4:
        raise PreconditionError(f"down4 needs height and width divisible by 4, got {h}x{w}")
    y = relu(conv(x, params, f"{prefix}.0", stride=2))
    return conv(y, params, f"{prefix}.1", stride=2)


def up4(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Two rounds of nearest x2 + 3x3 conv; relu only after the first round.

    The output channel count is whatever ``{prefix}.1.weight`` produces.
    """
    y = relu(conv(upsample_nearest2x(x), params, f"{prefix}.0"))
    return conv(upsample_nearest2x(y), params, f"{prefix}.1")
