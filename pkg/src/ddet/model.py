"""The dual-path network and its KPN baseline.

Path one (detail branch) corrects the input with a small residual conv stack.
Path two (kernel branch) encodes the input at quarter resolution, runs a
stack of residual blocks, decodes back to full resolution with one channel
per kernel tap, and filters the corrected input with those per-pixel
kernels at several sizes.  An optional 3x3 conv refines the sum.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Iterator, Mapping

import numpy as np

from .dynfilter import KernelFieldSet, multiscale_aggregate, normalize_field, reshape_channels_to_kernels
from .errors import DimensionError
from .layers import conv, down4, residual_block, up4
from .ops import channel_slice, crop, pad_to_multiple, relu
from .tensor import DEFAULT_DTYPE, Tensor

KERNEL_NORMS = ("none", "softmax")


@dataclass(frozen=True)
class ModelConfig:
    kernel_sizes: tuple = (3, 5, 7)
    num_res_blocks: int = 16
    base_channels: int = 64
    use_cdm: bool = True
    use_pr: bool = True
    input_channels: int = 3
    kernel_norm: str = "none"

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        object.__setattr__(self, "kernel_sizes", ks)
        if not ks:
            raise ValueError("kernel_sizes must be non-empty")
        if any(k < 1 or k % 2 == 0 for k in ks):
            raise ValueError(f"kernel sizes must be odd and positive: {ks}")
        if any(a >= b for a, b in zip(ks, ks[1:])):
            raise ValueError(f"kernel sizes must be strictly increasing: {ks}")
        if self.num_res_blocks < 0 or self.base_channels < 1 or self.input_channels < 1:
            raise ValueError("num_res_blocks >= 0, base_channels >= 1 and input_channels >= 1 required")
        if self.kernel_norm not in KERNEL_NORMS:
            raise ValueError(f"kernel_norm must be one of {KERNEL_NORMS}, got {self.kernel_norm!r}")

    @property
    def kernel_channels(self) -> int:
        return sum(k * k for k in self.kernel_sizes)

    @classmethod
    def kpn(cls, k: int, **kw) -> "ModelConfig":
        """Single-size kernel prediction baseline: no detail branch, no refinement."""
        return cls(kernel_sizes=(k,), use_cdm=False, use_pr=False, **kw)


def ablation_configs(base: ModelConfig | None = None) -> dict[str, ModelConfig]:
    """The four cumulative ablation variants, keyed by their table row label."""
    base = base or ModelConfig()
    plain = replace(base, kernel_sizes=(7,), use_cdm=False, use_pr=False)
    return {
        "Plain": plain,
        "w/ PR": replace(plain, use_pr=True),
        "w/ CDM": replace(plain, use_pr=True, use_cdm=True),
        "w/ MDA": replace(base, use_pr=True, use_cdm=True),
    }


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    c, cin = config.base_channels, config.input_channels
    shapes: dict[str, tuple] = {}

    def add_conv(name, co, ci, k=3):
        shapes[f"{name}.weight"] = (co, ci, k, k)
        shapes[f"{name}.bias"] = (co,)

    add_conv("gsat.down.0", c, cin)
    add_conv("gsat.down.1", c, c)
    width = len(str(max(config.num_res_blocks - 1, 0)))
    for b in range(config.num_res_blocks):
        add_conv(f"gsat.body.{b:0{width}d}.conv1", c, c)
        add_conv(f"gsat.body.{b:0{width}d}.conv2", c, c)
    add_conv("gsat.up.0", c, c)
    add_conv("gsat.up.1", config.kernel_channels, c)
    if config.use_cdm:
        add_conv("cdm.0", c, cin)
        add_conv("cdm.1", c, c)
        add_conv("cdm.2", cin, c)
    if config.use_pr:
        add_conv("pr", cin, cin)
    return dict(sorted(shapes.items()))


class ModelParams(Mapping):
    """Named parameter tensors, iterated in sorted-name order."""

    def __init__(self, tensors: Mapping[str, Tensor], init_seed: int | None = None):
        self._tensors = dict(sorted(tensors.items()))
        self.init_seed = init_seed

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ModelParams({len(self)} tensors, {self.num_elements} elements)"

    @property
    def num_elements(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
                            for k, t in self._tensors.items()}, self.init_seed)

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                            for k, t in self._tensors.items()}, self.init_seed)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


INIT_SCHEMES = ("identity", "kaiming")


def init_params(config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE,
                scheme: str = "identity") -> ModelParams:
    """Seeded initial parameters.

    ``"kaiming"``: Kaiming-uniform (fan-in, bound ``1/sqrt(fan_in)``) conv
    weights and zero biases everywhere.

    ``"identity"`` (default) starts from the same draw, then makes the network
    an exact identity map: the last conv of every residual branch is zeroed,
    the kernel-head bias puts ``1/len(kernel_sizes)`` on each field's centre
    tap, and post-refinement is a delta kernel.

    Each tensor draws from its own stream keyed by (seed, name), so sub-networks
    shared between configurations start from identical values.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            arr = _param_rng(seed, name).uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(arr.astype(dtype), requires_grad=True)
    params = ModelParams(tensors, seed)
    if scheme == "identity":
        for name, t in params.items():
            if name.endswith(".conv2.weight") or name == "cdm.2.weight":
                t.data[...] = 0
        head = params["gsat.up.1.bias"].data
        start = 0
        for k in config.kernel_sizes:
            head[start + (k * k) // 2] = 1.0 / len(config.kernel_sizes)
            start += k * k
        if config.use_pr:
            set_pr_identity(params)
    return params


def set_cdm_zero(params: ModelParams) -> None:
    for name, t in params.items():
        if name.startswith("cdm."):
            t.data[...] = 0


def set_pr_identity(params: ModelParams) -> None:
    w = params["pr.weight"].data
    w[...] = 0
    for c in range(w.shape[0]):
        w[c, c, w.shape[2] // 2, w.shape[3] // 2] = 1
    params["pr.bias"].data[...] = 0


def check_params(params: Mapping[str, Tensor], config: ModelConfig) -> None:
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise DimensionError(f"missing parameter {name!r}")
        if tuple(params[name].shape) != shape:
            raise DimensionError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise DimensionError(f"unexpected parameter {extra[0]!r} for this config")


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------

def gsat_forward(i_lr: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> KernelFieldSet:
    """Predict one kernel field per configured size, at the input's resolution."""
    h, w = i_lr.shape[2], i_lr.shape[3]
    x = pad_to_multiple(i_lr, 4)
    y = down4(x, params, "gsat.down")
    width = len(str(max(config.num_res_blocks - 1, 0)))
    for b in range(config.num_res_blocks):
        y = residual_block(y, params, f"gsat.body.{b:0{width}d}")
    feat = crop(up4(y, params, "gsat.up"), h, w)
    if feat.shape[1] != config.kernel_channels:
        raise DimensionError(
            f"kernel head produces {feat.shape[1]} channels, config needs {config.kernel_channels}")
    fields = []
    start = 0
    for k in config.kernel_sizes:
        chunk = feat if len(config.kernel_sizes) == 1 else channel_slice(feat, start, start + k * k)
        fields.append(normalize_field(reshape_channels_to_kernels(chunk, k), config.kernel_norm))
        start += k * k
    return KernelFieldSet(fields)


def cdm_forward(i_lr: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Residual detail correction: three 3x3 convs added back onto the input."""
    y = relu(conv(i_lr, params, "cdm.0"))
    y = relu(conv(y, params, "cdm.1"))
    y = conv(y, params, "cdm.2")
    return i_lr + y


def post_refine(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    return conv(x, params, "pr")


def ddet_forward(i_lr: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    i_rev = cdm_forward(i_lr, params) if config.use_cdm else i_lr
    kernel_set = gsat_forward(i_lr, params, config)
    out = multiscale_aggregate(i_rev, kernel_set)
    return post_refine(out, params) if config.use_pr else out


def kpn_forward(i_lr: Tensor, params: Mapping[str, Tensor], k: int, **config_kw) -> Tensor:
    return ddet_forward(i_lr, params, ModelConfig.kpn(k, **config_kw))


def param_count(params: Mapping[str, Tensor]) -> dict:
    elements = int(sum(int(np.prod(t.shape)) for t in params.values()))
    return {"elements": elements, "bytes_fp32": 4 * elements}
