"""Dual-path dynamic filtering for same-resolution image super-resolution."""

__version__ = "0.1.0"

from .dynfilter import (
    KernelField,
    KernelFieldSet,
    dynamic_filter,
    dynamic_filter_naive,
    multiscale_aggregate,
    reshape_channels_to_kernels,
)
from .model import ModelConfig, ModelParams, ddet_forward, init_params, param_count
from .tensor import GradTape, Tensor, no_grad

__all__ = [
    "GradTape",
    "KernelField",
    "KernelFieldSet",
    "ModelConfig",
    "ModelParams",
    "Tensor",
    "ddet_forward",
    "dynamic_filter",
    "dynamic_filter_naive",
    "init_params",
    "multiscale_aggregate",
    "no_grad",
    "param_count",
    "reshape_channels_to_kernels",
]
