"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import NonFiniteGradientError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array(self.step, dtype=np.int64)}
        out.update({f"m/{k}": a for k, a in sorted(self.m.items())})
        out.update({f"v/{k}": a for k, a in sorted(self.v.items())})
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "AdamState":
        state = cls(step=int(arrays.get("step", 0)))
        for key, arr in arrays.items():
            if key.startswith("m/"):
                state.m[key[2:]] = arr
            elif key.startswith("v/"):
                state.v[key[2:]] = arr
        return state


def adam_step(params: Mapping[str, Tensor], grads: Optional[Mapping[str, np.ndarray]] = None,
              state: Optional[AdamState] = None, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Update ``params`` in place and return the advanced state.

    ``grads`` defaults to each tensor's ``.grad``; a missing gradient counts as
    zero.  Every gradient is checked for NaN/Inf before any parameter moves.
    """
    state = state or AdamState()
    if grads is None:
        grads = {k: t.grad for k, t in params.items()}
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name, int(np.size(g) - np.count_nonzero(np.isfinite(g))))

    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        dtype = p.data.dtype
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state.m[name] = m.astype(dtype, copy=False)
        state.v[name] = v.astype(dtype, copy=False)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(dtype, copy=False)
    return state
