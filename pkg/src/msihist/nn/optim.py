"""Adam optimizer over a named parameter set.

State carries the step counter and first/second moment buffers so a
checkpointed run resumes bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor


@dataclass
class TrainState:
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    rng_seed: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor], rng_seed: int = 0) -> "TrainState":
        m = {k: np.zeros_like(p.data) for k, p in params.items()}
        v = {k: np.zeros_like(p.data) for k, p in params.items()}
        return cls(params=params, m=m, v=v, step=0, rng_seed=rng_seed)

    def validate(self) -> None:
        for k, p in self.params.items():
            if self.m[k].shape != p.data.shape or self.v[k].shape != p.data.shape:
                raise ValidationError(f"moment shape mismatch for parameter {k}")


def adam_step(state: TrainState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """One Adam update with bias correction; mutates and returns `state`.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    missing = [k for k, p in state.params.items() if p.grad is None]
    if missing:
        raise ValidationError(f"adam_step: missing gradients for {sorted(missing)}")
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in state.params.items():
        g = p.grad
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    state.step = t
    return state
