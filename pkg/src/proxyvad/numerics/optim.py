from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DiffTensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: list[DiffTensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``.

    A missing gradient (``None``) is treated as zero.
    """
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("adam_step: params, grads and state must have equal length")
    for p, g, m in zip(params, grads, state.first_moment):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ValueError(f"adam_step: shape mismatch for parameter {p.name or ''} {p.shape}")

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
