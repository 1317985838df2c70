"""SGD with classical momentum.

Velocity accumulates the raw gradient (v <- momentum*v + g) and parameters
move by learning_rate * v. Velocity buffers are created lazily, one per
parameter name, and always match their parameter's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class SGDState:
    learning_rate: float
    momentum: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_momentum_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: SGDState,
) -> tuple[Mapping[str, Tensor], SGDState]:
    """Apply one momentum update in place; returns (params, state)."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(
                f"sgd_momentum_step: gradient shape {g.shape} != parameter "
                f"shape {p.data.shape} for '{name}'"
            )
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            state.velocity[name] = v
        elif v.shape != p.data.shape:
            raise ShapeError(
                f"sgd_momentum_step: velocity shape {v.shape} != parameter "
                f"shape {p.data.shape} for '{name}'"
            )
        v *= state.momentum
        v += g
        p.data -= state.learning_rate * v
    return params, state
