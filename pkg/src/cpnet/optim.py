"""SGD with momentum and the polynomial learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, ShapeError


def poly_lr(step: int, total: int, gamma0: float, power: float = 0.9) -> float:
    """gamma0 * (1 - step/total) ** power; reaches exactly 0 at step == total."""
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return gamma0 * (1.0 - step / total) ** power


class SgdMomentum:
    """theta <- theta - lr * v, with v <- m*v + (grad + wd*theta).

    Weight decay is added to the gradient before the momentum update
    (classic formulation); parameters constructed with decay=False
    (BN scales and shifts) skip the decay term.
    """

    def __init__(self, params: list[Parameter], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = {p.name: np.zeros_like(p.value.data) for p in params}
        self.step_count = 0

    def step(self, params: list[Parameter], lr: float) -> None:
        for p in params:
            v = self.velocity[p.name]
            if v.shape != p.value.shape:
                raise ShapeError(
                    f"velocity shape {v.shape} does not match parameter "
                    f"{p.name} shape {p.value.shape}"
                )
            g = p.grad.data
            if self.weight_decay and p.decay:
                g = g + self.weight_decay * p.value.data
            v *= self.momentum
            v += g
            p.value.data -= lr * v
        self.step_count += 1
