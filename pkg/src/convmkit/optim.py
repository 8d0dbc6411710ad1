"""SGD with momentum and the polynomial learning-rate decay policy."""

from __future__ import annotations

import numpy as np


def poly_lr(base: float, iteration: int, max_iter: int, power: float) -> float:
    """base * (1 - iter/max_iter) ** power."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


class SGDMomentum:
    """Classic momentum: v = m*v + lr_eff*grad; w -= v.

    ``lr_multipliers`` maps parameter name -> per-layer factor; multiplier 0
    freezes a parameter (its velocity stays zero and it is never touched).
    """

    def __init__(self, params: dict, momentum: float = 0.9,
                 lr_multipliers: dict[str, float] | None = None):
        self.params = params
        self.momentum = momentum
        self.lr_multipliers = dict(lr_multipliers or {})
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def multiplier(self, name: str) -> float:
        return self.lr_multipliers.get(name, 1.0)

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError(f"negative learning rate {lr}")
        for name, p in self.params.items():
            mult = self.multiplier(name)
            if mult == 0.0 or p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += (lr * mult) * p.grad
            p.data -= v

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
