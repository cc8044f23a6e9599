"""Parameter groups and SGD with momentum.

A group with learning_rate == 0.0 is skipped entirely on every step, so its
parameters stay bit-for-bit identical; that is how training stages freeze
parts of the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import Grid


@dataclass
class ParamGroup:
    name: str
    params: dict[str, Grid]
    learning_rate: float

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ConfigError("group %r has negative learning rate %g" % (self.name, self.learning_rate))


class SgdOptimizer:
    """v = momentum*v + grad;  p -= lr*v   (per group lr, shared momentum)."""

    def __init__(self, groups: list[ParamGroup], momentum: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1), got %g" % momentum)
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate group names: %r" % names)
        self.groups = groups
        self.momentum = float(momentum)
        self._velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self) -> None:
        for group in self.groups:
            if group.learning_rate == 0.0:
                continue  # frozen: not touched at all
            for name, p in group.params.items():
                key = (group.name, name)
                v = self._velocity.get(key)
                if v is None:
                    v = np.zeros_like(p.data)
                    self._velocity[key] = v
                grad = p.grad if p.grad is not None else 0.0
                v *= self.momentum
                v += grad
                p.data -= group.learning_rate * v

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params.values():
                p.zero_grad()


def sgd_step(groups: list[ParamGroup], momentum: float = 0.0,
             state: SgdOptimizer | None = None) -> SgdOptimizer:
    """One optimizer step; returns the optimizer so momentum state persists."""
    opt = state or SgdOptimizer(groups, momentum)
    opt.step()
    return opt
