"""RMS-prop update used for training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in {name}")
        self.name = name


@dataclass(frozen=True)
class RMSPropConfig:
    learning_rate: float = 2.5e-4
    rho: float = 0.99
    eps: float = 1e-8


def _is_finite(g) -> bool:
    if isinstance(g, torch.Tensor):
        return bool(torch.isfinite(g).all())
    return bool(np.all(np.isfinite(g)))


def rmsprop_step(params: dict, grads: dict, state: dict, config: RMSPropConfig):
    """One RMS-prop update over named arrays (numpy or torch).

    ``state`` maps names to the running mean of squared gradients; missing
    entries start at zero. Returns new ``(params, state)`` dicts and leaves
    the inputs untouched.
    """
    lr, rho, eps = config.learning_rate, config.rho, config.eps
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        if tuple(g.shape) != tuple(p.shape):
            raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        if not _is_finite(g):
            raise NonFiniteGradientError(name)
        v = state.get(name)
        v = (1.0 - rho) * g * g if v is None else rho * v + (1.0 - rho) * g * g
        sqrt = torch.sqrt if isinstance(v, torch.Tensor) else np.sqrt
        new_params[name] = p - lr * g / (sqrt(v) + eps)
        new_state[name] = v
    return new_params, new_state


class RMSProp:
    """Applies :func:`rmsprop_step` to a module's parameters in place."""

    def __init__(self, named_parameters, config: RMSPropConfig):
        self.params = dict(named_parameters)
        self.config = config
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        live = {n: p for n, p in self.params.items() if p.grad is not None}
        grads = {n: p.grad for n, p in live.items()}
        values = {n: p.detach() for n, p in live.items()}
        state = {n: self.state[n] for n in live if n in self.state}
        new_params, new_state = rmsprop_step(values, grads, state, self.config)
        for n, p in live.items():
            p.copy_(new_params[n])
        self.state.update(new_state)
