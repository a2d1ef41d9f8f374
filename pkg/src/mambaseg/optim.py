"""SGD with momentum, the two-step sharpness-aware wrapper, and the
polynomial learning-rate schedule.

The SAM step follows the first-order closed form: perturb parameters by
rho * g / ||g||_2 (one global l2 norm across all parameters), take the
gradient at the perturbed point, restore the parameters exactly, then apply
the base update with the perturbed-point gradient. Both passes see the same
batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .engine.tensor import Graph, Tensor, zero_grads
from .errors import InvalidConfig, NonFinite, ShapeMismatch

ZERO_GRAD_EPS = 1e-12


@dataclass
class SAMConfig:
    rho: float = 0.05
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not (self.rho > 0.0):
            raise InvalidConfig(f"rho must be positive when SAM is enabled, got {self.rho}")


@dataclass
class OptimizerState:
    """Named parameter set plus momentum buffers and schedule position."""

    params: dict[str, Tensor]
    lr: float = 5e-3
    momentum: float = 0.99
    nesterov: bool = False
    step_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.velocity.setdefault(name, np.zeros_like(p.data))
            if self.velocity[name].shape != p.data.shape:
                raise ShapeMismatch(f"velocity for {name!r} has wrong shape")


def sgd_step(state: OptimizerState, grads: Mapping[str, np.ndarray]) -> None:
    """v <- momentum * v + g; theta <- theta - lr * v (in place)."""
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient for {name!r}: {g.shape} != {p.data.shape}")
        v = state.velocity[name]
        v *= state.momentum
        v += g
        update = g + state.momentum * v if state.nesterov else v
        p.data -= state.lr * update
    state.step_count += 1


def grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


def _collect_grads(loss_fn: Callable[[], Tensor], params: dict[str, Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    plist = list(params.values())
    zero_grads(plist)
    with Graph() as g:
        loss = loss_fn()
        g.backward(loss, plist)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFinite(f"loss is non-finite: {value}")
    grads = {name: p.grad for name, p in params.items()}
    zero_grads(plist)
    return value, grads


def sam_step(
    state: OptimizerState, cfg: SAMConfig, loss_fn: Callable[[], Tensor]
) -> tuple[float, float]:
    """One sharpness-aware update; returns (loss_at_perturbed, loss_clean).

    loss_fn must rebuild the forward graph from the current parameter values
    on every call (it is invoked twice). Near-zero gradients skip the
    perturbation and fall back to a plain step on the clean gradient.
    """
    if not cfg.enabled:
        raise InvalidConfig("sam_step called with SAM disabled")
    loss_clean, g1 = _collect_grads(loss_fn, state.params)
    norm = grad_norm(g1)
    if norm < ZERO_GRAD_EPS:
        sgd_step(state, g1)
        return loss_clean, loss_clean

    scale = cfg.rho / norm
    saved = {name: p.data.copy() for name, p in state.params.items()}
    for name, p in state.params.items():
        p.data += scale * g1[name]
    try:
        loss_perturbed, g2 = _collect_grads(loss_fn, state.params)
    finally:
        for name, p in state.params.items():
            p.data = saved[name]
    sgd_step(state, g2)
    return loss_perturbed, loss_clean


def poly_lr(epoch: int, total_epochs: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - epoch/total)^power, floored at 1e-8."""
    if total_epochs < 1 or epoch < 0:
        raise InvalidConfig(f"bad schedule position {epoch}/{total_epochs}")
    frac = min(epoch / total_epochs, 1.0)
    return max(lr0 * (1.0 - frac) ** power, 1e-8)
