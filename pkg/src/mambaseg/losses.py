"""Segmentation losses and the uncertainty-weighted aggregator.

Probability maps and one-hot targets are laid out (B, K, *spatial) with the
class axis second; 1-D inputs are treated as a single-class map for
convenience. Dice averages foreground classes only (class 0 is background)
unless the map has a single channel, in which case that channel is the
foreground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import ops
from .engine.tensor import Tensor, as_tensor
from .errors import ArityMismatch, DomainError, NonFinite, ShapeMismatch

DICE_SMOOTH = 1e-5
PROB_FLOOR = 1e-12
# raw value whose softplus is exactly 1: log(e - 1)
SIGMA_RAW_INIT = math.log(math.e - 1.0)


@dataclass
class FocalConfig:
    gamma: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise DomainError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass
class UncertaintyLossState:
    """Learnable per-component variances sigma_m = softplus(raw_m) > 0."""

    component_ids: list[str] = field(default_factory=lambda: ["dice", "ce", "focal"])
    raw: Tensor | None = None

    def __post_init__(self):
        if self.raw is None:
            self.raw = Tensor(
                np.full(len(self.component_ids), SIGMA_RAW_INIT), requires_grad=True
            )
        self.raw = as_tensor(self.raw)
        if self.raw.shape != (len(self.component_ids),):
            raise ArityMismatch(
                f"raw shape {self.raw.shape} != ({len(self.component_ids)},)"
            )

    @property
    def M(self) -> int:
        return len(self.component_ids)

    def sigmas(self) -> Tensor:
        return ops.softplus(self.raw)


def _prep(p, g, check_domain: bool) -> tuple[Tensor, Tensor]:
    p, g = as_tensor(p), as_tensor(g)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {g.shape}")
    if p.ndim <= 1:
        p = ops.reshape(p, (1, 1, max(p.size, 1)))
        g = ops.reshape(g, (1, 1, max(g.size, 1)))
    elif p.ndim == 2:
        raise ShapeMismatch("expected (B, K, *spatial) or a flat vector")
    if check_domain:
        lo, hi = float(p.data.min()), float(p.data.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise DomainError(f"probabilities outside [0, 1]: min {lo}, max {hi}")
    return p, g


def dice_loss(p, g, smooth: float = DICE_SMOOTH, include_background: bool = False) -> Tensor:
    """1 - mean soft Dice coefficient over (foreground) classes.

    Per class: (2 sum(p g) + s) / (sum p + sum g + s) with sums over batch and
    space; the smoothing term makes the empty-empty case come out at 1.
    """
    p, g = _prep(p, g, check_domain=True)
    k = p.shape[1]
    if k > 1 and not include_background:
        p = ops.slice_(p, (None, (1, k)))
        g = ops.slice_(g, (None, (1, k)))
    axes = (0,) + tuple(range(2, p.ndim))
    inter = ops.sum(p * g, axis=axes)
    denom = ops.sum(p, axis=axes) + ops.sum(g, axis=axes)
    dsc = (2.0 * inter + smooth) / (denom + smooth)
    return 1.0 - ops.mean(dsc)


def ce_loss(p, g) -> Tensor:
    """Mean over pixels of -sum_k g_k log p_k, with p floored at 1e-12."""
    p, g = _prep(p, g, check_domain=False)
    logp = ops.log(ops.clip(p, PROB_FLOOR, 1.0))
    per_pixel = ops.sum(ops.neg(g * logp), axis=1)
    return ops.mean(per_pixel)


def focal_loss(p, g, cfg: FocalConfig | float = 2.0) -> Tensor:
    """Mean over pixels of -sum_k (1 - p_k)^gamma g_k log p_k.

    gamma = 0 reduces exactly to ce_loss.
    """
    gamma = cfg.gamma if isinstance(cfg, FocalConfig) else FocalConfig(float(cfg)).gamma
    p, g = _prep(p, g, check_domain=False)
    logp = ops.log(ops.clip(p, PROB_FLOOR, 1.0))
    weight = ops.pow(1.0 - p, gamma)
    per_pixel = ops.sum(ops.neg(weight * g * logp), axis=1)
    return ops.mean(per_pixel)


def uncertainty_aware_loss(components, state: UncertaintyLossState) -> Tensor:
    """sum_m [ L_m / (2 sigma_m^2) + log(1 + sigma_m^2) ].

    Differentiable in both the component losses and the raw sigma parameters.
    """
    components = [as_tensor(c) for c in components]
    if len(components) != state.M:
        raise ArityMismatch(f"{len(components)} components for M = {state.M}")
    for cid, c in zip(state.component_ids, components):
        if c.size != 1:
            raise ShapeMismatch(f"component {cid!r} is not scalar: shape {c.shape}")
        if not np.isfinite(c.data).all():
            raise NonFinite(f"component {cid!r} is non-finite")
    sig = state.sigmas()
    sig2 = sig * sig
    stacked = ops.concat([ops.reshape(c, (1,)) for c in components], axis=0)
    terms = stacked / (2.0 * sig2) + ops.log(1.0 + sig2)
    return ops.sum(terms)


LOSS_COMPONENTS = {
    "dice": lambda p, g, gamma: dice_loss(p, g),
    "ce": lambda p, g, gamma: ce_loss(p, g),
    "focal": lambda p, g, gamma: focal_loss(p, g, gamma),
}
