"""2-D loss-surface sampling around trained weights, plus a sharpness proxy.

Directions are Gaussian draws scaled filter-wise to the weight norms (so
surfaces are comparable across models); the second direction is
Gram-Schmidt-orthogonalized against the first in the flattened space. Grid
evaluation is read-only: parameters are restored bit-exactly afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .engine.tensor import Tensor
from .errors import InvalidAttr, NonFinite, NumericDomain, Overflow


@dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray  # (len(alphas), len(betas))
    center_loss: float
    direction_seed: int
    non_finite_cells: list[tuple[int, int]] = field(default_factory=list)

    def range_within_radius(self, radius: float) -> float:
        """max - min of finite losses over cells with ||(alpha, beta)|| <= radius."""
        vals = []
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                if a * a + b * b <= radius * radius and math.isfinite(self.losses[i, j]):
                    vals.append(self.losses[i, j])
        return float(max(vals) - min(vals)) if vals else float("nan")


def _filters(arr: np.ndarray):
    """Yield per-output-channel slices for rank >= 2; whole tensor otherwise."""
    if arr.ndim >= 2:
        for o in range(arr.shape[0]):
            yield arr[o]
    else:
        yield arr


def _filter_normalize(direction: np.ndarray, weight: np.ndarray) -> None:
    for d_f, w_f in zip(_filters(direction), _filters(weight)):
        wn = float(np.linalg.norm(w_f))
        dn = float(np.linalg.norm(d_f))
        if wn == 0.0 or dn == 0.0:
            d_f[...] = 0.0  # zero-norm filter contributes no direction
        else:
            d_f *= wn / dn


def sample_directions(
    weights: Mapping[str, "Tensor | np.ndarray"], seed: int
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Two filter-normalized Gaussian directions, the second orthogonalized
    against the first over the flattened parameter space."""
    rng = np.random.default_rng(np.random.SeedSequence([900913, seed]))
    arrays = {
        name: (w.data if isinstance(w, Tensor) else np.asarray(w))
        for name, w in weights.items()
    }
    d1 = {name: rng.standard_normal(a.shape) for name, a in arrays.items()}
    d2 = {name: rng.standard_normal(a.shape) for name, a in arrays.items()}
    for name, a in arrays.items():
        _filter_normalize(d1[name], a)
        _filter_normalize(d2[name], a)
    dot11 = sum(float(np.vdot(d1[n], d1[n])) for n in arrays)
    if dot11 > 0.0:
        dot12 = sum(float(np.vdot(d1[n], d2[n])) for n in arrays)
        coef = dot12 / dot11
        for n in arrays:
            d2[n] -= coef * d1[n]
    return d1, d2


def evaluate_grid(
    params: Mapping[str, Tensor],
    d1: Mapping[str, np.ndarray],
    d2: Mapping[str, np.ndarray],
    extent: float,
    steps: int,
    loss_fn: Callable[[], float],
    direction_seed: int = 0,
) -> LandscapeGrid:
    """losses[i][j] = loss at theta + alpha_i d1 + beta_j d2.

    steps must be odd so the exact center is on the grid; the center cell is
    evaluated at the untouched parameters (bit-equal to the caller's loss).
    """
    if steps < 1 or steps % 2 == 0:
        raise InvalidAttr(f"steps must be odd and positive, got {steps}")
    if extent < 0:
        raise InvalidAttr(f"extent must be >= 0, got {extent}")
    alphas = np.linspace(-extent, extent, steps)
    betas = np.linspace(-extent, extent, steps)
    mid = steps // 2
    alphas[mid] = 0.0
    betas[mid] = 0.0
    saved = {name: p.data.copy() for name, p in params.items()}
    losses = np.full((steps, steps), np.nan)
    bad: list[tuple[int, int]] = []
    center_loss = math.nan
    try:
        for i, a in enumerate(alphas):
            for j, b in enumerate(betas):
                if i == mid and j == mid:
                    for name, p in params.items():
                        p.data = saved[name]
                else:
                    for name, p in params.items():
                        p.data = saved[name] + a * d1[name] + b * d2[name]
                try:
                    value = float(loss_fn())
                except (FloatingPointError, OverflowError, Overflow, NonFinite, NumericDomain):
                    value = math.nan
                if math.isfinite(value):
                    losses[i, j] = value
                else:
                    bad.append((i, j))
                if i == mid and j == mid:
                    center_loss = value
    finally:
        for name, p in params.items():
            p.data = saved[name]
    return LandscapeGrid(
        alphas=alphas,
        betas=betas,
        losses=losses,
        center_loss=center_loss,
        direction_seed=direction_seed,
        non_finite_cells=bad,
    )


def sharpness_proxy(
    params: Mapping[str, Tensor],
    loss_fn: Callable[[], float],
    rho: float,
    n_directions: int = 32,
    seed: int = 0,
) -> float:
    """max over random unit directions d of loss(theta + rho d) - loss(theta)."""
    rng = np.random.default_rng(np.random.SeedSequence([515049, seed]))
    saved = {name: p.data.copy() for name, p in params.items()}
    base = float(loss_fn())
    worst = -math.inf
    try:
        for _ in range(n_directions):
            d = {name: rng.standard_normal(p.shape) for name, p in saved.items()}
            norm = math.sqrt(sum(float(np.vdot(v, v)) for v in d.values()))
            for name, p in params.items():
                p.data = saved[name] + (rho / norm) * d[name]
            worst = max(worst, float(loss_fn()) - base)
    finally:
        for name, p in params.items():
            p.data = saved[name]
    return worst


def write_grid_csv(grid: LandscapeGrid, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("alpha,beta,loss\n")
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                fh.write(f"{a!r},{b!r},{grid.losses[i, j]!r}\n")


def write_grid_json(grid: LandscapeGrid, path: str, metadata: dict | None = None) -> None:
    doc = {
        "alphas": grid.alphas.tolist(),
        "betas": grid.betas.tolist(),
        "losses": [[None if not math.isfinite(v) else v for v in row] for row in grid.losses],
        "center_loss": grid.center_loss,
        "direction_seed": grid.direction_seed,
        "non_finite_cells": grid.non_finite_cells,
        **(metadata or {}),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def write_grid_pgm(grid: LandscapeGrid, path: str) -> None:
    """Greyscale heat map (binary PGM, P5): dark = low loss."""
    vals = grid.losses.copy()
    finite = np.isfinite(vals)
    if finite.any():
        lo, hi = vals[finite].min(), vals[finite].max()
        span = hi - lo if hi > lo else 1.0
        img = np.where(finite, (vals - lo) / span * 255.0, 255.0).astype(np.uint8)
    else:
        img = np.full(vals.shape, 255, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
