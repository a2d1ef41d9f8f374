"""Shared test helpers: independent naive-loop oracles.

Every oracle here is deliberately written as plain Python loops over scalar
values so it shares no code path with the package implementations it checks.
"""

import math

import numpy as np
import pytest


def naive_dice_loss(p, g, smooth=1e-5, include_background=False):
    """Loop-based soft Dice loss over (B, K, *spatial) arrays."""
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    k_total = p.shape[1]
    classes = range(1, k_total) if (k_total > 1 and not include_background) else range(k_total)
    scores = []
    for k in classes:
        inter = 0.0
        psum = 0.0
        gsum = 0.0
        for b in range(p.shape[0]):
            for idx in np.ndindex(p.shape[2:]):
                pv = p[(b, k) + idx]
                gv = g[(b, k) + idx]
                inter += pv * gv
                psum += pv
                gsum += gv
        scores.append((2.0 * inter + smooth) / (psum + gsum + smooth))
    return 1.0 - sum(scores) / len(scores)


def naive_ce_loss(p, g, floor=1e-12):
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    total = 0.0
    count = 0
    for b in range(p.shape[0]):
        for idx in np.ndindex(p.shape[2:]):
            pix = 0.0
            for k in range(p.shape[1]):
                pv = min(max(p[(b, k) + idx], floor), 1.0)
                pix -= g[(b, k) + idx] * math.log(pv)
            total += pix
            count += 1
    return total / count


def naive_focal_loss(p, g, gamma, floor=1e-12):
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    total = 0.0
    count = 0
    for b in range(p.shape[0]):
        for idx in np.ndindex(p.shape[2:]):
            pix = 0.0
            for k in range(p.shape[1]):
                pv = p[(b, k) + idx]
                pc = min(max(pv, floor), 1.0)
                pix -= (1.0 - pv) ** gamma * g[(b, k) + idx] * math.log(pc)
            total += pix
            count += 1
    return total / count


def naive_uncertainty_loss(components, sigmas):
    total = 0.0
    for lm, sm in zip(components, sigmas):
        total += lm / (2.0 * sm * sm) + math.log(1.0 + sm * sm)
    return total


def naive_dsc(pred, gt, class_id):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    inter = 0
    psum = 0
    gsum = 0
    for idx in np.ndindex(pred.shape):
        pv = pred[idx] == class_id
        gv = gt[idx] == class_id
        inter += pv and gv
        psum += pv
        gsum += gv
    if psum + gsum == 0:
        return 1.0
    return 2.0 * inter / (psum + gsum)


def naive_surface(mask):
    """Boundary voxels by the face-neighbor definition, raster order."""
    mask = np.asarray(mask).astype(bool)
    pts = []
    for idx in np.ndindex(mask.shape):
        if not mask[idx]:
            continue
        on_boundary = False
        for axis in range(mask.ndim):
            for delta in (-1, 1):
                nb = list(idx)
                nb[axis] += delta
                if nb[axis] < 0 or nb[axis] >= mask.shape[axis]:
                    on_boundary = True
                elif not mask[tuple(nb)]:
                    on_boundary = True
        if on_boundary:
            pts.append(idx)
    return pts


def naive_surface_distance(pred, gt, class_id):
    gt_pts = naive_surface(np.asarray(gt) == class_id)
    pred_pts = naive_surface(np.asarray(pred) == class_id)
    if not gt_pts:
        raise ValueError("empty gt surface")
    if not pred_pts:
        return math.inf
    mins = []
    for x in gt_pts:
        best = math.inf
        for y in pred_pts:
            d = math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))
            best = min(best, d)
        mins.append(best)
    return float(np.mean(np.array(mins)))


def naive_nsd(pred, gt, class_id, tau):
    gt_pts = naive_surface(np.asarray(gt) == class_id)
    pred_pts = naive_surface(np.asarray(pred) == class_id)
    if not gt_pts:
        raise ValueError("empty gt surface")
    if not pred_pts:
        return 0.0

    def mindist(x, pts):
        return min(
            math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y))) for y in pts
        )

    hits = sum(mindist(x, pred_pts) <= tau for x in gt_pts)
    hits += sum(mindist(y, gt_pts) <= tau for y in pred_pts)
    return (hits + 0.0) / (len(gt_pts) + len(pred_pts))


def naive_mse(pred_probs, gts):
    vals = []
    for p, g in zip(pred_probs, gts):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        total = 0.0
        for idx in np.ndindex(p.shape):
            total += (p[idx] - g[idx]) ** 2
        vals.append(total / p.size)
    return float(np.mean(vals))


def random_prob_map(rng, shape_bkhw):
    """Random softmax-normalized probability map plus matching one-hot."""
    b, k = shape_bkhw[0], shape_bkhw[1]
    logits = rng.standard_normal(shape_bkhw)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, (b,) + shape_bkhw[2:])
    onehot = np.zeros(shape_bkhw)
    for kk in range(k):
        onehot[:, kk][labels == kk] = 1.0
    return p, onehot


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
