"""Evaluation metrics: Dice overlap, dataset MSE, and surface distances.

Surfaces use face connectivity (4-neighborhood in 2D, 6 in 3D): a voxel is
on the surface of a mask if it is inside the mask and any face neighbor is
outside the mask or outside the volume. Voxel spacing defaults to isotropic
1.0; anisotropic spacing scales coordinate differences per axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, EmptyGTSurface, ShapeMismatch


@dataclass
class SurfaceSet:
    """Boundary voxel centers of one label, in raster order."""

    points: np.ndarray  # (n_points, ndim) integer coordinates
    shape: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class MetricsReport:
    per_class_dsc: dict[int, float]
    mean_dsc: float
    mse: float
    surface_distance: float | None
    nsd_tolerance: dict[float, float]
    n_samples: int
    n_undefined_surfaces: int = 0
    rows: list[dict] = field(default_factory=list)  # one per (sample, class)
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "per_class_dsc": {str(k): v for k, v in self.per_class_dsc.items()},
            "mean_dsc": self.mean_dsc,
            "mse": self.mse,
            "surface_distance": self.surface_distance,
            "nsd_tolerance": {str(k): v for k, v in self.nsd_tolerance.items()},
            "n_samples": self.n_samples,
            "n_undefined_surfaces": self.n_undefined_surfaces,
            **self.extra,
        }

    def write_rows_csv(self, path: str) -> None:
        """Per-(sample, class) rows: dsc, surface distance, NSD per tau."""
        taus = sorted(self.nsd_tolerance)
        headers = ["sample", "class", "dsc", "surface_distance"] + [
            f"nsd_tau{t:g}" for t in taus
        ]
        with open(path, "w") as fh:
            fh.write(",".join(headers) + "\n")
            for row in self.rows:
                cells = [str(row["sample"]), str(row["class"]), repr(row["dsc"])]
                sd = row["surface_distance"]
                cells.append("undefined" if sd is None or math.isinf(sd) else repr(sd))
                for t in taus:
                    v = row["nsd"].get(t)
                    cells.append("" if v is None else repr(v))
                fh.write(",".join(cells) + "\n")


def dsc(pred_labels: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """2 |P intersect G| / (|P| + |G|); empty-empty counts as 1.0."""
    pred_labels, gt = np.asarray(pred_labels), np.asarray(gt)
    if pred_labels.shape != gt.shape:
        raise ShapeMismatch(f"{pred_labels.shape} vs {gt.shape}")
    p = pred_labels == class_id
    g = gt == class_id
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def mse_dataset(pred_probs, gts) -> float:
    """Mean over images of the per-image mean squared difference between the
    predicted probability map and the one-hot ground truth."""
    preds = list(pred_probs)
    targets = list(gts)
    if len(preds) == 0:
        raise EmptyDataset("mse over zero samples")
    if len(preds) != len(targets):
        raise ShapeMismatch(f"{len(preds)} predictions vs {len(targets)} targets")
    per_image = []
    for p, g in zip(preds, targets):
        p, g = np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeMismatch(f"sample shapes differ: {p.shape} vs {g.shape}")
        per_image.append(np.mean((p - g) ** 2))
    return float(np.mean(per_image))


def extract_surface(mask: np.ndarray) -> SurfaceSet:
    """Face-neighbor boundary voxels of a binary mask, raster order."""
    mask = np.asarray(mask).astype(bool)
    interior = mask.copy()
    for axis in range(mask.ndim):
        lo = np.zeros_like(mask)
        hi = np.zeros_like(mask)
        sl_src = [slice(None)] * mask.ndim
        sl_dst = [slice(None)] * mask.ndim
        sl_src[axis] = slice(0, -1)
        sl_dst[axis] = slice(1, None)
        lo[tuple(sl_dst)] = mask[tuple(sl_src)]
        hi[tuple(sl_src)] = mask[tuple(sl_dst)]
        interior &= lo & hi  # volume border voxels never count as interior
    boundary = mask & ~interior
    return SurfaceSet(points=np.argwhere(boundary), shape=mask.shape)


def _pair_distances(a: np.ndarray, b: np.ndarray, spacing) -> np.ndarray:
    """(len(a), len(b)) Euclidean distances with per-axis spacing."""
    sp = np.asarray(spacing, dtype=np.float64)
    diff = (a[:, None, :] - b[None, :, :]) * sp
    return np.sqrt((diff * diff).sum(axis=-1))


def mean_surface_distance(
    pred: np.ndarray, gt: np.ndarray, class_id: int, spacing=None
) -> float:
    """One-directional surface distance: the mean, over ground-truth surface
    points, of the Euclidean distance to the nearest predicted surface point
    (so it is normalized by the ground-truth surface size).

    Returns +inf when the prediction has no surface for the class; raises
    when the ground truth has none. Units are voxels unless spacing is given.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    spacing = np.ones(gt.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    s_gt = extract_surface(gt == class_id)
    if len(s_gt) == 0:
        raise EmptyGTSurface(f"class {class_id} absent from ground truth")
    s_pred = extract_surface(pred == class_id)
    if len(s_pred) == 0:
        return math.inf
    d = _pair_distances(s_gt.points, s_pred.points, spacing)
    return float(np.mean(d.min(axis=1)))


def nsd_tolerance(
    pred: np.ndarray, gt: np.ndarray, class_id: int, tau: float = 1.0, spacing=None
) -> float:
    """Symmetric fraction of surface points within tolerance tau of the other
    surface; in [0, 1], with pred == gt giving 1 for any tau."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    spacing = np.ones(gt.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    s_gt = extract_surface(gt == class_id)
    if len(s_gt) == 0:
        raise EmptyGTSurface(f"class {class_id} absent from ground truth")
    s_pred = extract_surface(pred == class_id)
    if len(s_pred) == 0:
        return 0.0
    d = _pair_distances(s_gt.points, s_pred.points, spacing)
    hits_gt = int((d.min(axis=1) <= tau).sum())
    hits_pred = int((d.min(axis=0) <= tau).sum())
    return (hits_gt + hits_pred) / (len(s_gt) + len(s_pred))


def evaluate_dataset(
    pred_labels_list,
    pred_probs_list,
    gt_labels_list,
    gt_onehot_list,
    n_classes: int,
    taus=(1.0,),
    spacing=None,
    extra: dict | None = None,
) -> MetricsReport:
    """Aggregate the full report over a dataset.

    DSC is averaged per foreground class over samples; surface metrics skip
    (sample, class) pairs whose ground truth is empty and count pairs whose
    prediction surface is empty as undefined.
    """
    n = len(gt_labels_list)
    if n == 0:
        raise EmptyDataset("evaluation over zero samples")
    per_class: dict[int, list[float]] = {k: [] for k in range(1, n_classes)}
    sd_values: list[float] = []
    nsd_values: dict[float, list[float]] = {float(t): [] for t in taus}
    rows: list[dict] = []
    undefined = 0
    for i, (pred, gt) in enumerate(zip(pred_labels_list, gt_labels_list)):
        for k in range(1, n_classes):
            score = dsc(pred, gt, k)
            per_class[k].append(score)
            row = {"sample": i, "class": k, "dsc": score,
                   "surface_distance": None, "nsd": {}}
            rows.append(row)
            if not np.any(gt == k):
                continue
            sd = mean_surface_distance(pred, gt, k, spacing)
            row["surface_distance"] = sd
            if math.isinf(sd):
                undefined += 1
            else:
                sd_values.append(sd)
            for t in nsd_values:
                v = nsd_tolerance(pred, gt, k, t, spacing)
                nsd_values[t].append(v)
                row["nsd"][t] = v
    per_class_mean = {k: float(np.mean(v)) for k, v in per_class.items() if v}
    return MetricsReport(
        per_class_dsc=per_class_mean,
        mean_dsc=float(np.mean(list(per_class_mean.values()))),
        mse=mse_dataset(pred_probs_list, gt_onehot_list),
        surface_distance=float(np.mean(sd_values)) if sd_values else None,
        nsd_tolerance={t: float(np.mean(v)) if v else 0.0 for t, v in nsd_values.items()},
        n_samples=n,
        n_undefined_surfaces=undefined,
        rows=rows,
        extra=extra or {},
    )
