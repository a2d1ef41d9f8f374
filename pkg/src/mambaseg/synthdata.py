"""Procedural multi-class segmentation volumes and the on-disk dataset format.

Each sample nests three heart-like structures on a noisy background: an
inner disc (class 3), a thin annulus around it (class 2), and an adjacent
crescent (class 1). The annulus and disc are deliberately small so the class
histogram is imbalanced. Shapes are deformed by randomly displacing their
radial control parameters (low-frequency harmonics), never by per-pixel
warping, so generation is exactly reproducible from (config, seed).

Dataset layout: ``header.json`` plus ``samples/{seed}.img`` (little-endian
float32) and ``samples/{seed}.lbl`` (uint8).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptHeader,
    InvalidConfig,
    ShapeMismatch,
    TruncatedPayload,
    VersionMismatch,
)

FORMAT_VERSION = 1
CLASS_NAMES = ["background", "crescent", "ring", "core"]
CLASS_INTENSITY = np.array([0.20, 0.45, 0.65, 0.85])


@dataclass
class LabeledVolume:
    image: np.ndarray  # float32 in [0, 1]
    labels: np.ndarray  # uint8, 0 = background
    seed: int
    spacing: tuple[float, ...]

    def __post_init__(self):
        if self.image.shape != self.labels.shape:
            raise ShapeMismatch(
                f"image {self.image.shape} vs labels {self.labels.shape}"
            )


@dataclass
class SynthConfig:
    K: int = 3  # foreground classes
    shape: tuple[int, ...] = (64, 64)
    noise_sigma: float = 0.04
    deform: float = 0.12
    imbalance: float = 0.05  # smallest-class area fraction target
    spacing: tuple[float, ...] = field(default=())

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if self.K < 1 or self.K > 3:
            raise InvalidConfig(f"K must be in [1, 3], got {self.K}")
        if self.noise_sigma < 0:
            raise InvalidConfig(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.shape) not in (2, 3) or any(s < 16 for s in self.shape):
            raise InvalidConfig(f"shape must be 2-D or 3-D with extents >= 16, got {self.shape}")
        if not (0.0 < self.imbalance <= 0.5):
            raise InvalidConfig(f"imbalance target must be in (0, 0.5], got {self.imbalance}")
        if not self.spacing:
            self.spacing = (1.0,) * len(self.shape)
        if len(self.spacing) != len(self.shape):
            raise InvalidConfig("spacing rank must match shape rank")


def _radial_field(coords, center, harmonics):
    """Distance from center, divided by a harmonic radius modulation.

    In 3-D the modulation angle is taken in the trailing two axes.
    """
    deltas = [c - mu for c, mu in zip(coords, center)]
    dist = np.sqrt(sum(d * d for d in deltas))
    phi = np.arctan2(deltas[-2], deltas[-1])
    mod = np.ones_like(dist)
    for k, (a, b) in harmonics.items():
        mod = mod + a * np.cos(k * phi) + b * np.sin(k * phi)
    return dist / np.maximum(mod, 0.5)


def _draw_harmonics(rng, deform):
    return {k: (deform * rng.uniform(-1, 1) / k, deform * rng.uniform(-1, 1) / k) for k in (2, 3)}


def generate_sample(cfg: SynthConfig, seed: int) -> LabeledVolume:
    """Deterministic per (cfg, seed) nested-shape volume."""
    rng = np.random.default_rng(np.random.SeedSequence([77142901, seed]))
    shape = cfg.shape
    radius_unit = min(shape) / 2.0
    scale = math.sqrt(cfg.imbalance / 0.05)

    coords = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    center = [s / 2.0 + rng.uniform(-0.06, 0.06) * radius_unit for s in shape]

    r_core = rng.uniform(0.18, 0.26) * radius_unit * scale
    thickness = rng.uniform(0.08, 0.12) * radius_unit * scale
    r_ring = r_core + thickness
    r_cres = rng.uniform(0.25, 0.33) * radius_unit
    angle = rng.uniform(0.0, 2.0 * math.pi)

    ring_h = _draw_harmonics(rng, cfg.deform)
    cres_h = _draw_harmonics(rng, cfg.deform)

    nested = _radial_field(coords, center, ring_h)
    core_mask = nested < r_core
    ring_mask = (nested < r_ring) & ~core_mask

    offset = r_ring + 0.12 * radius_unit
    cres_center = list(center)
    cres_center[-1] = center[-1] + offset * math.cos(angle)
    cres_center[-2] = center[-2] + offset * math.sin(angle)
    cres_field = _radial_field(coords, cres_center, cres_h)
    cres_mask = (cres_field < r_cres) & (nested >= r_ring) & ~ring_mask & ~core_mask

    labels = np.zeros(shape, dtype=np.uint8)
    if cfg.K >= 1:
        labels[cres_mask] = 1
    if cfg.K >= 2:
        labels[ring_mask] = 2
    if cfg.K >= 3:
        labels[core_mask] = 3
    if cfg.K < 3:  # fold unused structures into the last foreground class
        if cfg.K == 1:
            labels[ring_mask | core_mask] = 1
        elif cfg.K == 2:
            labels[core_mask] = 2

    image = CLASS_INTENSITY[labels].astype(np.float64)
    if cfg.noise_sigma > 0:
        image = image + cfg.noise_sigma * rng.standard_normal(shape)
        image = np.clip(image, 0.0, 1.0)
    return LabeledVolume(
        image=image.astype(np.float32),
        labels=labels,
        seed=seed,
        spacing=cfg.spacing,
    )


def generate_dataset(cfg: SynthConfig, first_seed: int, n: int) -> list[LabeledVolume]:
    return [generate_sample(cfg, s) for s in range(first_seed, first_seed + n)]


# the train and validation seed ranges never overlap by construction
TRAIN_SEED0 = 0
VAL_SEED0 = 100_000


def write_dataset(samples: list[LabeledVolume], path: str, class_names=None) -> None:
    os.makedirs(os.path.join(path, "samples"), exist_ok=True)
    entries = []
    for s in samples:
        img_rel = f"samples/{s.seed}.img"
        lbl_rel = f"samples/{s.seed}.lbl"
        np.ascontiguousarray(s.image, dtype="<f4").tofile(os.path.join(path, img_rel))
        np.ascontiguousarray(s.labels, dtype=np.uint8).tofile(os.path.join(path, lbl_rel))
        entries.append(
            {
                "seed": s.seed,
                "shape": list(s.image.shape),
                "spacing": list(s.spacing),
                "image_dtype": "<f4",
                "label_dtype": "u1",
                "image_file": img_rel,
                "label_file": lbl_rel,
            }
        )
    header = {
        "version": FORMAT_VERSION,
        "class_names": list(class_names or CLASS_NAMES),
        "samples": entries,
    }
    with open(os.path.join(path, "header.json"), "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)


def read_dataset(path: str) -> list[LabeledVolume]:
    try:
        with open(os.path.join(path, "header.json")) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptHeader(f"cannot read dataset header: {e}") from None
    if not isinstance(header, dict) or "version" not in header:
        raise CorruptHeader("dataset header missing version field")
    if header["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"dataset version {header['version']} unsupported")
    samples = []
    for ent in header.get("samples", []):
        try:
            shape = tuple(int(x) for x in ent["shape"])
            spacing = tuple(float(x) for x in ent["spacing"])
            img_path = os.path.join(path, ent["image_file"])
            lbl_path = os.path.join(path, ent["label_file"])
            seed = int(ent["seed"])
            if ent["image_dtype"] != "<f4" or ent["label_dtype"] != "u1":
                raise CorruptHeader(f"unsupported dtypes in entry for seed {seed}")
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptHeader(f"bad sample entry: {e}") from None
        n_voxels = int(np.prod(shape))
        try:
            img = np.fromfile(img_path, dtype="<f4")
            lbl = np.fromfile(lbl_path, dtype=np.uint8)
        except OSError as e:
            raise TruncatedPayload(f"missing payload: {e}") from None
        if img.size < n_voxels or lbl.size < n_voxels:
            raise TruncatedPayload(
                f"sample {seed}: need {n_voxels} voxels, have image {img.size} / labels {lbl.size}"
            )
        if img.size > n_voxels or lbl.size > n_voxels:
            raise CorruptHeader(f"sample {seed}: payload larger than declared shape")
        samples.append(
            LabeledVolume(
                image=img.reshape(shape),
                labels=lbl.reshape(shape),
                seed=seed,
                spacing=spacing,
            )
        )
    return samples
