"""Metric values against counting arguments and brute-force oracles."""

import math

import numpy as np
import pytest

from conftest import naive_dsc, naive_mse, naive_nsd, naive_surface, naive_surface_distance
from mambaseg.errors import EmptyDataset, EmptyGTSurface, ShapeMismatch
from mambaseg.metrics import (
    dsc,
    extract_surface,
    mse_dataset,
    nsd_tolerance,
    mean_surface_distance,
)


def test_dsc_trivial_cases():
    a = np.array([[1, 1], [0, 0]])
    assert dsc(a, a, 1) == 1.0
    b = np.array([[0, 0], [1, 1]])
    assert dsc(a, b, 1) == 0.0
    assert dsc(np.zeros((3, 3)), np.zeros((3, 3)), 1) == 1.0  # empty-empty


def test_dsc_counting_example():
    p = np.zeros((3, 3), int)
    p[0, 0] = p[0, 1] = 1
    g = np.zeros((3, 3), int)
    g[0, 1] = g[0, 2] = 1
    assert dsc(p, g, 1) == 0.5


def test_dsc_symmetry_and_permutation(rng):
    for _ in range(20):
        a = rng.integers(0, 3, (4, 4))
        b = rng.integers(0, 3, (4, 4))
        assert dsc(a, b, 1) == dsc(b, a, 1)
        perm = rng.permutation(16)
        af, bf = a.reshape(-1)[perm].reshape(4, 4), b.reshape(-1)[perm].reshape(4, 4)
        assert dsc(a, b, 2) == dsc(af, bf, 2)


def test_mse_examples():
    assert mse_dataset([np.array([1.0, 0.0])], [np.array([0.0, 1.0])]) == 1.0
    assert mse_dataset([np.full((2, 4), 0.5)], [np.eye(2)[[0, 1, 0, 1]].T]) == 0.25
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mse_dataset([p], [p]) == 0.0


def test_mse_errors():
    with pytest.raises(EmptyDataset):
        mse_dataset([], [])
    with pytest.raises(ShapeMismatch):
        mse_dataset([np.zeros(3)], [np.zeros(4)])


def test_surface_trivial_cases():
    single = np.zeros((5, 5), int)
    single[2, 2] = 1
    assert len(extract_surface(single == 1)) == 1
    solid = np.zeros((5, 5), int)
    solid[1:4, 1:4] = 1
    assert len(extract_surface(solid == 1)) == 8  # 3x3 square: all perimeter
    full = np.ones((4, 4), int)
    pts = extract_surface(full == 1).points
    border = {(i, j) for i in range(4) for j in range(4) if i in (0, 3) or j in (0, 3)}
    assert {tuple(p) for p in pts} == border


def test_surface_raster_order(rng):
    mask = rng.integers(0, 2, (5, 5)).astype(bool)
    pts = extract_surface(mask).points
    flat = [int(p[0]) * 5 + int(p[1]) for p in pts]
    assert flat == sorted(flat)


def test_surface_distance_examples():
    a = np.zeros((3, 3), int)
    a[0, 0] = 1
    b = np.zeros((3, 3), int)
    b[0, 1] = 1
    assert mean_surface_distance(b, a, 1) == 1.0
    assert mean_surface_distance(a, a, 1) == 0.0
    g = np.zeros((3, 3), int)
    g[0, 0] = g[0, 1] = 1
    p = np.zeros((3, 3), int)
    p[0, 0] = 1
    assert mean_surface_distance(p, g, 1) == 0.5


def test_surface_distance_empty_cases():
    g = np.zeros((3, 3), int)
    g[1, 1] = 1
    assert math.isinf(mean_surface_distance(np.zeros((3, 3), int), g, 1))
    with pytest.raises(EmptyGTSurface):
        mean_surface_distance(g, np.zeros((3, 3), int), 1)


def test_nsd_examples():
    g = np.zeros((3, 3), int)
    g[0, 0] = g[0, 1] = 1
    assert nsd_tolerance(g, g, 1, 1.0) == 1.0
    far_a = np.zeros((5, 5), int)
    far_a[0, 0] = 1
    far_b = np.zeros((5, 5), int)
    far_b[0, 2] = 1
    assert nsd_tolerance(far_b, far_a, 1, 1.0) == 0.0
    assert nsd_tolerance(far_b, far_a, 1, 1e9) == 1.0


def test_nsd_monotone_in_tau(rng):
    for _ in range(10):
        a = rng.integers(0, 2, (6, 6))
        b = rng.integers(0, 2, (6, 6))
        if not (a == 1).any() or not (b == 1).any():
            continue
        vals = [nsd_tolerance(b, a, 1, tau) for tau in (0.5, 1.0, 2.0, 4.0)]
        assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


def test_anisotropic_spacing():
    a = np.zeros((3, 3), int)
    a[0, 0] = 1
    b = np.zeros((3, 3), int)
    b[1, 0] = 1  # one step along axis 0
    assert mean_surface_distance(b, a, 1, spacing=(2.0, 1.0)) == 2.0
    assert mean_surface_distance(b, a, 1, spacing=(0.5, 1.0)) == 0.5


def test_brute_force_equivalence_exact(rng):
    """1000 random 3x3 mask pairs: dsc and surface metrics match loop oracles
    exactly (same floats, not just within tolerance)."""
    checked_sd = 0
    for _ in range(1000):
        p = (rng.integers(0, 512) >> np.arange(9) & 1).reshape(3, 3).astype(int)
        g = (rng.integers(0, 512) >> np.arange(9) & 1).reshape(3, 3).astype(int)
        assert dsc(p, g, 1) == naive_dsc(p, g, 1)
        surf = extract_surface(g == 1)
        assert [tuple(x) for x in surf.points] == naive_surface(g == 1)
        if not (g == 1).any():
            with pytest.raises(EmptyGTSurface):
                mean_surface_distance(p, g, 1)
            continue
        got = mean_surface_distance(p, g, 1)
        want = naive_surface_distance(p, g, 1)
        assert got == want or (math.isinf(got) and math.isinf(want))
        assert nsd_tolerance(p, g, 1, 1.0) == naive_nsd(p, g, 1, 1.0)
        checked_sd += 1
    assert checked_sd > 500


def test_mse_matches_naive(rng):
    preds = [rng.uniform(0, 1, (3, 4, 4)) for _ in range(5)]
    gts = [rng.integers(0, 2, (3, 4, 4)).astype(float) for _ in range(5)]
    assert mse_dataset(preds, gts) == pytest.approx(naive_mse(preds, gts), abs=1e-12)


def test_evaluate_dataset_rows_csv(tmp_path, rng):
    from mambaseg.metrics import evaluate_dataset

    n_classes = 3
    gts = [rng.integers(0, n_classes, (8, 8)) for _ in range(3)]
    preds = [g.copy() for g in gts]
    preds[0][0, 0] = (preds[0][0, 0] + 1) % n_classes
    onehots = []
    probs = []
    for g in gts:
        oh = np.zeros((n_classes, 8, 8))
        for k in range(n_classes):
            oh[k][g == k] = 1.0
        onehots.append(oh)
    for p in preds:
        oh = np.zeros((n_classes, 8, 8))
        for k in range(n_classes):
            oh[k][p == k] = 1.0
        probs.append(oh)
    report = evaluate_dataset(preds, probs, gts, onehots, n_classes)
    assert len(report.rows) == 3 * (n_classes - 1)
    path = tmp_path / "rows.csv"
    report.write_rows_csv(str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample,class,dsc,surface_distance,nsd_tau1"
    assert len(lines) == 1 + len(report.rows)
    assert report.mean_dsc < 1.0  # one voxel was flipped
