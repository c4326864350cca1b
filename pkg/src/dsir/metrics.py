"""Registration evaluation: overlap, surface distance, folding, similarity maps."""
from __future__ import annotations

import csv
import math

import numpy as np
from scipy.spatial import cKDTree

from .volume import BinaryMask, DisplacementField, Volume, identity_grid, sampling_matrices, spatial_gradient

__all__ = [
    "dice",
    "hd95",
    "surface_voxels",
    "jacobian_determinant",
    "jacobian_folding",
    "similarity_heatmap",
    "rotate_volume",
    "rotation_grid",
    "loss_landscape",
    "write_landscape_csv",
]


def _mask(m) -> np.ndarray:
    return m.data if isinstance(m, BinaryMask) else np.asarray(m, dtype=bool)


def dice(a, b) -> float:
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def surface_voxels(m) -> np.ndarray:
    """Mask voxels with at least one background 6-neighbour (outside counts as background)."""
    m = _mask(m)
    p = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    core = (slice(1, -1),) * 3
    for ax in range(3):
        for step in (-1, 1):
            interior &= np.roll(p, step, axis=ax)[core]
    return m & ~interior


def hd95(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """95th percentile (nearest rank) of the symmetric surface distances, in mm."""
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise ValueError("hd95 is undefined for an empty mask")
    sp = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(surface_voxels(a)) * sp
    pb = np.argwhere(surface_voxels(b)) * sp
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    dists = np.sort(np.concatenate([d_ab, d_ba]))
    rank = max(int(math.ceil(0.95 * len(dists))), 1)
    return float(dists[rank - 1])


def jacobian_determinant(phi) -> np.ndarray:
    data = phi.data if isinstance(phi, DisplacementField) else np.asarray(phi)
    J = spatial_gradient(data)
    J = np.moveaxis(J, (0, 1), (-2, -1)) + np.eye(3)
    return np.linalg.det(J)


def jacobian_folding(phi) -> tuple[np.ndarray, float]:
    """Determinant of ``I + grad(u)`` and the percentage of interior voxels with det <= 0."""
    det = jacobian_determinant(phi)
    interior = det[1:-1, 1:-1, 1:-1]
    if interior.size == 0:
        return det, 0.0
    return det, 100.0 * float(np.count_nonzero(interior <= 0.0)) / interior.size


def similarity_heatmap(src, tgt, point) -> Volume:
    """Cosine similarity of ``src`` at ``point`` against every vector of ``tgt``.

    Both fields are channels-last (H, W, D, C).
    """
    src, tgt = np.asarray(src, dtype=np.float64), np.asarray(tgt, dtype=np.float64)
    if src.shape[-1] != tgt.shape[-1]:
        raise ValueError(f"channel counts differ: {src.shape[-1]} vs {tgt.shape[-1]}")
    ref = src[tuple(int(p) for p in point)]
    ref = ref / max(np.linalg.norm(ref), 1e-12)
    norms = np.maximum(np.linalg.norm(tgt, axis=-1), 1e-12)
    sim = np.clip((tgt @ ref) / norms, -1.0, 1.0)
    return Volume(sim)


def rotation_matrix(angle1: float, angle2: float) -> np.ndarray:
    """Rotation by ``angle1`` degrees about array axis 0 then ``angle2`` about axis 1."""
    a, b = math.radians(angle1), math.radians(angle2)
    r0 = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    r1 = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    return r1 @ r0


def rotate_volume(v, angle1: float, angle2: float):
    """Rotate about the grid centre with trilinear resampling and border replication."""
    arr = v.data if isinstance(v, Volume) else np.asarray(v)
    if angle1 == 0 and angle2 == 0:
        out = arr.copy()
    else:
        dims = arr.shape
        centre = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
        grid = identity_grid(dims).reshape(3, -1) - centre[:, None]
        src = rotation_matrix(angle1, angle2).T @ grid + centre[:, None]
        out = (sampling_matrices(src, dims) @ arr.ravel()).reshape(dims).astype(arr.dtype)
    return v.with_data(out) if isinstance(v, Volume) else out


def rotation_grid(start: float = -30.0, stop: float = 30.0, step: float = 5.0) -> list[tuple[float, float]]:
    angles = np.arange(start, stop + step / 2.0, step)
    return [(float(a), float(b)) for a in angles for b in angles]


def loss_landscape(F, M, cost, grid=None) -> list[tuple[float, float, float]]:
    """Evaluate ``cost(F, rotate(M))`` over a grid of rotation angle pairs.

    ``cost`` maps (fixed volume, rotated moving volume) to a float; the
    registration module provides costs for each metric.
    """
    grid = rotation_grid() if grid is None else grid
    rows = []
    for a1, a2 in grid:
        rows.append((a1, a2, float(cost(F, rotate_volume(M, a1, a2)))))
    return rows


def write_landscape_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle1", "angle2", "cost"])
        for a1, a2, c in rows:
            writer.writerow([a1, a2, repr(c)])
