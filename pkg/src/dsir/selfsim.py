"""Six-neighbourhood self-similarity descriptors.

For every voxel the six axis neighbours ``x +/- s*e_i`` are compared in the
twelve unordered pairs lying sqrt(2)*s apart (opposite neighbours are
skipped). A pair distance is the squared difference of the two neighbours,
summed over a (2r+1)^3 patch when ``patch_radius`` r > 0. Each distance is
divided by the mean of the twelve, floored at ``eps``, and exponentiated.
Out-of-domain neighbours replicate the border.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor, as_tensor

__all__ = ["NeighbourhoodLayout", "DIRECT", "DILATED", "self_similarity"]


@dataclass(frozen=True)
class NeighbourhoodLayout:
    kind: str
    scale: int

    def __post_init__(self):
        if self.kind not in ("direct", "dilated"):
            raise ValueError(f"layout kind must be 'direct' or 'dilated', got {self.kind!r}")
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"layout scale must be a positive integer, got {self.scale}")

    @property
    def offsets(self) -> tuple[tuple[int, int, int], ...]:
        out = []
        for ax in range(3):
            for sign in (-1, 1):
                o = [0, 0, 0]
                o[ax] = sign * self.scale
                out.append(tuple(o))
        return tuple(out)

    @property
    def pairs(self) -> tuple[tuple[tuple[int, int, int], tuple[int, int, int]], ...]:
        target = 2 * self.scale ** 2
        return tuple(
            (a, b) for a, b in itertools.combinations(self.offsets, 2)
            if sum((p - q) ** 2 for p, q in zip(a, b)) == target
        )

    @classmethod
    def direct(cls) -> "NeighbourhoodLayout":
        return cls("direct", 1)

    @classmethod
    def dilated(cls, dilation: int = 2) -> "NeighbourhoodLayout":
        return cls("dilated", dilation)


DIRECT = NeighbourhoodLayout.direct()
DILATED = NeighbourhoodLayout.dilated()


def _pad_edge(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0),) + ((pad, pad),) * 3, mode="edge")


def _unpad_edge_adjoint(gp: np.ndarray, pad: int) -> np.ndarray:
    g = gp
    for ax in (1, 2, 3):
        g = np.moveaxis(g, ax, 0)
        core = g[pad:-pad].copy()
        core[0] += g[:pad].sum(axis=0)
        core[-1] += g[-pad:].sum(axis=0)
        g = np.moveaxis(core, 0, ax)
    return g


def _box_sum(x: np.ndarray, r: int) -> np.ndarray:
    """Valid (2r+1)^3 box sum over the last three axes."""
    if r == 0:
        return x
    for ax in (1, 2, 3):
        n = x.shape[ax] - 2 * r
        acc = np.take(x, range(0, n), axis=ax).copy()
        for k in range(1, 2 * r + 1):
            acc += np.take(x, range(k, k + n), axis=ax)
        x = acc
    return x


def _box_sum_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return g
    for ax in (1, 2, 3):
        n = g.shape[ax]
        shape = list(g.shape)
        shape[ax] = n + 2 * r
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, ax, 0)
        gm = np.moveaxis(g, ax, 0)
        for k in range(2 * r + 1):
            moved[k:k + n] += gm
        g = out
    return g


def self_similarity(h, layout: NeighbourhoodLayout, patch_radius: int = 0, eps: float = 1e-6) -> Tensor:
    """Self-similarity of a (C, H, W, D) map; returns (C, H, W, D, 12)."""
    h = as_tensor(h)
    if h.ndim != 4:
        raise ValueError(f"expected (C, H, W, D), got {h.shape}")
    if not np.all(np.isfinite(h.data)):
        raise ValueError("self-similarity input contains non-finite values")
    r = int(patch_radius)
    pad = layout.scale + r
    dims = h.shape[1:]
    hp = _pad_edge(h.data, pad)
    span = tuple(n + 2 * r for n in dims)

    def region(o):
        return (slice(None),) + tuple(slice(pad - r + o[k], pad - r + o[k] + span[k]) for k in range(3))

    pairs = layout.pairs
    diffs = []
    dist = np.empty(h.shape + (len(pairs),), dtype=h.dtype)
    for p, (a, b) in enumerate(pairs):
        u = hp[region(a)] - hp[region(b)]
        diffs.append(u)
        dist[..., p] = _box_sum(u * u, r)
    m = dist.mean(axis=-1)
    active = m > eps
    s2 = np.where(active, m, eps).astype(h.dtype)
    out = np.exp(-dist / s2[..., None])

    def backward(g):
        gs = g * out
        g_dist = -gs / s2[..., None]
        g_s2 = np.sum(gs * dist, axis=-1) / (s2 * s2)
        g_dist += (g_s2 * active / len(pairs))[..., None]
        ghp = np.zeros_like(hp)
        for p, (a, b) in enumerate(pairs):
            gu = 2.0 * diffs[p] * _box_sum_adjoint(np.ascontiguousarray(g_dist[..., p]), r)
            ghp[region(a)] += gu
            ghp[region(b)] -= gu
        return (_unpad_edge_adjoint(ghp, pad),)

    return Tensor._make(out, (h,), backward)
