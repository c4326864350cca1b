"""Random monotone intensity remapping with optional contrast inversion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import Volume

LUT_SIZE = 1024
CURVE_SAMPLES = 4096

__all__ = [
    "AugmentationConfig",
    "BezierTransform",
    "bernstein",
    "sample_transform",
    "bezier_eval",
    "apply",
]


def bernstein(i: int, n: int, t):
    """Bernstein basis polynomial ``C(n, i) t^i (1 - t)^(n - i)``."""
    if not 0 <= i <= n:
        raise ValueError(f"basis index {i} outside [0, {n}]")
    t = np.asarray(t, dtype=np.float64)
    out = math.comb(n, i) * t ** i * (1.0 - t) ** (n - i)
    return float(out) if out.ndim == 0 else out


@dataclass
class AugmentationConfig:
    n: int = 3
    delta: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


def _curve(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    n = len(points) - 1
    basis = np.stack([bernstein(i, n, t) for i in range(n + 1)])
    return basis.T @ points


@dataclass
class BezierTransform:
    """Monotone Bezier intensity curve pinned at (0, 0) and (1, 1).

    The parametric curve is sampled densely and resampled into a lookup table
    over ``LUT_SIZE`` evenly spaced input intensities.
    """

    control_points: np.ndarray
    inverted: bool = False
    seed: int | None = None
    lut: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("control points must be an (n + 1, 2) array with n >= 1")
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("control point coordinates must lie in [0, 1]")
        if not (np.array_equal(pts[0], [0.0, 0.0]) and np.array_equal(pts[-1], [1.0, 1.0])):
            raise ValueError("first and last control points must be (0, 0) and (1, 1)")
        if np.any(np.diff(pts, axis=0) < 0):
            raise ValueError("control points must be sorted ascending in both coordinates")
        self.control_points = pts
        curve = _curve(pts, np.linspace(0.0, 1.0, CURVE_SAMPLES))
        xs = np.maximum.accumulate(curve[:, 0])
        ys = np.maximum.accumulate(curve[:, 1])
        xs[0], ys[0], xs[-1], ys[-1] = 0.0, 0.0, 1.0, 1.0
        self.lut = np.interp(np.linspace(0.0, 1.0, LUT_SIZE), xs, ys)

    @property
    def n(self) -> int:
        return len(self.control_points) - 1

    def to_dict(self) -> dict:
        return {
            "control_points": self.control_points.tolist(),
            "inverted": bool(self.inverted),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BezierTransform":
        return cls(np.asarray(d["control_points"]), bool(d.get("inverted", False)), d.get("seed"))


def sample_transform(cfg: AugmentationConfig, rng=None) -> BezierTransform:
    """Draw a random monotone curve and inversion flag.

    Interior points are uniform in the unit square; x is sorted (ties by y)
    and the y values are sorted independently, which keeps the control
    polygon, and hence the curve, monotone.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    inner = rng.uniform(0.0, 1.0, size=(cfg.n - 1, 2))
    inner = inner[np.lexsort((inner[:, 1], inner[:, 0]))]
    inner[:, 1] = np.sort(inner[:, 1])
    pts = np.vstack([[0.0, 0.0], inner, [1.0, 1.0]])
    p = rng.uniform(0.0, 1.0)
    inverted = cfg.delta > 0.0 and p <= cfg.delta
    return BezierTransform(pts, inverted, cfg.seed)


def bezier_eval(tf: BezierTransform, v):
    """Curve height at curve-abscissa ``v`` (clamped to [0, 1])."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    out = np.interp(v, np.linspace(0.0, 1.0, LUT_SIZE), tf.lut)
    return float(out) if out.ndim == 0 else out


def apply(tf: BezierTransform, I, tol: float = 1e-6):
    """Remap the intensities of a [0, 1]-normalised volume; geometry is untouched."""
    arr = I.data if isinstance(I, Volume) else np.asarray(I)
    if arr.size and (arr.min() < -tol or arr.max() > 1.0 + tol):
        raise ValueError("intensities must be normalised to [0, 1]")
    src = 1.0 - arr if tf.inverted else arr
    out = bezier_eval(tf, src).astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)
    if isinstance(I, Volume):
        return I.with_data(out)
    return out
