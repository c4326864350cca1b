"""Scalar and vector 3D containers plus the geometric kernels shared by the
rest of the package (trilinear sampling, warping, smoothing, resampling and
finite-difference gradients).

Displacements are stored in voxel units along each array axis. Sampling
outside the grid replicates the border voxel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

__all__ = [
    "Volume",
    "DisplacementField",
    "BinaryMask",
    "LabelVolume",
    "trilinear_sample",
    "warp",
    "warp_array",
    "warp_labels",
    "gaussian_smooth",
    "gaussian_kernel1d",
    "resample_trilinear",
    "resize_array",
    "spatial_gradient",
    "gradient_adjoint",
    "interp_matrix",
    "apply_axis_matrix",
    "sampling_matrices",
    "identity_grid",
]


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims


@dataclass(eq=False)
class Volume:
    """Scalar image on a regular grid.

    ``data`` has shape (H, W, D); ``spacing`` is in mm per voxel.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"Volume data must be 3D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("Volume data contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive reals, got {spacing}")
        self.data = data
        self.spacing = spacing

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing, dict(self.meta))


@dataclass(eq=False)
class DisplacementField:
    """Per-voxel displacement in voxel units, stored as (3, H, W, D)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"displacement data must have shape (3, H, W, D), got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("displacement contains non-finite values")
        self.data = data

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    @classmethod
    def zeros(cls, dims, dtype=np.float64) -> "DisplacementField":
        return cls(np.zeros((3, *_check_dims(dims)), dtype=dtype))


@dataclass(eq=False)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {data.shape}")
        self.data = data.astype(bool)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(eq=False)
class LabelVolume:
    """Integer label map with a name for every label value."""

    data: np.ndarray
    legend: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {data.shape}")
        self.data = data.astype(np.int16)
        if self.legend:
            unknown = set(np.unique(self.data).tolist()) - set(self.legend)
            if unknown:
                raise ValueError(f"labels {sorted(unknown)} missing from legend")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def mask(self, label: int) -> BinaryMask:
        return BinaryMask(self.data == label)


# --------------------------------------------------------------------------
# point and grid sampling


def trilinear_sample(v: Volume, p) -> float:
    """Interpolate ``v`` at a continuous voxel coordinate, clamping to the border."""
    arr = v.data if isinstance(v, Volume) else np.asarray(v)
    lo, frac = [], []
    for x, n in zip(p, arr.shape):
        x = min(max(float(x), 0.0), n - 1.0)
        i = min(int(math.floor(x)), max(n - 2, 0))
        lo.append(i)
        frac.append(x - i)
    acc = 0.0
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                w = ((frac[0] if a else 1.0 - frac[0])
                     * (frac[1] if b else 1.0 - frac[1])
                     * (frac[2] if c else 1.0 - frac[2]))
                if w == 0.0:
                    continue
                i = min(lo[0] + a, arr.shape[0] - 1)
                j = min(lo[1] + b, arr.shape[1] - 1)
                k = min(lo[2] + c, arr.shape[2] - 1)
                acc += w * float(arr[i, j, k])
    return acc


def identity_grid(dims, dtype=np.float64) -> np.ndarray:
    """Voxel coordinates of every grid point, shape (3, H, W, D)."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=dtype) for n in dims], indexing="ij"))


def sampling_matrices(coords: np.ndarray, dims, derivatives: bool = False):
    """Sparse trilinear interpolation operator for arbitrary sample points.

    Parameters
    ----------
    coords : ndarray, shape (3, ...)
        Continuous voxel coordinates of the sample points.
    dims : tuple of int
        Grid being sampled.
    derivatives : bool
        Also return the operators giving d(sample)/d(coord) along each axis.

    Returns
    -------
    S : csr_matrix, shape (n_points, prod(dims))
        ``S @ f.ravel()`` interpolates ``f``.
    dS : list of three csr_matrix, only when ``derivatives`` is set.
        Rows belonging to clamped coordinates are zero along that axis.
    """
    dims = _check_dims(dims)
    pts = coords.reshape(3, -1).astype(np.float64, copy=False)
    npts = pts.shape[1]
    lo, fr, inside = [], [], []
    for ax in range(3):
        n = dims[ax]
        x = pts[ax]
        inside.append((x >= 0.0) & (x <= n - 1.0))
        xc = np.clip(x, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(xc), max(n - 2, 0)).astype(np.int64)
        lo.append(i0)
        fr.append(xc - i0)
    strides = (dims[1] * dims[2], dims[2], 1)
    rows = np.repeat(np.arange(npts), 8)
    cols = np.empty((npts, 8), dtype=np.int64)
    w = np.empty((npts, 8))
    dw = [np.empty((npts, 8)) for _ in range(3)] if derivatives else None
    corner = 0
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                offs = (a, b, c)
                idx = np.zeros(npts, dtype=np.int64)
                f = []
                for ax in range(3):
                    i = np.minimum(lo[ax] + offs[ax], dims[ax] - 1)
                    idx += i * strides[ax]
                    f.append(fr[ax] if offs[ax] else 1.0 - fr[ax])
                cols[:, corner] = idx
                w[:, corner] = f[0] * f[1] * f[2]
                if derivatives:
                    for ax in range(3):
                        s = 1.0 if offs[ax] else -1.0
                        others = [f[k] for k in range(3) if k != ax]
                        dw[ax][:, corner] = s * others[0] * others[1]
                corner += 1
    n_in = dims[0] * dims[1] * dims[2]
    S = sp.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(npts, n_in))
    if not derivatives:
        return S
    dS = []
    for ax in range(3):
        d = dw[ax] * inside[ax][:, None]
        if dims[ax] == 1:
            d = np.zeros_like(d)
        dS.append(sp.csr_matrix((d.ravel(), (rows, cols.ravel())), shape=(npts, n_in)))
    return S, dS


def warp_array(arr: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Warp a (H, W, D) or (C, H, W, D) array by a voxel displacement (3, H, W, D)."""
    dims = disp.shape[1:]
    if arr.shape[-3:] != tuple(dims):
        raise ValueError(f"array dims {arr.shape[-3:]} do not match field dims {tuple(dims)}")
    S = sampling_matrices(identity_grid(dims) + disp, dims)
    if arr.ndim == 3:
        return (S @ arr.ravel()).reshape(dims).astype(arr.dtype, copy=False)
    flat = arr.reshape(arr.shape[0], -1)
    return (S @ flat.T).T.reshape(arr.shape).astype(arr.dtype, copy=False)


def warp(v: Volume, phi: DisplacementField) -> Volume:
    """``out(x) = v(x + phi(x))`` by trilinear sampling."""
    if v.dims != phi.dims:
        raise ValueError(f"volume dims {v.dims} do not match field dims {phi.dims}")
    if not np.any(phi.data):
        return v.with_data(v.data.copy())
    return v.with_data(warp_array(v.data, phi.data))


def warp_labels(labels: LabelVolume, phi: DisplacementField) -> LabelVolume:
    """Nearest-neighbour warp of a label map."""
    if labels.dims != phi.dims:
        raise ValueError(f"label dims {labels.dims} do not match field dims {phi.dims}")
    coords = identity_grid(labels.dims) + phi.data
    idx = [np.clip(np.rint(coords[ax]), 0, labels.dims[ax] - 1).astype(np.int64) for ax in range(3)]
    return LabelVolume(labels.data[idx[0], idx[1], idx[2]], dict(labels.legend))


# --------------------------------------------------------------------------
# smoothing and resampling


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def gaussian_smooth(v, sigma: float, axes=None):
    """Separable Gaussian smoothing with border replication.

    Accepts a :class:`Volume` or a bare array. For arrays, ``axes`` selects
    the spatial axes (default: the last three).
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if isinstance(v, Volume):
        return v.with_data(gaussian_smooth(v.data, sigma))
    arr = np.asarray(v)
    if sigma == 0:
        return arr.copy()
    if axes is None:
        axes = range(arr.ndim - 3, arr.ndim)
    w = gaussian_kernel1d(sigma)
    out = arr.astype(np.float64)
    for ax in axes:
        out = ndimage.correlate1d(out, w, axis=ax, mode="nearest")
    return out.astype(arr.dtype, copy=False)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) 1D linear interpolation matrix, corners aligned."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    if n_in == n_out:
        return np.eye(n_in)
    A = np.zeros((n_out, n_in))
    if n_in == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    f = pos - lo
    A[np.arange(n_out), lo] += 1.0 - f
    A[np.arange(n_out), lo + 1] += f
    return A


def apply_axis_matrix(x: np.ndarray, A: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``A`` (n_out, n_in) against ``axis`` of ``x``."""
    y = np.tensordot(A.astype(x.dtype, copy=False), x, axes=([1], [axis]))
    return np.moveaxis(y, 0, axis)


def resize_array(x: np.ndarray, new_dims) -> np.ndarray:
    """Trilinear resize of the last three axes."""
    new_dims = _check_dims(new_dims)
    out = x
    for k, n_out in enumerate(new_dims):
        ax = x.ndim - 3 + k
        if out.shape[ax] != n_out:
            out = apply_axis_matrix(out, interp_matrix(out.shape[ax], n_out), ax)
    return out if out is not x else x.copy()


def resample_trilinear(v: Volume, new_dims) -> Volume:
    new_dims = _check_dims(new_dims)
    spacing = tuple(s * (n - 1) / (m - 1) if m > 1 and n > 1 else s
                    for s, n, m in zip(v.spacing, v.dims, new_dims))
    return Volume(resize_array(v.data, new_dims), spacing, dict(v.meta))


# --------------------------------------------------------------------------
# finite differences


def _diff_along(f: np.ndarray, axis: int) -> np.ndarray:
    return np.gradient(f, axis=axis, edge_order=1)


def spatial_gradient(phi) -> np.ndarray:
    """Jacobian of the displacement, ``J[i, j] = d phi_i / d x_j``, shape (3, 3, H, W, D).

    Central differences inside, one-sided differences on the border.
    """
    data = phi.data if isinstance(phi, DisplacementField) else np.asarray(phi)
    if data.ndim != 4 or data.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W, D) field, got {data.shape}")
    if min(data.shape[1:]) < 2:
        raise ValueError(f"spatial gradient needs at least 2 voxels per axis, got {data.shape[1:]}")
    J = np.empty((3, 3) + data.shape[1:], dtype=data.dtype)
    for j in range(3):
        J[:, j] = _diff_along(data, axis=1 + j)
    return J


def gradient_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of ``np.gradient(., axis, edge_order=1)``."""
    g = np.moveaxis(g, axis, 0)
    out = np.zeros_like(g)
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return np.moveaxis(out, 0, axis)
