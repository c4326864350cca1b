"""Network and geometry operators on channels-first 3D tensors (C, H, W, D)."""
from __future__ import annotations

import numpy as np

from .. import volume as vol
from .tensor import Tensor, as_tensor

__all__ = [
    "conv3d",
    "blurpool3d",
    "trilinear_resize",
    "linear",
    "grid_sample",
    "jacobian",
    "blur_matrix",
]


def _frame(dims, pad):
    """Flat-offset bookkeeping for a zero-padded grid.

    In the flattened padded array a spatial shift is a constant offset, so
    every kernel tap reads one contiguous slice. Outputs are computed on a
    frame of ``length`` positions starting at the padded origin; positions
    that wrap around a row are discarded.
    """
    P = tuple(n + 2 * pad for n in dims)
    strides = (P[1] * P[2], P[2], 1)
    length = sum((n - 1) * s for n, s in zip(dims, strides)) + 1
    size = 2 * pad + 1
    offsets = [a * strides[0] + b * strides[1] + c
               for a in range(size) for b in range(size) for c in range(size)]
    return P, offsets, length


def _crop_frame(frame, P, dims):
    c = frame.shape[0]
    full = np.zeros((c, P[0] * P[1] * P[2]), dtype=frame.dtype)
    full[:, :frame.shape[1]] = frame
    return full.reshape((c,) + P)[:, :dims[0], :dims[1], :dims[2]]


def _to_frame(g, P, length):
    c = g.shape[0]
    full = np.zeros((c,) + P, dtype=g.dtype)
    full[:, :g.shape[1], :g.shape[2], :g.shape[3]] = g
    return full.reshape(c, -1)[:, :length]


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-size 3D cross-correlation with zero padding.

    x: (C_in, H, W, D); kernel: (C_out, C_in, k, k, k) with k in {1, 3};
    bias: (C_out,).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4:
        raise ValueError(f"conv3d input must be (C, H, W, D), got {x.shape}")
    cout, cin, k1, k2, k3 = kernel.shape
    if not k1 == k2 == k3 or k1 not in (1, 3):
        raise ValueError(f"kernel must be 1^3 or 3^3, got {kernel.shape[2:]}")
    if cin != x.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[0]}, kernel expects {cin}")
    dims = x.shape[1:]
    pad = k1 // 2
    taps = k1 ** 3
    # (taps, C_out, C_in), tap-major in (a, b, c) order
    wt = np.ascontiguousarray(np.moveaxis(kernel.data.reshape(cout, cin, taps), 2, 0))

    if pad == 0:
        xf = x.data.reshape(cin, -1)
        out = wt[0] @ xf
    else:
        P, offsets, length = _frame(dims, pad)
        xf = np.pad(x.data, ((0, 0),) + ((pad, pad),) * 3).reshape(cin, -1)
        z = (wt.reshape(taps * cout, cin) @ xf).reshape(taps, cout, -1)
        frame = z[0, :, offsets[0]:offsets[0] + length].copy()
        for k in range(1, taps):
            frame += z[k, :, offsets[k]:offsets[k] + length]
        del z
        out = _crop_frame(frame, P, dims).reshape(cout, -1)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((cout,) + dims)

    def backward(g):
        gx = gk = gb = None
        if pad == 0:
            g2 = g.reshape(cout, -1)
            if kernel.requires_grad:
                gk = (g2 @ xf.T).reshape(kernel.shape)
            if x.requires_grad:
                gx = (wt[0].T @ g2).reshape(x.shape)
        else:
            gf = _to_frame(g, P, length)
            if kernel.requires_grad:
                gw = np.empty_like(wt)
                for k, off in enumerate(offsets):
                    gw[k] = gf @ xf[:, off:off + length].T
                gk = np.moveaxis(gw, 0, 2).reshape(kernel.shape)
            if x.requires_grad:
                u = (wt.transpose(0, 2, 1).reshape(taps * cin, cout) @ gf).reshape(taps, cin, -1)
                gxp = np.zeros_like(xf)
                for k, off in enumerate(offsets):
                    gxp[:, off:off + length] += u[k]
                del u
                gx = gxp.reshape((cin,) + P)[:, pad:-pad, pad:-pad, pad:-pad].copy()
        if bias is not None and bias.requires_grad:
            gb = g.reshape(cout, -1).sum(axis=1)
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, as_tensor(bias))
    return Tensor._make(out, parents, backward)


def _apply_axis_matrices(x: Tensor, mats) -> Tensor:
    """Apply one (n_out, n_in) matrix to each of the last three axes."""
    lead = x.ndim - 3
    out = x.data
    for k, A in enumerate(mats):
        out = vol.apply_axis_matrix(out, A, lead + k)

    def backward(g):
        for k, A in enumerate(mats):
            g = vol.apply_axis_matrix(g, A.T, lead + k)
        return (g,)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward)


def blur_matrix(n: int) -> np.ndarray:
    """Binomial (1, 2, 1)/4 blur with edge replication followed by stride-2 sampling."""
    B = np.zeros((n, n))
    for i in range(n):
        for off, w in ((-1, 0.25), (0, 0.5), (1, 0.25)):
            B[i, min(max(i + off, 0), n - 1)] += w
    return B[::2]


def blurpool3d(x: Tensor) -> Tensor:
    """Anti-aliased 2x downsampling; output extents are ceil(n / 2)."""
    if min(x.shape[-3:]) < 2:
        raise ValueError(f"blurpool3d needs spatial extents >= 2, got {x.shape[-3:]}")
    return _apply_axis_matrices(x, [blur_matrix(n) for n in x.shape[-3:]])


def trilinear_resize(x: Tensor, new_dims) -> Tensor:
    new_dims = tuple(int(n) for n in new_dims)
    if len(new_dims) != 3 or min(new_dims) < 1:
        raise ValueError(f"new dims must be three positive integers, got {new_dims}")
    mats = [vol.interp_matrix(n, m) for n, m in zip(x.shape[-3:], new_dims)]
    return _apply_axis_matrices(x, mats)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map along the trailing axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin = weight.shape
    if x.shape[-1] != cin:
        raise ValueError(f"linear: trailing axis {x.shape[-1]} does not match weight {weight.shape}")
    flat = x.data.reshape(-1, cin)
    out = flat @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (cout,))

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ flat if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return Tensor._make(out, parents, backward)


def grid_sample(field: Tensor, disp: Tensor) -> Tensor:
    """Warp a (C, H, W, D) or (H, W, D) field: ``out(x) = field(x + disp(x))``.

    ``disp`` is a (3, H, W, D) displacement in voxels; sampling is trilinear
    with border clamping. Differentiable in both arguments.
    """
    field, disp = as_tensor(field), as_tensor(disp)
    dims = disp.shape[1:]
    if disp.ndim != 4 or disp.shape[0] != 3:
        raise ValueError(f"displacement must be (3, H, W, D), got {disp.shape}")
    if field.shape[-3:] != dims:
        raise ValueError(f"field dims {field.shape[-3:]} do not match displacement dims {dims}")
    scalar = field.ndim == 3
    flat = field.data.reshape(1 if scalar else field.shape[0], -1)
    coords = vol.identity_grid(dims) + disp.data
    need_d = disp.requires_grad
    if need_d:
        S, dS = vol.sampling_matrices(coords, dims, derivatives=True)
    else:
        S, dS = vol.sampling_matrices(coords, dims), None
    out = np.asarray((S @ flat.T).T, dtype=field.dtype).reshape(field.shape)

    def backward(g):
        g2 = g.reshape(flat.shape)
        gf = gd = None
        if field.requires_grad:
            gf = np.asarray((S.T @ g2.T).T, dtype=field.dtype).reshape(field.shape)
        if need_d:
            gd = np.empty(disp.shape, dtype=disp.dtype)
            for ax in range(3):
                deriv = (dS[ax] @ flat.T).T
                gd[ax] = np.sum(g2 * deriv, axis=0).reshape(dims)
        return gf, gd

    return Tensor._make(out, (field, disp), backward)


def jacobian(disp: Tensor) -> Tensor:
    """Finite-difference Jacobian (3, 3, H, W, D) of a (3, H, W, D) field."""
    disp = as_tensor(disp)
    out = vol.spatial_gradient(disp.data)

    def backward(g):
        gd = np.zeros_like(disp.data)
        for j in range(3):
            gd += vol.gradient_adjoint(g[:, j], axis=1 + j)
        return (gd,)

    return Tensor._make(out, (disp,), backward)
