"""Classical multimodal similarity baselines: MIND descriptors and Parzen NMI."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .selfsim import DIRECT, self_similarity
from .volume import DisplacementField, Volume

__all__ = ["mind", "mind_tensor", "mind_ssd", "mind_ssd_descriptors", "nmi", "nmi_values",
           "joint_histogram", "bspline3"]


def _array(v) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def _disp(phi, dims) -> Tensor:
    if phi is None:
        return Tensor(np.zeros((3,) + tuple(dims)))
    if isinstance(phi, DisplacementField):
        return Tensor(phi.data)
    return ad.as_tensor(phi)


def mind_tensor(v, eps: float = 1e-6) -> Tensor:
    """MIND over the direct 6-neighbourhood with 3^3 patches, as a (12, H, W, D) tensor."""
    x = ad.as_tensor(v.data if isinstance(v, Volume) else v)
    if x.ndim == 3:
        x = ad.reshape(x, (1,) + x.shape)
    out = self_similarity(x, DIRECT, patch_radius=1, eps=eps)
    return ad.transpose(ad.reshape(out, out.shape[1:]), (3, 0, 1, 2))


def mind(v, eps: float = 1e-6, channels_last: bool = True) -> np.ndarray:
    """MIND descriptor field; (H, W, D, 12) by default."""
    with ad.no_grad():
        d = mind_tensor(np.asarray(_array(v), dtype=np.float64), eps).data
    return np.moveaxis(d, 0, -1) if channels_last else d


def mind_ssd_descriptors(mind_f, mind_m, phi) -> Tensor:
    """Mean squared difference between fixed descriptors and warped moving ones.

    Descriptors are channels-first (12, H, W, D); ``phi`` may require grad.
    """
    mind_f, mind_m = ad.as_tensor(mind_f), ad.as_tensor(mind_m)
    if mind_f.shape != mind_m.shape:
        raise ValueError(f"descriptor shapes differ: {mind_f.shape} vs {mind_m.shape}")
    warped = ad.grid_sample(mind_m, _disp(phi, mind_m.shape[1:]))
    diff = mind_f - warped
    return ad.mean(diff * diff)


def mind_ssd(F, M, phi=None) -> Tensor:
    f, m = _array(F), _array(M)
    if f.shape != m.shape:
        raise ValueError(f"volume dims differ: {f.shape} vs {m.shape}")
    return mind_ssd_descriptors(mind(f, channels_last=False), mind(m, channels_last=False), phi)


# --------------------------------------------------------------------------
# normalised mutual information


def bspline3(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return np.where(a < 1.0, 2.0 / 3.0 - a * a + 0.5 * a ** 3,
                    np.where(a < 2.0, (2.0 - a) ** 3 / 6.0, 0.0))


def _bspline3_deriv(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return np.where(a < 1.0, -2.0 * t + 1.5 * t * a,
                    np.where(a < 2.0, -0.5 * (2.0 - a) ** 2 * np.sign(t), 0.0))


def _bin_layout(bins: int, sigma: float) -> tuple[int, float]:
    pad = max(int(np.ceil(2.0 * sigma)) - 1, 0)
    span = bins - 1 - 2 * pad
    if span <= 0:
        raise ValueError(f"{bins} bins are too few for Parzen width {sigma}")
    return pad, float(span)


def _parzen_weights(values: np.ndarray, bins: int, sigma: float, deriv: bool = False):
    """Compact per-sample bin weights: indices (N, K) and weights (N, K) summing to 1.

    Intensities in [0, 1] map linearly onto bin positions with enough
    padding that the cubic B-spline window never leaves the histogram;
    K covers the window support, so only those bins are stored.
    """
    pad, span = _bin_layout(bins, sigma)
    v = np.clip(values, 0.0, 1.0)
    pos = pad + v * span
    width = int(np.ceil(4.0 * sigma)) + 1
    first = np.floor(pos - 2.0 * sigma).astype(np.int64) + 1
    idx = first[:, None] + np.arange(width)[None, :]
    t = (idx - pos[:, None]) / sigma
    raw = bspline3(t)
    np.clip(idx, 0, bins - 1, out=idx)
    total = raw.sum(axis=1, keepdims=True)
    w = raw / total
    if not deriv:
        return idx, w
    # d raw / d pos = -B'(t) / sigma; chain through the normalisation
    draw = -_bspline3_deriv(t) / sigma
    dtotal = draw.sum(axis=1, keepdims=True)
    dw = (draw * total - raw * dtotal) / (total * total)
    inside = ((values > 0.0) & (values < 1.0)).astype(np.float64)
    return idx, w, dw * (span * inside)[:, None]


def _joint(idx_f, wf, idx_m, wm, bins: int) -> np.ndarray:
    cells = (idx_f[:, :, None] * bins + idx_m[:, None, :]).ravel()
    weights = (wf[:, :, None] * wm[:, None, :]).ravel()
    return np.bincount(cells, weights, minlength=bins * bins).reshape(bins, bins)


def joint_histogram(f: np.ndarray, m: np.ndarray, bins: int = 32, sigma: float = 1.0) -> np.ndarray:
    """Parzen joint histogram (bins, bins); total weight equals the sample count."""
    fi, wf = _parzen_weights(np.ravel(f).astype(np.float64), bins, sigma)
    mi, wm = _parzen_weights(np.ravel(m).astype(np.float64), bins, sigma)
    return _joint(fi, wf, mi, wm, bins)


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def nmi_values(f, m, bins: int = 32, sigma: float = 1.0) -> Tensor:
    """Differentiable ``(H(F) + H(M)) / H(F, M)`` with respect to ``m``.

    ``f`` is a fixed array; ``m`` may be a tensor of the same shape.
    """
    if sigma < 0.5:
        raise ValueError("Parzen width must be >= 0.5 bins")
    f = np.asarray(_array(f), dtype=np.float64)
    m = ad.as_tensor(m)
    if f.shape != m.shape:
        raise ValueError(f"image shapes differ: {f.shape} vs {m.shape}")
    if np.ptp(f) == 0 or np.ptp(m.data) == 0:
        raise ValueError("NMI is undefined for a constant image (zero marginal entropy)")
    fv = f.ravel()
    mv = m.data.ravel().astype(np.float64)
    n = fv.size
    fi, wf = _parzen_weights(fv, bins, sigma)
    mi, wm = _parzen_weights(mv, bins, sigma)
    p = _joint(fi, wf, mi, wm, bins) / n
    pf, pm = p.sum(axis=1), p.sum(axis=0)
    hf, hm, hj = _entropy(pf), _entropy(pm), _entropy(p)
    if hj <= 0:
        raise ValueError("joint entropy is zero")
    value = (hf + hm) / hj

    def backward(g):
        tiny = 1e-300
        d_hj = -(np.log(np.maximum(p, tiny)) + 1.0)
        d_hf = -(np.log(np.maximum(pf, tiny)) + 1.0)[:, None]
        d_hm = -(np.log(np.maximum(pm, tiny)) + 1.0)[None, :]
        d_p = ((d_hf + d_hm) * hj - (hf + hm) * d_hj) / (hj * hj)
        _, _, dwm = _parzen_weights(mv, bins, sigma, deriv=True)
        d_wm = np.einsum("nk,nkl->nl", wf, d_p[fi[:, :, None], mi[:, None, :]]) / n
        d_m = np.sum(d_wm * dwm, axis=1)
        return (float(g) * d_m.reshape(m.shape).astype(m.dtype),)

    return Tensor._make(np.asarray(value, dtype=np.float64), (m,), backward)


def nmi(F, M, phi=None, bins: int = 32, sigma: float = 1.0) -> Tensor:
    """NMI between ``F`` and ``M`` warped by ``phi`` (differentiable in ``phi``)."""
    f, m = _array(F), _array(M)
    if f.shape != m.shape:
        raise ValueError(f"volume dims differ: {f.shape} vs {m.shape}")
    if phi is None:
        return nmi_values(f, np.asarray(m, dtype=np.float64), bins, sigma)
    warped = ad.grid_sample(Tensor(np.asarray(m, dtype=np.float64)), _disp(phi, m.shape))
    return nmi_values(f, warped, bins, sigma)
