from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, inputs, index: int, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central finite differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``.

    ``entries`` restricts the probe to those flat indices; the rest stay zero.
    """
    x = inputs[index].data
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(*inputs).data)
        flat[i] = orig - h
        fm = float(fn(*inputs).data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise error, relative to the overall gradient scale."""
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(fn, inputs, h: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Largest absolute gradient error over every input that requires grad,
    relative to the largest gradient magnitude over those inputs.

    With ``max_entries`` only that many randomly chosen entries per input are
    probed and compared.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    rng = np.random.default_rng(seed)
    err, scale = 0.0, 1e-12
    for k, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        entries = None
        if max_entries is not None and t.data.size > max_entries:
            entries = np.sort(rng.choice(t.data.size, size=max_entries, replace=False))
        numeric = numerical_grad(fn, inputs, k, h, entries)
        if entries is not None:
            analytic, numeric = analytic.reshape(-1)[entries], numeric.reshape(-1)[entries]
        err = max(err, float(np.max(np.abs(analytic - numeric))))
        scale = max(scale, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return err / scale
