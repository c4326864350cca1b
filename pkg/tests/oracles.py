"""Literal-definition reference implementations shared by the unit and acceptance suites."""
import itertools

import numpy as np

from dsir import autodiff as ad
from dsir.autodiff import Tensor


def rand(shape, seed=0, requires_grad=True):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=requires_grad)


def scalarize(fn, seed=99):
    """Contract the op's output with a fixed random weight so every entry matters."""
    cache = {}

    def loss(*args):
        out = fn(*args)
        if out.shape not in cache:
            cache[out.shape] = np.random.default_rng(seed).standard_normal(out.shape)
        return ad.tsum(out * cache[out.shape])

    return loss


def clamp_get(h, idx):
    return h[tuple(min(max(i, 0), n - 1) for i, n in zip(idx, h.shape))]


def brute_dns(h, layout, eps=1e-6):
    """Per-definition DNS: one channel per unordered sqrt(2)-pair of the six offsets."""
    C, H, W, D = h.shape
    s = layout.scale
    offsets = [tuple(s * sign * (k == ax) for k in range(3)) for ax in range(3) for sign in (1, -1)]
    pairs = [(a, b) for a, b in itertools.combinations(offsets, 2)
             if sum((p - q) ** 2 for p, q in zip(a, b)) == 2 * s * s]
    assert len(pairs) == 12
    out = np.zeros((C, H, W, D, 12))
    order = {frozenset(p): k for k, p in enumerate(layout.pairs)}
    for c in range(C):
        for x in np.ndindex(H, W, D):
            d = []
            for a, b in pairs:
                ya = tuple(xi + ai for xi, ai in zip(x, a))
                yb = tuple(xi + bi for xi, bi in zip(x, b))
                d.append((clamp_get(h[c], ya) - clamp_get(h[c], yb)) ** 2)
            var = max(eps, sum(d) / 12.0)
            for (a, b), dk in zip(pairs, d):
                out[(c,) + x + (order[frozenset((a, b))],)] = np.exp(-dk / var)
    return out


def brute_mind(v, eps=1e-6):
    """Literal MIND: 3^3 patch SSD between the members of each sqrt(2)-pair, replicated borders."""
    H, W, D = v.shape
    offsets = [tuple(sign * (k == ax) for k in range(3)) for ax in range(3) for sign in (-1, 1)]
    pairs = [(a, b) for a, b in itertools.combinations(offsets, 2)
             if sum((p - q) ** 2 for p, q in zip(a, b)) == 2]

    def at(idx):
        return v[tuple(min(max(i, 0), n - 1) for i, n in zip(idx, v.shape))]

    out = np.zeros((H, W, D, 12))
    for x in np.ndindex(H, W, D):
        dist = []
        for a, b in pairs:
            s = 0.0
            for p in itertools.product((-1, 0, 1), repeat=3):
                ya = tuple(xi + ai + pi for xi, ai, pi in zip(x, a, p))
                yb = tuple(xi + bi + pi for xi, bi, pi in zip(x, b, p))
                s += (at(ya) - at(yb)) ** 2
            dist.append(s)
        var = max(eps, np.mean(dist))
        out[x] = np.exp(-np.array(dist) / var)
    return out
