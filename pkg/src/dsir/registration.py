"""Multiresolution instance optimisation of a dense displacement field.

The objective at every pyramid level is ``similarity(phi) + lambda * ||grad phi||^2``
with one of three similarities:

``dns``   negated mean cosine between smoothed network descriptors,
``mind``  mean squared difference of MIND descriptors,
``nmi``   negated Parzen normalised mutual information.

The optimised parameters are the field values expressed in normalised
[-1, 1] grid coordinates (one unit is half the grid extent), so the learning
rates do not depend on the image size. Returned fields are in voxels.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import baselines, masrnet
from .autodiff import Tensor
from .volume import DisplacementField, Volume, gaussian_smooth, resize_array

log = logging.getLogger(__name__)

METRICS = ("dns", "mind", "nmi")

__all__ = [
    "RegistrationConfig",
    "RegistrationResult",
    "level_dims",
    "dsir_pyramid",
    "similarity_dns",
    "regularity",
    "upsample_field",
    "optimize_level",
    "register",
    "descriptor_cost",
    "write_registration_trace",
]


@dataclass
class RegistrationConfig:
    metric: str = "dns"
    levels: int = 3
    scales: tuple = (0.5, 0.75, 1.0)
    learning_rates: tuple = (1e-2, 5e-3, 3e-3)
    iterations: tuple = (100, 80, 50)
    reg_weights: tuple = (0.6, 0.5, 0.4)
    smoothing_sigma: float = 1.0
    checkpoint: str | None = None
    nmi_bins: int = 32
    nmi_sigma: float = 1.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        for name in ("scales", "learning_rates", "iterations", "reg_weights"):
            val = tuple(getattr(self, name))
            if len(val) != self.levels:
                raise ValueError(f"{name} must have {self.levels} entries, got {len(val)}")
            setattr(self, name, val)
        if any(r <= 0 for r in self.learning_rates):
            raise ValueError("learning rates must be positive")
        if any(w < 0 for w in self.reg_weights):
            raise ValueError("smoothness weights must be non-negative")
        if any(i < 0 for i in self.iterations):
            raise ValueError("iteration counts must be non-negative")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing sigma must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("scales", "learning_rates", "iterations", "reg_weights"):
            d[k] = list(d[k])
        return d


@dataclass
class RegistrationResult:
    field: DisplacementField
    trace: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    level_dims: list = field(default_factory=list)


def level_dims(dims, scales) -> list[tuple[int, int, int]]:
    return [tuple(max(2, int(round(s * n))) for n in dims) for s in scales]


def dsir_pyramid(D: np.ndarray, dims_per_level) -> list[np.ndarray]:
    """Trilinear copies of a (C, H, W, D) descriptor field at each level's dims."""
    return [D.copy() if tuple(d) == D.shape[1:] else resize_array(D, d) for d in dims_per_level]


def _cosine_loss(df: np.ndarray, dm: np.ndarray, phi) -> Tensor:
    """``-mean cos(df(x), dm(x + phi(x)))`` for channels-first fields."""
    phi = ad.as_tensor(phi)
    warped = ad.grid_sample(Tensor(dm), phi)
    dot = ad.tsum(warped * df, axis=0)
    nf = np.sqrt(np.maximum(np.sum(df * df, axis=0), 1e-24))
    nw = ad.sqrt(ad.clamp_min(ad.tsum(warped * warped, axis=0), 1e-24))
    return -ad.mean(dot / (nw * nf))


def similarity_dns(D_F, D_M, phi, sigma: float = 1.0) -> Tensor:
    """Negated mean cosine similarity of smoothed (C, H, W, D) descriptor fields."""
    D_F, D_M = np.asarray(D_F, dtype=np.float64), np.asarray(D_M, dtype=np.float64)
    if D_F.shape != D_M.shape:
        raise ValueError(f"descriptor shapes differ: {D_F.shape} vs {D_M.shape}")
    if isinstance(phi, DisplacementField):
        phi = phi.data
    if phi is None:
        phi = np.zeros((3,) + D_F.shape[1:])
    if tuple(ad.as_tensor(phi).shape[1:]) != D_F.shape[1:]:
        raise ValueError("displacement dims do not match descriptor dims")
    return _cosine_loss(gaussian_smooth(D_F, sigma), gaussian_smooth(D_M, sigma), phi)


def regularity(phi) -> Tensor:
    """Mean squared Frobenius norm of the displacement Jacobian."""
    if isinstance(phi, DisplacementField):
        phi = phi.data
    phi = ad.as_tensor(phi)
    J = ad.jacobian(phi)
    n = int(np.prod(phi.shape[1:]))
    return ad.tsum(J * J) * (1.0 / n)


def upsample_field(disp: np.ndarray, new_dims) -> np.ndarray:
    """Trilinear resize of a voxel displacement, rescaling each component."""
    old = disp.shape[1:]
    new_dims = tuple(new_dims)
    if old == new_dims:
        return disp.copy()
    out = resize_array(disp, new_dims)
    for ax in range(3):
        ratio = (new_dims[ax] - 1) / (old[ax] - 1) if old[ax] > 1 else 1.0
        out[ax] *= ratio
    return out


def optimize_level(similarity, phi_init: np.ndarray, learning_rate: float, iterations: int,
                   reg_weight: float, level: int = 0):
    """Adam on ``similarity(phi) + reg_weight * regularity(phi)``.

    ``similarity`` maps a (3, H, W, D) displacement tensor to a scalar tensor.
    Returns the lowest-loss iterate and the per-iteration trace.
    """
    phi_init = np.asarray(phi_init, dtype=np.float64)
    if iterations == 0:
        return phi_init.copy(), []
    dims = phi_init.shape[1:]
    half = np.array([(n - 1) / 2.0 if n > 1 else 1.0 for n in dims]).reshape(3, 1, 1, 1)
    theta = Tensor(phi_init / half, requires_grad=True)
    opt = ad.AdamState(lr=learning_rate)
    best_total, best_phi = np.inf, phi_init.copy()
    trace = []

    def evaluate():
        phi = theta * half
        sim = similarity(phi)
        reg = regularity(phi)
        total = sim + reg * reg_weight
        if not np.isfinite(total.data):
            raise FloatingPointError(
                f"non-finite registration loss at level {level}: similarity={float(sim.data)}, "
                f"regularity={float(reg.data)}")
        return phi, sim, reg, total

    for it in range(iterations + 1):
        if it == iterations:
            with ad.no_grad():
                phi, sim, reg, total = evaluate()
        else:
            phi, sim, reg, total = evaluate()
        t = float(total.data)
        if t < best_total:
            best_total, best_phi = t, phi.data.copy()
        if it == iterations:
            break
        trace.append({"level": level, "iteration": it, "similarity": float(sim.data),
                      "regularity": float(reg.data), "total": t, "best": best_total})
        theta.grad = None
        total.backward()
        ad.adam_step(opt, [theta])
    return best_phi, trace


def _load_network(cfg: RegistrationConfig, model):
    if model is not None:
        return model
    if cfg.checkpoint is None:
        raise ValueError("the dns metric needs a trained network checkpoint")
    return masrnet.load_model(cfg.checkpoint)


def _as_array(v) -> np.ndarray:
    arr = v.data if isinstance(v, Volume) else np.asarray(v)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def embed(v, model) -> np.ndarray:
    """Network descriptors of a volume as a float64 (C, H, W, D) array."""
    params, net_cfg = model
    with ad.no_grad():
        return masrnet.forward(_as_array(v), params, net_cfg, channels_last=False).data.astype(np.float64)


def register(F, M, cfg: RegistrationConfig | None = None, model=None) -> RegistrationResult:
    """Coarse-to-fine registration of moving ``M`` onto fixed ``F``.

    ``model`` is a ``(params, MasrNetConfig)`` pair; when omitted for the dns
    metric it is loaded from ``cfg.checkpoint``.
    """
    cfg = cfg or RegistrationConfig()
    f, m = _as_array(F), _as_array(M)
    if f.shape != m.shape:
        raise ValueError(f"fixed {f.shape} and moving {m.shape} dims differ")
    start = time.perf_counter()
    dims = f.shape
    per_level = level_dims(dims, cfg.scales)

    if cfg.metric == "dns":
        model = _load_network(cfg, model)
        pyr_f = dsir_pyramid(embed(f, model), per_level)
        pyr_m = dsir_pyramid(embed(m, model), per_level)
        smooth_f = [gaussian_smooth(d, cfg.smoothing_sigma) for d in pyr_f]
        smooth_m = [gaussian_smooth(d, cfg.smoothing_sigma) for d in pyr_m]

    disp = np.zeros((3,) + per_level[0])
    trace = []
    for lvl, ldims in enumerate(per_level):
        disp = upsample_field(disp, ldims)
        if cfg.metric == "dns":
            df, dm = smooth_f[lvl], smooth_m[lvl]

            def sim(phi, df=df, dm=dm):
                return _cosine_loss(df, dm, phi)
        elif cfg.metric == "mind":
            mf = baselines.mind(resize_array(f, ldims), channels_last=False)
            mm = baselines.mind(resize_array(m, ldims), channels_last=False)

            def sim(phi, mf=mf, mm=mm):
                return baselines.mind_ssd_descriptors(mf, mm, phi)
        else:
            fl, ml = resize_array(f, ldims), Tensor(resize_array(m, ldims))

            def sim(phi, fl=fl, ml=ml):
                return -baselines.nmi_values(fl, ad.grid_sample(ml, phi), cfg.nmi_bins, cfg.nmi_sigma)

        disp, level_trace = optimize_level(sim, disp, cfg.learning_rates[lvl], cfg.iterations[lvl],
                                           cfg.reg_weights[lvl], level=lvl)
        trace.extend(level_trace)
        if level_trace:
            log.info("level %d dims %s: loss %.5f -> best %.5f", lvl, ldims,
                     level_trace[0]["total"], level_trace[-1]["best"])
    disp = upsample_field(disp, dims)
    return RegistrationResult(DisplacementField(disp), trace, time.perf_counter() - start, per_level)


def descriptor_cost(metric: str, model=None, sigma: float = 1.0, bins: int = 32, parzen: float = 1.0):
    """Cost function ``(fixed, moving) -> float`` at zero displacement.

    For ``dns`` the fixed-image descriptors are cached between calls.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    cache = {}

    def cost(F, M):
        f, m = _as_array(F), _as_array(M)
        with ad.no_grad():
            if metric == "dns":
                key = id(F)
                if key not in cache:
                    cache.clear()
                    cache[key] = (F, gaussian_smooth(embed(f, model), sigma))
                df = cache[key][1]
                dm = gaussian_smooth(embed(m, model), sigma)
                return float(_cosine_loss(df, dm, np.zeros((3,) + f.shape)).data)
            if metric == "mind":
                return float(baselines.mind_ssd(f, m).data)
            return float(baselines.nmi(f, m, None, bins, parzen).data)

    return cost


def write_registration_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "iteration", "similarity", "regularity", "total"])
        for row in trace:
            writer.writerow([row["level"], row["iteration"], repr(row["similarity"]),
                             repr(row["regularity"]), repr(row["total"])])
