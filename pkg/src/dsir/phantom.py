"""Synthetic labelled phantoms and smooth ground-truth deformations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augmentation import AugmentationConfig, apply, sample_transform
from .volume import DisplacementField, LabelVolume, Volume, gaussian_smooth, warp_array

BACKGROUND, ORGAN, TUMOUR, VESSEL = 0, 1, 2, 3
LEGEND = {BACKGROUND: "background", ORGAN: "organ", TUMOUR: "tumour", VESSEL: "vessel"}

__all__ = [
    "Phantom",
    "LEGEND",
    "generate_phantom",
    "synth_deformation",
    "make_modality_pair",
    "invert_field",
    "endpoint_error",
]


@dataclass
class Phantom:
    intensity: Volume
    labels: LabelVolume
    seed: int


def _check_dims(dims) -> tuple[int, int, int]:
    if isinstance(dims, int):
        dims = (dims,) * 3
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 8 or any(n % 8 for n in dims):
        raise ValueError(f"phantom dims must be three multiples of 8, got {dims}")
    return dims


def _low_frequency(rng, dims, sigma) -> np.ndarray:
    noise = gaussian_smooth(rng.standard_normal(dims), sigma)
    return noise / max(np.abs(noise).max(), 1e-12)


def generate_phantom(seed: int, dims=(48, 48, 48)) -> Phantom:
    """Body ellipsoid holding an organ, a tumour inside the organ and a curved vessel.

    Coordinates below are normalised to [-1, 1] along every axis.
    """
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed)
    u = np.stack(np.meshgrid(*[np.linspace(-1.0, 1.0, n) for n in dims], indexing="ij"))

    body_r = rng.uniform(0.8, 0.92, size=3)
    body = np.sum((u / body_r[:, None, None, None]) ** 2, axis=0) <= 1.0

    organ_c = rng.uniform(-0.15, 0.15, size=3)
    organ_r = rng.uniform(0.38, 0.52, size=3)
    rel = (u - organ_c[:, None, None, None]) / organ_r[:, None, None, None]
    organ = (np.sum(rel ** 2, axis=0) <= 1.0) & body

    r_min = organ_r.min()
    tumour_rad = rng.uniform(0.12, 0.17)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    shift = rng.uniform(0.0, 0.6) * (r_min - tumour_rad) * direction
    tumour_c = organ_c + shift
    tumour = np.sum((u - tumour_c[:, None, None, None]) ** 2, axis=0) <= tumour_rad ** 2
    tumour &= organ

    # tube winding along a random axis
    ax = int(rng.integers(3))
    others = [k for k in range(3) if k != ax]
    t = u[ax]
    amp = rng.uniform(0.15, 0.3, size=2)
    freq = rng.uniform(1.5, 3.0, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    offset = rng.uniform(-0.35, 0.35, size=2)
    centre = [offset[k] + amp[k] * np.sin(freq[k] * t + phase[k]) for k in range(2)]
    vessel_rad = rng.uniform(0.06, 0.09)
    vessel = ((u[others[0]] - centre[0]) ** 2 + (u[others[1]] - centre[1]) ** 2 <= vessel_rad ** 2) & body

    labels = np.zeros(dims, dtype=np.int16)
    labels[organ] = ORGAN
    labels[vessel] = VESSEL
    labels[tumour] = TUMOUR

    base = {
        BACKGROUND: rng.uniform(0.2, 0.3),
        ORGAN: rng.uniform(0.45, 0.55),
        TUMOUR: rng.uniform(0.7, 0.8),
        VESSEL: rng.uniform(0.88, 0.95),
    }
    img = np.zeros(dims)
    for lab, val in base.items():
        img[(labels == lab) & body] = val
    img[body] += 0.06 * _low_frequency(rng, dims, 6.0)[body]
    img = gaussian_smooth(img, 0.7)
    img *= 1.0 + 0.03 * rng.standard_normal(dims)
    img = np.clip(img, 0.0, 1.0)
    return Phantom(Volume(img), LabelVolume(labels, dict(LEGEND)), seed)


def _folding_fraction(disp: np.ndarray) -> float:
    from .metrics import jacobian_folding

    return jacobian_folding(DisplacementField(disp))[1]


def synth_deformation(seed: int, dims, amplitude: float, sigma: float = 8.0,
                      max_tries: int = 20) -> DisplacementField:
    """Smooth random field whose largest displacement magnitude is ``amplitude``.

    Candidates with any folding are rejected and redrawn.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    dims = tuple(int(n) for n in dims)
    if amplitude == 0:
        return DisplacementField.zeros(dims)
    rng = np.random.default_rng(seed)
    # smooth on a padded grid then crop, so the field statistics do not depend on the border
    pad = int(np.ceil(3.0 * sigma))
    core = tuple(slice(pad, pad + n) for n in dims)
    big = tuple(n + 2 * pad for n in dims)
    for _ in range(max_tries):
        raw = np.stack([gaussian_smooth(rng.standard_normal(big), sigma)[core] for _ in range(3)])
        mag = np.sqrt(np.sum(raw ** 2, axis=0)).max()
        disp = raw * (amplitude / max(mag, 1e-12))
        if _folding_fraction(disp) == 0.0:
            return DisplacementField(disp)
    raise RuntimeError(f"no fold-free field after {max_tries} tries; amplitude {amplitude} too large for sigma {sigma}")


def make_modality_pair(ph: Phantom, seed: int, noise: float = 0.01) -> tuple[Volume, Volume]:
    """The phantom and a contrast-inverted, non-linearly remapped copy of it."""
    rng = np.random.default_rng(seed)
    tf = sample_transform(AugmentationConfig(n=3, delta=1.0, seed=seed), rng)
    tf.inverted = True
    other = apply(tf, ph.intensity.data)
    other = np.clip(other + noise * rng.standard_normal(other.shape), 0.0, 1.0)
    return ph.intensity, ph.intensity.with_data(other)


def invert_field(phi: DisplacementField, iterations: int = 50) -> DisplacementField:
    """Fixed-point inverse: ``psi(x) = -phi(x + psi(x))``."""
    psi = -phi.data.copy()
    for _ in range(iterations):
        psi = -warp_array(phi.data, psi)
    return DisplacementField(psi)


def endpoint_error(phi: DisplacementField, target: DisplacementField, mask=None) -> float:
    """Mean Euclidean distance between two fields (in voxels), optionally masked."""
    err = np.sqrt(np.sum((phi.data - target.data) ** 2, axis=0))
    if mask is not None:
        m = mask.data if hasattr(mask, "data") else np.asarray(mask, dtype=bool)
        err = err[m]
    return float(err.mean())

