"""Modality-agnostic structural representation network.

The pipeline is ``extract_features -> dns_dual -> squeeze``:

* a 4-level encoder-decoder (blurpool down, trilinear up, skip concatenation)
  turns an intensity volume into a C_h-channel feature map ``h``;
* deep neighbourhood self-similarity compares features of the 12 sqrt(2)
  neighbour pairs of a direct and a dilated 6-neighbourhood, giving a
  (C_h, H, W, D, 24) map;
* a linear map collapses the C_h axis and a two-layer convolution head
  produces the final C_d-channel descriptor.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .selfsim import DIRECT, NeighbourhoodLayout, self_similarity
from .volume import Volume

__all__ = [
    "MasrNetConfig",
    "init_params",
    "params_from_arrays",
    "extract_features",
    "dns",
    "dns_dual",
    "squeeze",
    "forward",
    "save_model",
    "load_model",
    "N_DNS",
]

N_DNS = 24


@dataclass(frozen=True)
class MasrNetConfig:
    n_features: int = 16
    widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    n_descriptor: int = 24
    slope: float = 0.2
    dilation: int = 2
    eps: float = 1e-6

    def __post_init__(self):
        if len(self.widths) != 4:
            raise ValueError("widths must list four encoder levels")
        if self.n_features < 1 or self.n_descriptor < 1:
            raise ValueError("channel counts must be positive")

    @property
    def layouts(self) -> tuple[NeighbourhoodLayout, NeighbourhoodLayout]:
        return DIRECT, NeighbourhoodLayout.dilated(self.dilation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MasrNetConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _conv_shapes(cfg: MasrNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    w0, w1, w2, w3 = cfg.widths
    return [
        ("enc0a", (w0, 1, 3, 3, 3)),
        ("enc0b", (w0, w0, 3, 3, 3)),
        ("enc1", (w1, w0, 3, 3, 3)),
        ("enc2", (w2, w1, 3, 3, 3)),
        ("enc3", (w3, w2, 3, 3, 3)),
        ("dec2", (w2, w3 + w2, 3, 3, 3)),
        ("dec1", (w1, w2 + w1, 3, 3, 3)),
        ("dec0", (w0, w1 + w0, 3, 3, 3)),
        ("feat", (cfg.n_features, w0, 1, 1, 1)),
        ("head0", (N_DNS, N_DNS, 3, 3, 3)),
        ("head1", (cfg.n_descriptor, N_DNS, 3, 3, 3)),
    ]


def init_params(cfg: MasrNetConfig, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, Tensor]":
    """He-initialised parameters, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    gain = np.sqrt(2.0 / (1.0 + cfg.slope ** 2))
    for name, shape in _conv_shapes(cfg):
        fan_in = int(np.prod(shape[1:]))
        params[f"{name}.weight"] = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
        params[f"{name}.bias"] = np.zeros(shape[0])
    params["squeeze.weight"] = (1.0 + 0.1 * rng.standard_normal((1, cfg.n_features))) / cfg.n_features
    params["squeeze.bias"] = np.zeros(1)
    return params_from_arrays(params, dtype)


def params_from_arrays(arrays: dict, dtype=np.float32) -> "OrderedDict[str, Tensor]":
    return OrderedDict((k, ad.as_parameter(v, dtype=dtype, name=k)) for k, v in arrays.items())


def _conv(x, params, name, act=None):
    y = ad.conv3d(x, params[f"{name}.weight"], params[f"{name}.bias"])
    return ad.leaky_relu(y, act) if act is not None else y


def _as_input(I, dtype) -> Tensor:
    arr = I.data if isinstance(I, Volume) else np.asarray(I)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D intensity volume, got shape {arr.shape}")
    if any(n % 8 for n in arr.shape):
        raise ValueError(f"all dims must be divisible by 8, got {arr.shape}")
    return Tensor(arr[None].astype(dtype, copy=False))


def _dtype(params):
    return next(iter(params.values())).dtype


def extract_features(I, params, cfg: MasrNetConfig) -> Tensor:
    """Encoder-decoder feature map ``h`` of shape (C_h, H, W, D)."""
    x = _as_input(I, _dtype(params))
    s = cfg.slope
    e0 = _conv(_conv(x, params, "enc0a", s), params, "enc0b", s)
    e1 = _conv(ad.blurpool3d(e0), params, "enc1", s)
    e2 = _conv(ad.blurpool3d(e1), params, "enc2", s)
    e3 = _conv(ad.blurpool3d(e2), params, "enc3", s)
    d = e3
    for skip, name in ((e2, "dec2"), (e1, "dec1"), (e0, "dec0")):
        up = ad.trilinear_resize(d, skip.shape[1:])
        d = _conv(ad.concat([up, skip], axis=0), params, name, s)
    return _conv(d, params, "feat")


def dns(h, layout: NeighbourhoodLayout, eps: float = 1e-6) -> Tensor:
    """Self-similarity of feature map ``h`` over one layout, (C_h, H, W, D, 12)."""
    return self_similarity(h, layout, patch_radius=0, eps=eps)


def dns_dual(h, cfg: MasrNetConfig | None = None) -> Tensor:
    """Direct and dilated DNS concatenated on the last axis, (C_h, H, W, D, 24)."""
    cfg = cfg or MasrNetConfig()
    direct, dilated = cfg.layouts
    return ad.concat([dns(h, direct, cfg.eps), dns(h, dilated, cfg.eps)], axis=4)


def squeeze(hs, params, cfg: MasrNetConfig, return_embedding: bool = False):
    """Collapse the feature axis then run the convolution head.

    Returns the descriptor as (C_d, H, W, D); with ``return_embedding`` also
    the compact embedding as (H, W, D, 24).
    """
    hs = ad.as_tensor(hs)
    if hs.ndim != 5 or hs.shape[-1] != N_DNS:
        raise ValueError(f"expected a (C_h, H, W, D, {N_DNS}) map, got {hs.shape}")
    if hs.shape[0] != params["squeeze.weight"].shape[1]:
        raise ValueError(f"feature axis {hs.shape[0]} does not match squeeze weights")
    moved = ad.transpose(hs, (1, 2, 3, 4, 0))
    hc = ad.linear(moved, params["squeeze.weight"], params["squeeze.bias"])
    hc = ad.reshape(hc, hs.shape[1:])
    x = ad.transpose(hc, (3, 0, 1, 2))
    x = _conv(x, params, "head0", cfg.slope)
    out = _conv(x, params, "head1")
    return (out, hc) if return_embedding else out


def forward(I, params, cfg: MasrNetConfig, channels_last: bool = True) -> Tensor:
    """Full network: intensity volume to descriptor field.

    The result is (H, W, D, C_d) by default, (C_d, H, W, D) otherwise.
    """
    out = squeeze(dns_dual(extract_features(I, params, cfg), cfg), params, cfg)
    return ad.transpose(out, (1, 2, 3, 0)) if channels_last else out


def save_model(path, params, cfg: MasrNetConfig, extra: dict | None = None) -> None:
    meta = {"model": "masrnet", "config": cfg.to_dict()}
    if extra:
        meta.update(extra)
    ad.save_checkpoint(path, params, meta)


def load_model(path, dtype=np.float32):
    arrays, meta = ad.load_checkpoint(path)
    cfg = MasrNetConfig.from_dict(meta.get("config", {}))
    expected = {f"{n}.{k}" for n, _ in _conv_shapes(cfg) for k in ("weight", "bias")}
    expected |= {"squeeze.weight", "squeeze.bias"}
    if set(arrays) != expected:
        raise ad.CheckpointError("checkpoint parameters do not match the recorded architecture")
    return params_from_arrays(arrays, dtype), cfg
