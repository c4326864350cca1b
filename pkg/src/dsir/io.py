"""Persistence: the native volume container, a NIfTI-1 subset and config files.

Native container: ``<path>`` holds little-endian float32 values in row-major
order (channels last for multi-channel kinds); ``<path>.json`` holds dims,
channels, spacing, value kind and, for labels, the legend.

NIfTI: single-file ``.nii``, uncompressed, little-endian, datatypes uint8,
int16 and float32. Orientation (qform/sform) is ignored with a warning.
"""
from __future__ import annotations

import dataclasses
import json
import struct
import warnings
from pathlib import Path

import numpy as np
import yaml

from .volume import DisplacementField, LabelVolume, Volume

KINDS = ("intensity", "label", "displacement", "dsir")

__all__ = [
    "FormatError",
    "read_volume",
    "write_volume",
    "read_nifti",
    "write_nifti",
    "load_config",
    "config_from_dict",
    "KINDS",
]


class FormatError(ValueError):
    """Malformed or unsupported file."""


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _is_nifti(path: Path) -> bool:
    return path.suffix.lower() == ".nii"


def _infer_kind(obj) -> str:
    if isinstance(obj, LabelVolume):
        return "label"
    if isinstance(obj, DisplacementField):
        return "displacement"
    if isinstance(obj, Volume):
        return "intensity"
    arr = np.asarray(obj)
    if arr.ndim == 3:
        return "intensity"
    if arr.ndim == 4:
        return "dsir"
    raise ValueError(f"cannot infer a value kind for an array of shape {arr.shape}")


def write_volume(obj, path, kind: str | None = None, spacing=None) -> None:
    """Write a volume, label map, displacement or (H, W, D, C) DSIR array.

    The format follows the extension: ``.nii`` for NIfTI, anything else for
    the native container.
    """
    path = Path(path)
    kind = kind or _infer_kind(obj)
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if spacing is None:
        spacing = obj.spacing if isinstance(obj, Volume) else (1.0, 1.0, 1.0)
    if _is_nifti(path):
        if kind not in ("intensity", "label"):
            raise FormatError("NIfTI output supports scalar intensity and label volumes only")
        write_nifti(obj, path, spacing)
        return

    legend = None
    if kind == "displacement":
        data = obj.data if isinstance(obj, DisplacementField) else np.asarray(obj)
        payload = np.moveaxis(data, 0, -1)
    elif kind == "label":
        payload = obj.data if isinstance(obj, LabelVolume) else np.asarray(obj)
        legend = {str(k): v for k, v in obj.legend.items()} if isinstance(obj, LabelVolume) else None
    else:
        payload = obj.data if isinstance(obj, Volume) else np.asarray(obj)
    payload = np.ascontiguousarray(payload, dtype="<f4")
    dims = list(payload.shape[:3])
    channels = 1 if payload.ndim == 3 else int(payload.shape[3])
    header = {"dims": dims, "channels": channels, "spacing": [float(s) for s in spacing], "kind": kind}
    if legend is not None:
        header["legend"] = legend
    path.write_bytes(payload.tobytes())
    _sidecar(path).write_text(json.dumps(header, indent=2))


def read_volume(path):
    """Read a file written by :func:`write_volume` or a NIfTI-1 ``.nii`` file.

    Returns ``Volume``, ``LabelVolume``, ``DisplacementField`` or, for DSIRs,
    a float32 (H, W, D, C) array.
    """
    path = Path(path)
    if _is_nifti(path):
        return read_nifti(path)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side}")
    try:
        header = json.loads(side.read_text())
        dims = tuple(int(n) for n in header["dims"])
        channels = int(header["channels"])
        kind = header["kind"]
        spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed sidecar {side}: {exc}") from exc
    if kind not in KINDS:
        raise FormatError(f"unknown value kind {kind!r} in {side}")
    if len(dims) != 3 or min(dims) <= 0 or channels <= 0:
        raise FormatError(f"sidecar dims must be positive, got {dims} x {channels}")
    raw = path.read_bytes()
    expected = int(np.prod(dims)) * channels * 4
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    shape = dims if channels == 1 and kind in ("intensity", "label") else dims + (channels,)
    arr = arr.reshape(shape)
    if kind == "intensity":
        return Volume(arr, spacing)
    if kind == "label":
        legend = {int(k): v for k, v in header.get("legend", {}).items()}
        return LabelVolume(arr.astype(np.int16), legend)
    if kind == "displacement":
        if channels != 3:
            raise FormatError(f"displacement needs 3 channels, got {channels}")
        return DisplacementField(np.ascontiguousarray(np.moveaxis(arr, -1, 0)))
    return arr


# --------------------------------------------------------------------------
# NIfTI-1

_HDR_SIZE = 348
_DTYPES = {2: np.dtype("u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_OFFSETS = {
    "sizeof_hdr": (0, "<i"),
    "dim": (40, "<8h"),
    "datatype": (70, "<h"),
    "bitpix": (72, "<h"),
    "pixdim": (76, "<8f"),
    "vox_offset": (108, "<f"),
    "scl_slope": (112, "<f"),
    "scl_inter": (116, "<f"),
    "qform_code": (252, "<h"),
    "sform_code": (254, "<h"),
    "magic": (344, "4s"),
}


def _field(buf: bytes, name: str):
    off, fmt = _OFFSETS[name]
    val = struct.unpack_from(fmt, buf, off)
    return val if len(val) > 1 else val[0]


def read_nifti(path):
    """Read a single-file NIfTI-1 scalar volume as float (``LabelVolume`` never inferred)."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HDR_SIZE:
        raise FormatError(f"{path} is shorter than a NIfTI-1 header")
    if _field(buf, "sizeof_hdr") != _HDR_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == _HDR_SIZE:
            raise FormatError("big-endian NIfTI is not supported")
        raise FormatError("bad NIfTI header size")
    magic = _field(buf, "magic")
    if magic == b"ni1\x00":
        raise FormatError("two-file NIfTI (magic 'ni1') is not supported")
    if magic != b"n+1\x00":
        raise FormatError(f"bad NIfTI magic {magic!r}")
    dim = _field(buf, "dim")
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d != 1 for d in dim[4:ndim + 1]):
        raise FormatError(f"only 3D scalar volumes are supported, dim = {dim}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) <= 0:
        raise FormatError(f"non-positive NIfTI dims {dims}")
    code = _field(buf, "datatype")
    if code not in _DTYPES:
        raise FormatError(f"unsupported NIfTI datatype {code}")
    dtype = _DTYPES[code]
    offset = int(_field(buf, "vox_offset"))
    if offset < _HDR_SIZE + 4:
        raise FormatError(f"vox_offset {offset} overlaps the header")
    n = int(np.prod(dims))
    if len(buf) < offset + n * dtype.itemsize:
        raise FormatError("truncated NIfTI payload")
    # NIfTI stores the first axis fastest
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=offset).reshape(dims[::-1]).transpose(2, 1, 0)
    pixdim = _field(buf, "pixdim")
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    if _field(buf, "qform_code") or _field(buf, "sform_code"):
        warnings.warn("NIfTI orientation (qform/sform) ignored; using pixdim spacing only", stacklevel=2)
    slope, inter = float(_field(buf, "scl_slope")), float(_field(buf, "scl_inter"))
    data = arr.astype(np.float64) if code != 16 else arr.astype(np.float32)
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter
    meta = {"datatype": int(code), "scl_slope": slope, "scl_inter": inter}
    return Volume(np.ascontiguousarray(data), spacing, meta)


def write_nifti(v, path, spacing=None) -> None:
    """Write a float32 (``Volume``) or int16 (``LabelVolume``) single-file NIfTI-1."""
    if isinstance(v, LabelVolume):
        arr, code = v.data.astype("<i2"), 4
    else:
        arr = v.data if isinstance(v, Volume) else np.asarray(v)
        arr, code = arr.astype("<f4"), 16
    if spacing is None:
        spacing = v.spacing if isinstance(v, Volume) else (1.0, 1.0, 1.0)
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, arr.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in spacing], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("4s", hdr, 344, b"n+1\x00")
    payload = np.ascontiguousarray(arr.transpose(2, 1, 0)).tobytes()
    Path(path).write_bytes(bytes(hdr) + b"\x00" * 4 + payload)


# --------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Parse a JSON or YAML config file into a dict (empty file gives ``{}``)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text) if text.strip() else {}
    else:
        data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise FormatError(f"config {path} must hold a mapping at top level")
    return data


def config_from_dict(cls, data: dict | None, **overrides):
    """Build a config dataclass; keys must match its field names exactly.

    ``None`` overrides are ignored so unset CLI flags fall through.
    """
    names = {f.name for f in dataclasses.fields(cls)}
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**merged)
