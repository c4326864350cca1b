"""Modality-agnostic deep structural representations for multimodal deformable registration."""
from . import augmentation, autodiff, baselines, contrastive, io, masrnet, metrics, phantom, registration, selfsim, volume
from .estimators import InstanceRegistration, MASRNet, MINDTransformer
from .volume import BinaryMask, DisplacementField, LabelVolume, Volume

__version__ = "0.1.0"

__all__ = [
    "augmentation",
    "autodiff",
    "baselines",
    "contrastive",
    "io",
    "masrnet",
    "metrics",
    "phantom",
    "registration",
    "selfsim",
    "volume",
    "MASRNet",
    "MINDTransformer",
    "InstanceRegistration",
    "Volume",
    "DisplacementField",
    "BinaryMask",
    "LabelVolume",
]
