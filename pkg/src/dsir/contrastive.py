"""Contrastive training of the structural representation network.

Each step draws a random intensity curve, embeds the image and its remapped
copy, samples foreground locations and applies InfoNCE with the positives of
all other locations serving as negatives.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import masrnet
from .augmentation import AugmentationConfig, apply, sample_transform
from .autodiff import Tensor
from .volume import BinaryMask, Volume

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "ContrastiveBatch",
    "StepStats",
    "TrainResult",
    "foreground_mask",
    "sample_foreground_indices",
    "normalize_rows",
    "info_nce",
    "info_nce_loss",
    "train_step",
    "train",
    "evaluate_alignment",
    "write_trace_csv",
]


@dataclass
class TrainConfig:
    n_samples: int = 8196
    temperature: float = 0.07
    n: int = 3
    delta: float = 0.5
    learning_rate: float = 1e-4
    epochs: int = 1
    max_steps: int | None = None
    crop: int | None = None
    symmetric: bool = False
    clamp_samples: bool = False
    running_window: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.crop is not None and (self.crop <= 0 or self.crop % 8):
            raise ValueError("crop must be a positive multiple of 8")

    @property
    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(n=self.n, delta=self.delta, seed=self.seed)


@dataclass
class ContrastiveBatch:
    indices: np.ndarray
    anchors: Tensor
    positives: Tensor
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("sample indices must be unique")
        for name in ("anchors", "positives"):
            rows = getattr(self, name).data
            if np.max(np.abs(np.linalg.norm(rows, axis=1) - 1.0)) > 1e-5:
                raise ValueError(f"{name} must be unit vectors")


@dataclass
class StepStats:
    loss: float
    pos_sim_mean: float
    neg_sim_mean: float


@dataclass
class TrainResult:
    params: dict
    trace: list[dict] = field(default_factory=list)
    best_running_loss: float = float("inf")

    def running_losses(self, window: int) -> np.ndarray:
        losses = np.array([row["loss"] for row in self.trace])
        if len(losses) < window:
            window = max(len(losses), 1)
        kernel = np.ones(window) / window
        return np.convolve(losses, kernel, mode="valid")


def foreground_mask(I, threshold: float = 0.01) -> BinaryMask:
    """Voxels above ``threshold`` after min-max normalisation."""
    arr = I.data if isinstance(I, Volume) else np.asarray(I)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return BinaryMask(np.zeros(arr.shape, dtype=bool))
    return BinaryMask((arr - lo) / (hi - lo) > threshold)


def sample_foreground_indices(mask, n_samples: int, rng) -> np.ndarray:
    """Distinct flat indices drawn uniformly from the true voxels of ``mask``."""
    data = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    candidates = np.flatnonzero(data)
    if len(candidates) < n_samples:
        raise ValueError(f"foreground has {len(candidates)} voxels, {n_samples} samples requested")
    return rng.choice(candidates, size=n_samples, replace=False)


def normalize_rows(x, floor: float = 1e-12) -> Tensor:
    x = ad.as_tensor(x)
    sq = ad.tsum(x * x, axis=1, keepdims=True)
    norm = ad.sqrt(ad.clamp_min(sq, floor * floor))
    return x / ad.broadcast_to(norm, x.shape)


def info_nce(anchors, positives, temperature: float, symmetric: bool = False) -> Tensor:
    """Mean InfoNCE over rows of unit vectors.

    Row ``i`` of ``positives`` is the positive of anchor ``i``; every other
    row is a negative.
    """
    anchors, positives = ad.as_tensor(anchors), ad.as_tensor(positives)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ValueError(f"anchors {anchors.shape} and positives {positives.shape} must be equal (N, C)")
    n = anchors.shape[0]
    if n < 2:
        raise ValueError("InfoNCE needs at least two samples")
    logits = ad.matmul(anchors, ad.transpose(positives, (1, 0))) * (1.0 / temperature)
    eye = np.eye(n, dtype=logits.dtype)
    pos = ad.tsum(logits * eye, axis=1)
    loss = ad.mean(ad.logsumexp(logits, axis=1) - pos)
    if symmetric:
        loss_t = ad.mean(ad.logsumexp(logits, axis=0) - pos)
        loss = (loss + loss_t) * 0.5
    return loss


def info_nce_loss(batch: ContrastiveBatch, symmetric: bool = False) -> Tensor:
    return info_nce(batch.anchors, batch.positives, batch.temperature, symmetric)


def _gather(D: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of a (C, H, W, D) field at flat spatial indices, as (N, C)."""
    flat = ad.reshape(D, (D.shape[0], -1))
    return ad.transpose(ad.take(flat, idx, axis=1), (1, 0))


def train_step(I, params, opt: ad.AdamState, cfg: TrainConfig, rng, net_cfg=None,
               mask=None) -> StepStats:
    """One augmentation + InfoNCE + Adam step. ``params`` are updated in place."""
    net_cfg = net_cfg or masrnet.MasrNetConfig()
    arr = I.data if isinstance(I, Volume) else np.asarray(I)
    if mask is not None:
        mask = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if cfg.crop is not None and cfg.crop < max(arr.shape):
        starts = [int(rng.integers(0, n - cfg.crop + 1)) for n in arr.shape]
        window = tuple(slice(s, s + cfg.crop) for s in starts)
        arr = arr[window]
        if mask is not None:
            mask = mask[window]
    if mask is None:
        mask = foreground_mask(arr).data
    tf = sample_transform(cfg.augmentation, rng)
    aug = apply(tf, arr)
    n_samples = cfg.n_samples
    if cfg.clamp_samples:
        n_samples = max(2, min(n_samples, int(mask.sum())))
    idx = sample_foreground_indices(mask, n_samples, rng)

    plist = list(params.values())
    ad.zero_grads(plist)
    D = masrnet.forward(arr, params, net_cfg, channels_last=False)
    D_aug = masrnet.forward(aug, params, net_cfg, channels_last=False)
    anchors = normalize_rows(_gather(D, idx))
    positives = normalize_rows(_gather(D_aug, idx))
    loss = info_nce(anchors, positives, cfg.temperature, cfg.symmetric)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite contrastive loss")
    loss.backward()
    opt.lr = cfg.learning_rate
    ad.adam_step(opt, plist)

    sims = anchors.data @ positives.data.T
    n = sims.shape[0]
    pos = float(np.trace(sims)) / n
    neg = float(sims.sum() - np.trace(sims)) / (n * (n - 1))
    return StepStats(float(loss.data), pos, neg)


def train(corpus, cfg: TrainConfig, net_cfg=None, params=None, checkpoint_dir=None,
          masks=None) -> TrainResult:
    """Run ``cfg.epochs`` shuffled passes over ``corpus`` (capped at ``max_steps``).

    With ``checkpoint_dir`` the best (lowest running loss) and the last
    parameters are written as ``best.ckpt`` and ``last.ckpt``; a run shorter
    than the running window writes the last parameters to both.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    net_cfg = net_cfg or masrnet.MasrNetConfig()
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = masrnet.init_params(net_cfg, seed=cfg.seed)
    opt = ad.AdamState(lr=cfg.learning_rate)
    result = TrainResult(params)
    window = []
    step = 0
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    meta = {"train": asdict(cfg)}
    for epoch in range(cfg.epochs):
        for k in rng.permutation(len(corpus)):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            mask = None if masks is None else masks[k]
            stats = train_step(corpus[k], params, opt, cfg, rng, net_cfg, mask)
            step += 1
            result.trace.append({"step": step, "epoch": epoch, **asdict(stats)})
            window.append(stats.loss)
            if len(window) > cfg.running_window:
                window.pop(0)
            running = float(np.mean(window))
            if step % 10 == 0:
                log.info("step %d loss %.4f running %.4f pos %.3f neg %.3f",
                         step, stats.loss, running, stats.pos_sim_mean, stats.neg_sim_mean)
            if len(window) == cfg.running_window and running < result.best_running_loss:
                result.best_running_loss = running
                if ckpt_dir is not None:
                    masrnet.save_model(ckpt_dir / "best.ckpt", params, net_cfg, meta)
    if ckpt_dir is not None:
        masrnet.save_model(ckpt_dir / "last.ckpt", params, net_cfg, meta)
        # runs shorter than one window never rank a best
        if not np.isfinite(result.best_running_loss):
            masrnet.save_model(ckpt_dir / "best.ckpt", params, net_cfg, meta)
    return result


def evaluate_alignment(volumes, params, net_cfg, aug_cfg: AugmentationConfig, n_samples: int = 512,
                       rng=None) -> tuple[float, float]:
    """Mean positive-pair and mismatched-location cosine over freshly augmented volumes.

    Each volume is paired with one augmented copy; positives compare the same
    voxel, mismatched pairs compare distinct sampled foreground voxels.
    """
    rng = np.random.default_rng(rng)
    pos, neg = [], []
    with ad.no_grad():
        for v in volumes:
            arr = v.data if isinstance(v, Volume) else np.asarray(v)
            aug = apply(sample_transform(aug_cfg, rng), arr)
            idx = sample_foreground_indices(foreground_mask(arr), n_samples, rng)
            a = normalize_rows(_gather(masrnet.forward(arr, params, net_cfg, channels_last=False), idx)).data
            b = normalize_rows(_gather(masrnet.forward(aug, params, net_cfg, channels_last=False), idx)).data
            sims = a @ b.T
            n = sims.shape[0]
            pos.append(float(np.trace(sims)) / n)
            neg.append(float(sims.sum() - np.trace(sims)) / (n * (n - 1)))
    return float(np.mean(pos)), float(np.mean(neg))


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "pos_sim_mean", "neg_sim_mean"])
        for row in trace:
            writer.writerow([row["step"], repr(row["loss"]), repr(row["pos_sim_mean"]),
                             repr(row["neg_sim_mean"])])
