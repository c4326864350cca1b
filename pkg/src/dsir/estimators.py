"""scikit-learn style wrappers around the network, the MIND baseline and registration."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import baselines, contrastive, masrnet, registration
from ._validation import check_random_state, check_same_dims, check_volume, check_volumes
from .autodiff import no_grad
from .volume import DisplacementField, warp_array

__all__ = ["MASRNet", "MINDTransformer", "InstanceRegistration"]


class MASRNet(TransformerMixin, BaseEstimator):
    """Structural representation network trained contrastively on unlabelled volumes.

    ``fit`` takes a sequence of (H, W, D) volumes with dims divisible by 8;
    ``transform`` maps each to an (H, W, D, n_descriptor) descriptor field.
    """

    def __init__(self, n_features=16, widths=(8, 16, 32, 64), n_descriptor=24, n_samples=8196,
                 temperature=0.07, n=3, delta=0.5, learning_rate=1e-4, epochs=1, max_steps=None,
                 crop=None, symmetric=False, random_state=None):
        self.n_features = n_features
        self.widths = widths
        self.n_descriptor = n_descriptor
        self.n_samples = n_samples
        self.temperature = temperature
        self.n = n
        self.delta = delta
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.crop = crop
        self.symmetric = symmetric
        self.random_state = random_state

    def _net_config(self) -> masrnet.MasrNetConfig:
        return masrnet.MasrNetConfig(n_features=self.n_features, widths=tuple(self.widths),
                                     n_descriptor=self.n_descriptor)

    def fit(self, X, y=None):
        vols, _ = check_volumes(X, multiple_of=8)
        seed = check_random_state(self.random_state)
        cfg = contrastive.TrainConfig(
            n_samples=self.n_samples, temperature=self.temperature, n=self.n, delta=self.delta,
            learning_rate=self.learning_rate, epochs=self.epochs, max_steps=self.max_steps,
            crop=self.crop, symmetric=self.symmetric, seed=seed)
        net_cfg = self._net_config()
        result = contrastive.train(vols, cfg, net_cfg)
        self.params_ = result.params
        self.config_ = net_cfg
        self.trace_ = result.trace
        self.n_steps_ = len(result.trace)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        vols, single = check_volumes(X, multiple_of=8)
        with no_grad():
            out = [masrnet.forward(v, self.params_, self.config_).data for v in vols]
        return out[0] if single else out

    @property
    def model_(self):
        check_is_fitted(self, "params_")
        return self.params_, self.config_

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        masrnet.save_model(path, self.params_, self.config_)

    @classmethod
    def load(cls, path) -> "MASRNet":
        params, cfg = masrnet.load_model(path)
        est = cls(n_features=cfg.n_features, widths=tuple(cfg.widths), n_descriptor=cfg.n_descriptor)
        est.params_, est.config_, est.trace_, est.n_steps_ = params, cfg, [], 0
        return est


class MINDTransformer(TransformerMixin, BaseEstimator):
    """Stateless MIND descriptor extraction; output is (H, W, D, 12)."""

    def __init__(self, eps=1e-6):
        self.eps = eps

    def fit(self, X, y=None):
        check_volumes(X)
        self.n_channels_ = 12
        return self

    def transform(self, X):
        vols, single = check_volumes(X)
        out = [baselines.mind(v, self.eps) for v in vols]
        return out[0] if single else out

    def __sklearn_is_fitted__(self):
        return True


class InstanceRegistration(BaseEstimator):
    """Per-pair optimisation of a dense displacement aligning a moving to a fixed volume.

    ``fit(moving, fixed)`` stores ``displacement_`` (3, H, W, D) in voxels;
    ``transform(X)`` resamples any volume on the moving grid into the fixed frame.
    ``network`` is a fitted :class:`MASRNet` and takes precedence over ``checkpoint``.
    """

    def __init__(self, metric="dns", scales=(0.5, 0.75, 1.0), learning_rates=(1e-2, 5e-3, 3e-3),
                 iterations=(100, 80, 50), reg_weights=(0.6, 0.5, 0.4), smoothing_sigma=1.0,
                 checkpoint=None, network=None, nmi_bins=32, nmi_sigma=1.0):
        self.metric = metric
        self.scales = scales
        self.learning_rates = learning_rates
        self.iterations = iterations
        self.reg_weights = reg_weights
        self.smoothing_sigma = smoothing_sigma
        self.checkpoint = checkpoint
        self.network = network
        self.nmi_bins = nmi_bins
        self.nmi_sigma = nmi_sigma

    def _config(self) -> registration.RegistrationConfig:
        return registration.RegistrationConfig(
            metric=self.metric, levels=len(self.scales), scales=tuple(self.scales),
            learning_rates=tuple(self.learning_rates), iterations=tuple(self.iterations),
            reg_weights=tuple(self.reg_weights), smoothing_sigma=self.smoothing_sigma,
            checkpoint=self.checkpoint, nmi_bins=self.nmi_bins, nmi_sigma=self.nmi_sigma)

    def fit(self, X, y):
        """Register moving ``X`` onto fixed ``y``."""
        moving = check_volume(X, "moving")
        fixed = check_volume(y, "fixed")
        check_same_dims(fixed, moving)
        cfg = self._config()
        model = self.network.model_ if self.network is not None else None
        result = registration.register(fixed, moving, cfg, model=model)
        self.result_ = result
        self.displacement_ = result.field.data
        self.trace_ = result.trace
        return self

    def transform(self, X):
        check_is_fitted(self, "displacement_")
        arr = check_volume(X)
        if arr.shape != self.displacement_.shape[1:]:
            raise ValueError(f"volume dims {arr.shape} differ from the field dims {self.displacement_.shape[1:]}")
        return warp_array(arr, self.displacement_)

    @property
    def field_(self) -> DisplacementField:
        check_is_fitted(self, "displacement_")
        return DisplacementField(self.displacement_)

    def score(self, X, y, metric=None):
        """Similarity of the warped moving ``X`` to fixed ``y`` (higher is better)."""
        warped = self.transform(X)
        fixed = check_volume(y, "fixed")
        metric = metric or ("nmi" if self.metric == "dns" else self.metric)
        with no_grad():
            if metric == "mind":
                return -float(baselines.mind_ssd(fixed, warped).data)
            return float(baselines.nmi(fixed, np.clip(warped, 0.0, 1.0), None, self.nmi_bins, self.nmi_sigma).data)
