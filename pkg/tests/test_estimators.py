import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dsir import baselines, phantom
from dsir.estimators import InstanceRegistration, MASRNet, MINDTransformer

TINY = dict(n_features=2, widths=(2, 2, 2, 2), n_samples=16, learning_rate=1e-3, max_steps=2, random_state=0)


@pytest.fixture(scope="module")
def image():
    return phantom.generate_phantom(2, (16, 16, 16)).intensity.data


@pytest.fixture(scope="module")
def net(image):
    return MASRNet(**TINY).fit([image, np.roll(image, 2, axis=0)])


class TestMASRNet:
    def test_params_and_clone(self):
        est = MASRNet(**TINY)
        params = est.get_params()
        assert params["n_features"] == 2 and params["random_state"] == 0
        twin = clone(est)
        assert twin.get_params() == params and twin is not est

    def test_not_fitted(self, image):
        with pytest.raises(NotFittedError):
            MASRNet().transform(image)

    def test_fit_transform(self, net, image):
        assert net.n_steps_ == 2 and len(net.trace_) == 2
        out = net.transform(image)
        assert out.shape == (16, 16, 16, 24)
        outs = net.transform([image, image])
        assert isinstance(outs, list) and np.array_equal(outs[0], out)

    def test_reproducible(self, net, image):
        again = MASRNet(**TINY).fit([image, np.roll(image, 2, axis=0)])
        assert np.array_equal(again.transform(image), net.transform(image))

    def test_bad_dims(self, net):
        with pytest.raises(ValueError):
            net.transform(np.zeros((12, 16, 16)))

    def test_save_load(self, net, image, tmp_path):
        net.save(tmp_path / "m.ckpt")
        loaded = MASRNet.load(tmp_path / "m.ckpt")
        assert loaded.n_features == 2
        assert np.array_equal(loaded.transform(image), net.transform(image))


class TestMIND:
    def test_matches_function(self, image):
        est = MINDTransformer().fit(image)
        assert est.n_channels_ == 12
        assert np.array_equal(est.transform(image), baselines.mind(image))

    def test_clone(self):
        assert clone(MINDTransformer(eps=1e-3)).eps == 1e-3


class TestInstanceRegistration:
    def test_not_fitted(self, image):
        with pytest.raises(NotFittedError):
            InstanceRegistration().transform(image)

    def test_fit_transform_mind(self, image):
        moving = np.roll(image, 1, axis=1)
        est = InstanceRegistration(metric="mind", iterations=(20, 10, 10)).fit(moving, image)
        assert est.displacement_.shape == (3, 16, 16, 16)
        assert est.field_.dims == (16, 16, 16)
        warped = est.transform(moving)
        assert np.mean((warped - image) ** 2) < np.mean((moving - image) ** 2)
        assert est.score(moving, image, "mind") > -float(baselines.mind_ssd(image, moving).data)

    def test_network_drives_dns(self, net, image):
        est = InstanceRegistration(metric="dns", network=net, iterations=(2, 2, 2)).fit(image, image)
        assert len(est.trace_) == 6

    def test_dims_mismatch(self, image):
        with pytest.raises(ValueError):
            InstanceRegistration(metric="mind").fit(image, image[:8])

    def test_clone_keeps_config(self):
        est = InstanceRegistration(metric="nmi", nmi_bins=16)
        assert clone(est).get_params()["nmi_bins"] == 16
