import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsir.augmentation import (
    LUT_SIZE,
    AugmentationConfig,
    BezierTransform,
    apply,
    bernstein,
    bezier_eval,
    sample_transform,
)
from dsir.volume import Volume

IDENTITY = BezierTransform(np.array([[0.0, 0.0], [1.0, 1.0]]))


class TestBernstein:
    def test_linear(self):
        assert bernstein(0, 1, 0.5) == 0.5

    def test_cubic(self):
        assert bernstein(1, 3, 0.5) == pytest.approx(0.375, abs=1e-15)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_partition_of_unity(self, n):
        t = np.linspace(0, 1, 37)
        total = sum(bernstein(i, n, t) for i in range(n + 1))
        assert np.max(np.abs(total - 1.0)) < 1e-12

    def test_index_range(self):
        with pytest.raises(ValueError):
            bernstein(4, 3, 0.5)


class TestSampleTransform:
    def test_n1_identity(self):
        tf = sample_transform(AugmentationConfig(n=1, delta=0.0), np.random.default_rng(0))
        assert np.allclose(tf.lut, np.linspace(0, 1, LUT_SIZE), atol=1e-12)

    def test_delta_zero_never_inverts(self):
        rng = np.random.default_rng(1)
        assert not any(sample_transform(AugmentationConfig(delta=0.0), rng).inverted for _ in range(200))

    def test_delta_one_always_inverts(self):
        rng = np.random.default_rng(2)
        assert all(sample_transform(AugmentationConfig(delta=1.0), rng).inverted for _ in range(50))

    def test_inversion_rate(self):
        rng = np.random.default_rng(3)
        rate = np.mean([sample_transform(AugmentationConfig(delta=0.5), rng).inverted for _ in range(2000)])
        assert abs(rate - 0.5) < 0.05

    def test_seed_determinism(self):
        a = sample_transform(AugmentationConfig(seed=7))
        b = sample_transform(AugmentationConfig(seed=7))
        assert np.array_equal(a.control_points, b.control_points)
        assert a.inverted == b.inverted
        assert np.array_equal(a.lut, b.lut)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
    def test_lut_invariants(self, seed, n):
        tf = sample_transform(AugmentationConfig(n=n), np.random.default_rng(seed))
        pts = tf.control_points
        assert len(pts) == n + 1
        assert np.array_equal(pts[0], [0, 0]) and np.array_equal(pts[-1], [1, 1])
        assert np.all(np.diff(pts, axis=0) >= 0)
        assert np.all(np.diff(tf.lut) >= 0)
        assert tf.lut[0] == 0.0 and tf.lut[-1] == 1.0

    def test_rejects_unsorted_points(self):
        with pytest.raises(ValueError):
            BezierTransform(np.array([[0, 0], [0.6, 0.2], [0.4, 0.5], [1, 1]]))

    def test_rejects_unpinned(self):
        with pytest.raises(ValueError):
            BezierTransform(np.array([[0.1, 0.0], [1.0, 1.0]]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentationConfig(n=0)
        with pytest.raises(ValueError):
            AugmentationConfig(delta=1.5)

    def test_serialisation_round_trip(self):
        tf = sample_transform(AugmentationConfig(seed=11))
        back = BezierTransform.from_dict(json.loads(json.dumps(tf.to_dict())))
        assert np.array_equal(back.lut, tf.lut) and back.inverted == tf.inverted


class TestBezierEval:
    def test_identity(self):
        assert bezier_eval(IDENTITY, 0.3) == pytest.approx(0.3, abs=1e-12)

    def test_quadratic_midpoint(self):
        tf = BezierTransform(np.array([[0.0, 0.0], [0.25, 0.75], [1.0, 1.0]]))
        # B(0.5) = 0.25 P0 + 0.5 P1 + 0.25 P2 = (0.375, 0.625)
        assert bezier_eval(tf, 0.375) == pytest.approx(0.625, abs=1e-4)

    def test_cubic_curve_points(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.6], [0.5, 0.9], [1.0, 1.0]])
        tf = BezierTransform(pts)
        for t in (0.1, 0.3, 0.7, 0.9):
            b = sum(bernstein(i, 3, t) * pts[i] for i in range(4))
            assert bezier_eval(tf, b[0]) == pytest.approx(b[1], abs=2e-3)

    def test_endpoints(self):
        tf = sample_transform(AugmentationConfig(seed=5))
        assert bezier_eval(tf, 0.0) == 0.0
        assert bezier_eval(tf, 1.0) == 1.0

    def test_clamps(self):
        tf = sample_transform(AugmentationConfig(seed=6))
        assert bezier_eval(tf, -0.5) == 0.0 and bezier_eval(tf, 1.5) == 1.0


class TestApply:
    def test_identity_no_inversion(self):
        I = np.random.default_rng(0).random((4, 5, 6))
        assert np.allclose(apply(IDENTITY, I), I, atol=1e-12)

    def test_identity_inversion(self):
        I = np.random.default_rng(1).random((4, 5, 6))
        tf = BezierTransform(IDENTITY.control_points, inverted=True)
        assert np.allclose(apply(tf, I), 1.0 - I, atol=1e-12)

    def test_monotone_order_preserved(self):
        rng = np.random.default_rng(2)
        I = rng.random((6, 6, 6))
        for _ in range(20):
            tf = sample_transform(AugmentationConfig(delta=0.0), rng)
            out = apply(tf, I).ravel()
            order = np.argsort(I.ravel())
            assert np.all(np.diff(out[order]) >= 0)

    def test_level_sets_preserved(self):
        I = np.repeat(np.linspace(0, 1, 4), 16).reshape(4, 4, 4)
        out = apply(sample_transform(AugmentationConfig(seed=3)), I)
        for v in np.unique(I):
            assert len(np.unique(out[I == v])) == 1

    def test_geometry_preserved(self):
        v = Volume(np.random.default_rng(4).random((3, 4, 5)), spacing=(1.5, 2.0, 0.5))
        out = apply(sample_transform(AugmentationConfig(seed=4)), v)
        assert out.dims == v.dims and out.spacing == v.spacing

    def test_unnormalised_input(self):
        with pytest.raises(ValueError):
            apply(IDENTITY, np.full((2, 2, 2), 1.5))
