import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from dsir import metrics
from dsir.volume import DisplacementField


def mask_with(dims, *points):
    m = np.zeros(dims, dtype=bool)
    for p in points:
        m[p] = True
    return m


class TestDice:
    def test_equal(self):
        m = mask_with((4, 4, 4), (1, 1, 1), (2, 2, 2))
        assert metrics.dice(m, m) == 1.0

    def test_disjoint(self):
        assert metrics.dice(mask_with((4, 4, 4), (0, 0, 0)), mask_with((4, 4, 4), (3, 3, 3))) == 0.0

    def test_half_overlap(self):
        a = mask_with((4, 4, 4), (0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3))
        b = mask_with((4, 4, 4), (0, 0, 0), (0, 0, 1), (1, 0, 2), (1, 0, 3))
        assert metrics.dice(a, b) == 0.5

    def test_both_empty(self):
        assert metrics.dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 1.0

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            metrics.dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(bool, (4, 3, 3)), arrays(bool, (4, 3, 3)))
    def test_symmetric_and_bounded(self, a, b):
        d = metrics.dice(a, b)
        assert d == metrics.dice(b, a) and 0.0 <= d <= 1.0


class TestHD95:
    def test_identical(self):
        m = np.zeros((6, 6, 6), dtype=bool)
        m[1:4, 2:5, 1:3] = True
        assert metrics.hd95(m, m) == 0.0

    def test_single_voxels(self):
        a = mask_with((8, 8, 8), (1, 2, 2))
        b = mask_with((8, 8, 8), (4, 2, 2))
        assert metrics.hd95(a, b) == 3.0

    def test_spacing(self):
        a = mask_with((8, 8, 8), (1, 2, 2))
        b = mask_with((8, 8, 8), (4, 2, 2))
        assert metrics.hd95(a, b, spacing=(2.0, 1.0, 1.0)) == 6.0

    def test_empty(self):
        with pytest.raises(ValueError):
            metrics.hd95(np.zeros((3, 3, 3), bool), mask_with((3, 3, 3), (1, 1, 1)))

    def test_symmetric_brute_force(self):
        rng = np.random.default_rng(0)
        a = rng.random((7, 7, 7)) > 0.6
        b = rng.random((7, 7, 7)) > 0.6
        assert metrics.hd95(a, b) == metrics.hd95(b, a)
        sa = np.argwhere(metrics.surface_voxels(a))
        sb = np.argwhere(metrics.surface_voxels(b))
        dab = [np.min(np.linalg.norm(sb - p, axis=1)) for p in sa]
        dba = [np.min(np.linalg.norm(sa - p, axis=1)) for p in sb]
        d = np.sort(dab + dba)
        assert metrics.hd95(a, b) == pytest.approx(d[int(np.ceil(0.95 * len(d))) - 1], abs=1e-12)

    def test_surface_of_cube(self):
        m = np.zeros((5, 5, 5), dtype=bool)
        m[1:4, 1:4, 1:4] = True
        s = metrics.surface_voxels(m)
        assert s.sum() == 26 and not s[2, 2, 2]


class TestJacobian:
    def test_identity(self):
        det, fold = metrics.jacobian_folding(DisplacementField.zeros((5, 5, 5)))
        assert np.all(det == 1.0) and fold == 0.0

    def test_scaling(self):
        phi = 0.5 * np.indices((6, 6, 6)).astype(float)
        det, fold = metrics.jacobian_folding(DisplacementField(phi))
        assert np.max(np.abs(det[1:-1, 1:-1, 1:-1] - 3.375)) < 1e-6
        assert fold == 0.0

    def test_reflection(self):
        phi = np.zeros((3, 6, 6, 6))
        phi[0] = -2.0 * np.indices((6, 6, 6))[0]
        det, fold = metrics.jacobian_folding(DisplacementField(phi))
        assert np.allclose(det[1:-1, 1:-1, 1:-1], -1.0)
        assert fold == 100.0

    def test_translation(self):
        phi = np.ones((3, 5, 5, 5)) * 2.7
        assert metrics.jacobian_folding(DisplacementField(phi))[1] == 0.0

    def test_zero_det_counts_as_folding(self):
        phi = np.zeros((3, 5, 5, 5))
        phi[1] = -1.0 * np.indices((5, 5, 5))[1]
        assert metrics.jacobian_folding(DisplacementField(phi))[1] == 100.0


class TestHeatmap:
    def test_self_similarity_peak(self):
        D = np.random.default_rng(1).standard_normal((5, 5, 5, 6))
        heat = metrics.similarity_heatmap(D, D, (2, 3, 1))
        assert heat.data[2, 3, 1] == pytest.approx(1.0, abs=1e-12)
        assert np.all(heat.data >= -1 - 1e-9) and np.all(heat.data <= 1 + 1e-9)

    def test_orthogonal(self):
        a = np.zeros((3, 3, 3, 2))
        a[..., 0] = 1
        b = np.zeros((3, 3, 3, 2))
        b[..., 1] = 2
        assert np.all(metrics.similarity_heatmap(a, b, (0, 0, 0)).data == 0.0)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            metrics.similarity_heatmap(np.ones((2, 2, 2, 3)), np.ones((2, 2, 2, 4)), (0, 0, 0))


class TestLandscape:
    def test_grid_size(self):
        grid = metrics.rotation_grid()
        assert len(grid) == 169 and (0.0, 0.0) in grid
        assert grid[0] == (-30.0, -30.0) and grid[-1] == (30.0, 30.0)

    def test_rotation_zero_is_identity(self):
        v = np.random.default_rng(2).random((6, 6, 6))
        assert np.array_equal(metrics.rotate_volume(v, 0, 0), v)

    def test_rotation_90_permutes_axes(self):
        v = np.random.default_rng(3).random((5, 5, 5))
        out = metrics.rotate_volume(v, 90, 0)
        assert np.allclose(out, np.rot90(v, k=1, axes=(1, 2)), atol=1e-12) or \
            np.allclose(out, np.rot90(v, k=-1, axes=(1, 2)), atol=1e-12)

    def test_rotation_matrix_orthonormal(self):
        R = metrics.rotation_matrix(17.0, -23.0)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_landscape_rows_and_csv(self, tmp_path):
        v = np.random.default_rng(4).random((6, 6, 6))
        grid = metrics.rotation_grid(-5, 5, 5)
        rows = metrics.loss_landscape(v, v, lambda f, m: float(np.mean((f - m) ** 2)), grid)
        assert len(rows) == 9
        assert min(rows, key=lambda r: r[2])[:2] == (0.0, 0.0)
        metrics.write_landscape_csv(rows, tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().splitlines()[0] == "angle1,angle2,cost"
